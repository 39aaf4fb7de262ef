import numpy as np
import pytest

from conftest import archs_with_first_ops
from mipbpe.cellspace import K, edge_count, genotype_from_matrix, random_genotype
from mipbpe.evaluators import (
    EXIT,
    OK,
    PARSE,
    TIMEOUT,
    ArchSet,
    EvalResult,
    EvaluatorError,
    ExternalEvaluator,
    SurrogateEvaluator,
    SurrogateModel,
    render_bpe_cfg,
    surrogate_evaluate,
    surrogate_true_quality,
)
from mipbpe.hyperspace import BpeConfig, config_cost, named_config
from mipbpe.ranking import spearman


def test_archset_invariants():
    g = random_genotype(2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ArchSet((), ())
    with pytest.raises(ValueError):
        ArchSet((g, g), ("a", "a"))
    archs = ArchSet.sample(5, 2, np.random.default_rng(1))
    assert ArchSet.from_dict(archs.to_dict()) == archs


def test_eval_result_rejects_fabricated_scores():
    with pytest.raises(ValueError):
        EvalResult([0.3], 1.0, ["timeout"])
    with pytest.raises(ValueError):
        EvalResult([None], 1.0, [OK])
    r = EvalResult([0.1, None, 0.3, 0.2, 0.5], 1.0, [OK, TIMEOUT, OK, OK, OK])
    assert r.effective_n == 4 and r.valid()
    assert not EvalResult([0.1, None], 1.0, [OK, PARSE]).valid()


def test_true_quality_examples(preset):
    space, _ = preset
    zero = SurrogateModel(np.zeros((2, edge_count(4), K)), np.zeros(8), np.zeros(8), 0.1)
    g = random_genotype(4, np.random.default_rng(0))
    assert surrogate_true_quality(zero, g) == 0.5

    model = SurrogateModel.generate(space, 4, seed=3)
    ops = g.op_matrix()
    base = model.true_quality(g)
    # enumeration oracle over the 8 ops of one edge
    scores = []
    for k in range(K):
        alt = ops.copy()
        alt[0, 5] = k
        scores.append(model.true_quality(genotype_from_matrix(4, alt)))
    assert max(scores) >= base
    w = model.op_scores[0, 5]
    for a in range(K):
        for b in range(K):
            if w[a] > w[b]:
                assert scores[a] > scores[b]
    with pytest.raises(ValueError):
        model.true_quality(random_genotype(3, np.random.default_rng(0)))


def test_evaluate_contract(preset):
    space, ref = preset
    model = SurrogateModel.generate(space, 4, seed=1, fidelity={"epoch": 2})
    ev = SurrogateEvaluator(model, space)
    archs = ArchSet.sample(100, 4, np.random.default_rng(0))
    cfg = named_config(space, "bpe-1")
    a, b = ev.evaluate(cfg, archs), ev.evaluate(cfg, archs)
    assert a == b
    assert len(a.scores) == 100
    assert a.mean_cost > 0
    assert a.mean_cost == config_cost(space, cfg)


def test_noiseless_surrogate_ranks_perfectly(preset):
    space, _ = preset
    model = SurrogateModel.generate(space, 4, seed=2, noise_scale=1e-12)
    archs = ArchSet.sample(100, 4, np.random.default_rng(2))
    res = surrogate_evaluate(model, space, named_config(space, "bpe-1"), archs)
    truth = [model.true_quality(g) for g in archs.genotypes]
    assert spearman(res.scores, truth) == pytest.approx(1.0)


def test_zero_fidelity_only_bias_differs(preset):
    space, _ = preset
    model = SurrogateModel.generate(space, 4, seed=4, noise_scale=0.2, bias={"epoch": 0.3})
    archs = ArchSet.sample(400, 4, np.random.default_rng(4))
    truth = np.array([model.true_quality(g) for g in archs.genotypes])
    c1, c2 = named_config(space, "bpe-1"), named_config(space, "reference")
    assert model.noise_sd(space, c1) == model.noise_sd(space, c2)
    r1 = np.array(surrogate_evaluate(model, space, c1, archs).scores) - truth - model.bias(space, c1)
    r2 = np.array(surrogate_evaluate(model, space, c2, archs).scores) - truth - model.bias(space, c2)
    assert model.bias(space, c1) < model.bias(space, c2) == 0.0
    assert abs(r1.mean()) < 0.05 and abs(r2.mean()) < 0.05
    assert r1.std() == pytest.approx(0.2, rel=0.15) and r2.std() == pytest.approx(0.2, rel=0.15)


def test_fidelity_raises_expected_correlation(preset):
    space, _ = preset
    e = space.dim_index("epoch")
    lo = BpeConfig((0,) * 8)
    hi = BpeConfig(tuple(4 if i == e else 0 for i in range(8)))
    diffs = []
    for seed in range(50):
        model = SurrogateModel.generate(space, 4, seed=seed, fidelity={"epoch": 5.0}, noise_scale=0.3)
        archs = ArchSet.sample(100, 4, np.random.default_rng(seed))
        truth = [model.true_quality(g) for g in archs.genotypes]
        r_lo = spearman(surrogate_evaluate(model, space, lo, archs).scores, truth)
        r_hi = spearman(surrogate_evaluate(model, space, hi, archs).scores, truth)
        diffs.append(r_hi - r_lo)
    assert np.mean(diffs) > 0.1


def test_noise_is_monotone_in_fidelity(preset):
    space, _ = preset
    model = SurrogateModel.generate(space, 4, fidelity={"epoch": 1.0, "layers": 0.5, "channels": 2.0})
    rng = np.random.default_rng(0)
    for _ in range(200):
        cfg = [int(rng.integers(len(d))) for d in space.dims]
        d = int(rng.integers(8))
        if cfg[d] + 1 >= len(space.dims[d]):
            continue
        up = list(cfg)
        up[d] += 1
        assert model.noise_sd(space, BpeConfig(tuple(up))) <= model.noise_sd(space, BpeConfig(tuple(cfg)))


def test_reference_config_uses_reference_noise(preset):
    space, ref = preset
    model = SurrogateModel.generate(space, 4, noise_scale=0.5, reference=ref)
    assert model.noise_sd(space, ref) == 0.0
    assert SurrogateModel.from_dict(model.to_dict()).to_dict() == model.to_dict()


def test_surrogate_model_validation():
    with pytest.raises(ValueError):
        SurrogateModel(np.zeros((2, 2, K)), np.zeros(1), np.zeros(1), -0.1)
    with pytest.raises(ValueError):
        SurrogateModel(np.zeros((2, 2, 3)), np.zeros(1), np.zeros(1), 0.1)


# external-command protocol ---------------------------------------------------


def test_external_success_and_cache(tmp_path, preset, stub_command):
    space, _ = preset
    cmd, log = stub_command
    archs = archs_with_first_ops(["sep_conv_3x3", "dil_conv_3x3", "avg_pool_3x3"])
    ev = ExternalEvaluator(space, cmd, tmp_path / "work", timeout=20)
    cfg = named_config(space, "bpe-1")
    first = ev.evaluate(cfg, archs)
    assert first.status == [OK] * 3 and first.mean_cost > 0
    assert ev.invocations == 3
    wd = next(p for p in (tmp_path / "work").iterdir() if p.name != "cache")
    assert (wd / "bpe.cfg").read_text() == render_bpe_cfg(space, cfg)
    assert (wd / "genotype.txt").read_text().count("\n") == 2

    again = ExternalEvaluator(space, cmd, tmp_path / "work", timeout=20).evaluate(cfg, archs)
    assert again.scores == first.scores
    assert again.mean_cost == first.mean_cost
    assert len(log.read_text().splitlines()) == 3


def test_external_echo_stub(tmp_path, preset):
    space, _ = preset
    archs = ArchSet.sample(4, 2, np.random.default_rng(0))
    ev = ExternalEvaluator(space, "echo 0.5 > result.txt", tmp_path, parallelism=2)
    res = ev.evaluate(named_config(space, "bpe-2"), archs)
    assert res.scores == [0.5] * 4 and res.errors == {}


def test_external_failures_are_isolated(tmp_path, preset, stub_command):
    space, _ = preset
    cmd, _ = stub_command
    archs = archs_with_first_ops(["none", "skip_connect", "max_pool_3x3", "sep_conv_5x5"])
    ev = ExternalEvaluator(space, cmd, tmp_path / "work", timeout=1.0, parallelism=4)
    res = ev.evaluate(named_config(space, "bpe-1"), archs)
    assert res.status == [TIMEOUT, PARSE, EXIT, OK]
    assert res.scores[:3] == [None, None, None] and res.scores[3] is not None
    assert set(res.errors) == {"g0", "g1", "g2"}
    assert "g0" in res.errors["g0"] and "timed out" in res.errors["g0"]
    assert "parse" in res.errors["g1"]
    assert "exited with 3" in res.errors["g2"]


def test_external_all_failed_raises(tmp_path, preset):
    space, _ = preset
    archs = ArchSet.sample(2, 2, np.random.default_rng(0))
    ev = ExternalEvaluator(space, "exit 1", tmp_path)
    with pytest.raises(EvaluatorError):
        ev.evaluate(named_config(space, "bpe-1"), archs)


def test_workdir_placeholder_and_env(tmp_path, preset):
    space, _ = preset
    archs = ArchSet.sample(1, 1, np.random.default_rng(0))
    ev = ExternalEvaluator(space, 'test "$BPE_WORKDIR" = "{workdir}" && echo 1.25 > "{workdir}/out.txt"',
                           tmp_path, result_file="out.txt")
    assert ev.evaluate(named_config(space, "bpe-1"), archs).scores == [1.25]
