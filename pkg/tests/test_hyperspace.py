import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mipbpe.hyperspace import (
    BpeConfig,
    Dimension,
    HyperSpace,
    PinMask,
    SpaceError,
    config_cost,
    default_preset,
    dump_space,
    load_space,
    named_config,
    sample_config,
    sampling_distribution,
)
from oracles import softmax_neg_normalized

# exp(-[0, .5, 1]) normalized, evaluated independently with math.exp
THREE_LEVEL = [0.506480391055654, 0.3071958857184984, 0.1863237232258476]


def test_sampling_distribution_examples():
    np.testing.assert_allclose(sampling_distribution(Dimension.numeric("a", [1, 2], [5.0, 5.0])), [0.5, 0.5])
    p = sampling_distribution(Dimension.numeric("a", [1, 2, 3], [0, 1, 2]))
    np.testing.assert_allclose(p, THREE_LEVEL, rtol=0, atol=1e-12)
    np.testing.assert_allclose(p, softmax_neg_normalized([0, 1, 2]), atol=1e-15)
    assert sampling_distribution(Dimension.numeric("a", [1], [7.0])).tolist() == [1.0]


# integer-valued costs keep the shift exact in floating point
costs_lists = st.lists(st.integers(0, 10**6).map(float), min_size=1, max_size=8)


@given(costs_lists, st.integers(0, 10**6))
def test_sampling_distribution_properties(costs, shift):
    dim = Dimension("d", tuple(range(len(costs))), tuple(range(len(costs))), tuple(costs))
    p = sampling_distribution(dim)
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p > 0)
    shifted = Dimension("d", dim.values, dim.encodings, tuple(c + shift for c in costs))
    np.testing.assert_allclose(sampling_distribution(shifted), p, atol=1e-9)
    order = np.argsort(costs, kind="stable")
    assert np.all(np.diff(p[order]) <= 1e-12)


def test_dimension_invariants():
    with pytest.raises(SpaceError):
        Dimension.numeric("a", [], [])
    with pytest.raises(SpaceError):
        Dimension.numeric("a", [1, 2], [0.0])
    with pytest.raises(SpaceError):
        Dimension("a", (1, 2), (2.0, 1.0), (0, 0))
    with pytest.raises(SpaceError):
        Dimension.numeric("a", [1, 2], [0, -1])
    with pytest.raises(SpaceError):
        HyperSpace((Dimension.numeric("a", [1], [0]), Dimension.numeric("a", [2], [0])))
    with pytest.raises(SpaceError):
        HyperSpace(())


def _toy():
    return HyperSpace((
        Dimension.numeric("a", [1, 2], [0, 0]),
        Dimension.numeric("b", [1, 2, 3], [0, 1, 2]),
        Dimension.numeric("c", [4, 5], [3, 1]),
    ))


def test_sample_config_all_pinned_is_deterministic():
    space = _toy()
    mask = PinMask((1, 2, 0))
    rng = np.random.default_rng(0)
    assert all(sample_config(space, mask, rng) == BpeConfig((1, 2, 0)) for _ in range(20))


def test_sample_config_frequencies():
    space = _toy()
    rng = np.random.default_rng(1)
    mask = PinMask((None, None, 1))
    draws = np.array([sample_config(space, mask, rng).assignment for _ in range(10_000)])
    assert abs(np.mean(draws[:, 0] == 0) - 0.5) <= 0.02
    freq = np.bincount(draws[:, 1], minlength=3) / len(draws)
    np.testing.assert_allclose(freq, THREE_LEVEL, atol=0.02)
    assert np.all(draws[:, 2] == 1)


def test_sample_config_reproducible():
    space, _ = default_preset()
    mask = PinMask.empty(len(space))
    a = [sample_config(space, mask, np.random.default_rng(5)) for _ in range(3)]
    b = [sample_config(space, mask, np.random.default_rng(5)) for _ in range(3)]
    assert a == b


def test_config_cost():
    space = HyperSpace((Dimension.numeric("a", [1, 2], [0, 1]), Dimension.numeric("b", [1, 2], [0, 2])))
    assert config_cost(space, BpeConfig((0, 0))) == 1.0
    assert config_cost(space, BpeConfig((1, 1))) == 6.0


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=5))
def test_config_cost_monotone(pairs):
    dims = tuple(Dimension.numeric(f"d{i}", [0, 1], [lo, lo + extra]) for i, (lo, extra) in enumerate(pairs))
    space = HyperSpace(dims)
    low = config_cost(space, BpeConfig((0,) * len(dims)))
    for i in range(len(dims)):
        cfg = [0] * len(dims)
        cfg[i] = 1
        assert config_cost(space, BpeConfig(tuple(cfg))) >= low


def test_default_preset_contents():
    space, ref = default_preset()
    assert len(space) == 8
    vals = {d.name: list(d.values) for d in space.dims}
    assert vals["epoch"] == [10, 30, 50, 100, 600]
    assert vals["batch_size"] == [32, 64, 96, 128, 256]
    assert vals["learning_rate"] == [0.01, 0.025, 0.03, 0.1]
    assert vals["layers"] == [6, 8, 16, 20]
    assert vals["float_point"] == ["half", "full"]
    assert vals["channels"] == [8, 16, 36]
    assert vals["cutout"] == ["off", "on"]
    assert vals["image_size"] == [8, 16, 32]
    assert space.config_values(ref) == {
        "epoch": 600, "batch_size": 96, "learning_rate": 0.025, "layers": 20,
        "float_point": "full", "channels": 36, "cutout": "on", "image_size": 32,
    }
    for name in ("learning_rate", "cutout"):
        assert set(space.dims[space.dim_index(name)].costs) == {0.0}


def test_preset_named_configs_reachable():
    space, ref = default_preset()
    bpe1 = named_config(space, "bpe-1")
    bpe2 = named_config(space, "bpe-2")
    v1 = space.config_values(bpe1)
    assert (v1["epoch"], v1["batch_size"], v1["learning_rate"], v1["layers"], v1["channels"], v1["image_size"]) == (
        10, 128, 0.03, 6, 8, 16)
    v2 = space.config_values(bpe2)
    assert (v2["epoch"], v2["batch_size"], v2["learning_rate"], v2["layers"], v2["channels"], v2["image_size"]) == (
        30, 128, 0.03, 16, 16, 16)
    assert sum(a != b for a, b in zip(ref, bpe1)) >= 4


def test_reference_cost_dominates_min_cost_configs():
    space, ref = default_preset()
    cheapest = BpeConfig(tuple(d.min_cost_level() for d in space.dims))
    assert config_cost(space, ref) >= config_cost(space, cheapest)


def test_space_file_round_trip(tmp_path):
    space, ref = default_preset()
    path = tmp_path / "space.yaml"
    path.write_text(dump_space(space, ref))
    loaded, loaded_ref = load_space(path)
    assert loaded == space
    assert loaded_ref == ref


def test_space_file_defaults(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("dimensions:\n  - name: opt\n    levels: [sgd, adam]\n  - name: wd\n    levels: [0.0, 0.1]\n")
    space, ref = load_space(path)
    assert ref is None
    assert space.dims[0].encodings == (0.0, 1.0)
    assert space.dims[1].encodings == (0.0, 0.1)
    assert space.dims[0].costs == (0.0, 0.0)


def test_config_validation_errors():
    space = _toy()
    with pytest.raises(SpaceError):
        space.validate_config(BpeConfig((0, 3, 0)))
    with pytest.raises(SpaceError):
        space.validate_config(BpeConfig((0, 0)))
    with pytest.raises(SpaceError):
        space.config_from_values({"zzz": 1})
    with pytest.raises(SpaceError):
        PinMask((0, None, None)).pin(0, 1)
