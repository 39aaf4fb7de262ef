"""Minimum Importance Pruning: search a BPE config that ranks like full training.

Each iteration draws ``k`` configs from the lowest-cost sampling law (pinned
dimensions held fixed), scores the architecture set under each, records the
Spearman correlation with the reference ranking, refits a random forest on all
records so far and pins the least important free dimension.  After one
iteration per dimension every dimension is pinned and the best record wins.

Run directory layout::

    manifest.json     seed, space, reference config, params, archs, evaluator
    reference.json    reference scores (null for failed architectures)
    state.json        latest iteration snapshot (atomic write-then-rename)
    trials.jsonl      one JSON object per trial record, append-only
    report.tsv        one row per iteration: importances, pin, best so far
    forests/iter_NN.json   forest fitted in iteration NN
    forests/final.json     forest on all records and all dimensions
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluators import ArchSet, EvalResult, Evaluator, scores_array
from .forest import ForestParams, RandomForest
from .hyperspace import BpeConfig, HyperSpace, PinMask, config_cost, sample_config
from .ranking import ObjectiveParams, UndefinedCorrelation, objective, spearman

log = logging.getLogger(__name__)

MIN_VALID_FRACTION = 0.8


class ArchiveError(RuntimeError):
    """Run directory is missing, inconsistent or corrupt."""


@dataclass(frozen=True)
class TrialRecord:
    config: tuple[int, ...]
    r_s: float
    mean_cost: float
    objective: float
    iteration: int
    effective_n: int
    valid: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = list(self.config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(tuple(d["config"]), float(d["r_s"]), float(d["mean_cost"]), float(d["objective"]),
                   int(d["iteration"]), int(d["effective_n"]), bool(d.get("valid", True)))


@dataclass(frozen=True)
class MipParams:
    k: int = 10
    tau: float = 0.1
    lam: float = 0.5
    literal_sign: bool = False
    cost_normalizer: float | None = None  # None: cost of the reference config
    select_by: str = "objective"  # or "rs"
    seed: int = 0
    max_resample: int = 100
    workers: int = 1
    forest: ForestParams = ForestParams()

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.select_by not in ("objective", "rs"):
            raise ValueError("select_by must be 'objective' or 'rs'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MipParams":
        d = dict(d)
        d["forest"] = ForestParams(**d.get("forest", {}))
        return cls(**d)


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    importances: list  # per dim; None where already pinned
    pinned_dim: int
    pinned_level: int
    branch: str  # "min_cost" or "best_rs"
    fallback: bool
    best_config: tuple[int, ...] | None
    best_r_s: float | None
    best_objective: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_config"] = list(self.best_config) if self.best_config is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IterationReport":
        d = dict(d)
        if d.get("best_config") is not None:
            d["best_config"] = tuple(d["best_config"])
        return cls(**d)


@dataclass(frozen=True)
class MipState:
    space: HyperSpace
    reference: BpeConfig
    reference_scores: tuple  # float or None per architecture
    params: MipParams
    mask: PinMask
    iteration: int = 0
    records: tuple[TrialRecord, ...] = ()
    reports: tuple[IterationReport, ...] = ()

    @property
    def done(self) -> bool:
        return not self.mask.unpinned

    def objective_params(self) -> ObjectiveParams:
        norm = self.params.cost_normalizer or config_cost(self.space, self.reference)
        return ObjectiveParams(self.params.lam, norm, self.params.literal_sign)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "pins": list(self.mask.pins),
            "records": [r.to_dict() for r in self.records],
            "reports": [r.to_dict() for r in self.reports],
        }


@dataclass
class MipResult:
    best: TrialRecord
    records: list[TrialRecord]
    reports: list[IterationReport]
    state: MipState
    pareto: list[TrialRecord] = field(default_factory=list)


def compute_reference(archs: ArchSet, evaluator: Evaluator, reference: BpeConfig) -> np.ndarray:
    """Scores of every architecture under the full-training config (NaN = failed)."""
    return scores_array(evaluator.evaluate(reference, archs))


def correlation_with_reference(result: EvalResult, reference_scores) -> tuple[float, int, bool]:
    """``(r_s, effective_n, valid)`` over architectures scored in both runs."""
    ref = np.array([np.nan if s is None else s for s in reference_scores], dtype=float)
    cur = scores_array(result)
    ok = np.isfinite(ref) & np.isfinite(cur)
    n_eff = int(ok.sum())
    valid = n_eff >= MIN_VALID_FRACTION * len(ref)
    if n_eff < 2:
        return 0.0, n_eff, False
    try:
        r = spearman(cur[ok], ref[ok])
    except UndefinedCorrelation:
        log.warning("constant scores: correlation undefined, recording r_s = 0 as invalid")
        return 0.0, n_eff, False
    return r, n_eff, valid


def best_record(records, by: str = "objective") -> TrialRecord | None:
    """Maximum objective (or r_s) over valid records; ties go to the earliest."""
    best = None
    for r in records:
        if not r.valid:
            continue
        val = r.objective if by == "objective" else r.r_s
        cur = None if best is None else (best.objective if by == "objective" else best.r_s)
        if best is None or val > cur:
            best = r
    return best


def pareto_front(records) -> list[TrialRecord]:
    """Records not dominated under (max r_s, min mean_cost), sorted by cost.

    Repeated trials of one config are reported once (the earliest).
    """
    recs, seen = [], set()
    for r in records:
        if r.valid and r.config not in seen:
            seen.add(r.config)
            recs.append(r)
    front = []
    for a in recs:
        dominated = any(
            b.r_s >= a.r_s and b.mean_cost <= a.mean_cost and (b.r_s > a.r_s or b.mean_cost < a.mean_cost)
            for b in recs
        )
        if not dominated:
            front.append(a)
    return sorted(front, key=lambda r: (r.mean_cost, -r.r_s))


def prune_rule(importances, records, space: HyperSpace, mask: PinMask, tau: float = 0.1) -> tuple[int, int, str]:
    """Pick the free dimension with the lowest importance and the level to pin.

    Below ``tau`` the dimension goes to its cheapest level; otherwise to the
    level it had in the record with the highest r_s.
    """
    free = mask.unpinned
    if not free:
        raise ValueError("no free dimension left to prune")
    dim = min(free, key=lambda i: (importances[i], i))
    # importances live in [0, 1]; tau >= 1 means "always cheapest", which a
    # strict comparison would miss for the last free dim (importance == 1)
    if importances[dim] < tau or tau >= 1.0:
        return dim, space.dims[dim].min_cost_level(), "min_cost"
    best = best_record(records, by="rs")
    if best is None:
        log.warning("no valid record to copy a level from; using the min-cost level")
        return dim, space.dims[dim].min_cost_level(), "min_cost"
    return dim, best.config[dim], "best_rs"


def _sub_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def fit_importance_forest(state: MipState, records, dims) -> tuple[RandomForest | None, np.ndarray, bool]:
    """Fit on valid records restricted to ``dims``; uniform importances on failure."""
    data = [r for r in records if r.valid]
    fparams = replace(state.params.forest, seed=_sub_seed(state.params.seed, state.iteration, 1))
    uniform = np.full(len(dims), 1.0 / len(dims))
    if len(data) < 2:
        log.warning("fewer than 2 valid records; using uniform importances")
        return None, uniform, True
    X = np.array([state.space.encode(BpeConfig(r.config), dims) for r in data])
    y = np.array([r.r_s for r in data])
    forest = RandomForest.fit(X, y, fparams)
    imp = forest.feature_importances()
    if imp.sum() == 0:
        log.warning("forest found no split (constant targets?); using uniform importances")
        return forest, uniform, True
    return forest, imp, False


def _draw_batch(state: MipState, rng: np.random.Generator) -> list[BpeConfig]:
    seen = {r.config for r in state.records}
    batch = []
    for _ in range(state.params.k):
        cfg = sample_config(state.space, state.mask, rng)
        tries = 0
        while tuple(cfg) in seen and tries < state.params.max_resample:
            cfg = sample_config(state.space, state.mask, rng)
            tries += 1
        seen.add(tuple(cfg))
        batch.append(cfg)
    return batch


def run_iteration(state: MipState, evaluator: Evaluator, archs: ArchSet) -> tuple[MipState, RandomForest | None]:
    """One sample / evaluate / fit / prune round; returns a new state."""
    if state.done:
        raise ValueError("every dimension is already pinned")
    rng = np.random.default_rng([state.params.seed, state.iteration])
    batch = _draw_batch(state, rng)

    # evaluator errors propagate before anything is committed
    if state.params.workers > 1:
        with ThreadPoolExecutor(max_workers=state.params.workers) as pool:
            results = list(pool.map(lambda c: evaluator.evaluate(c, archs), batch))
    else:
        results = [evaluator.evaluate(c, archs) for c in batch]

    oparams = state.objective_params()
    new = []
    for cfg, res in zip(batch, results):
        r, n_eff, valid = correlation_with_reference(res, state.reference_scores)
        new.append(TrialRecord(tuple(cfg), r, res.mean_cost, objective(r, res.mean_cost, oparams),
                               state.iteration + 1, n_eff, valid))
    records = state.records + tuple(new)

    free = state.mask.unpinned
    forest, imp, fallback = fit_importance_forest(state, records, free)
    full_imp = [None] * len(state.space)
    for d, v in zip(free, imp):
        full_imp[d] = float(v)
    dim, level, branch = prune_rule(full_imp, records, state.space, state.mask, state.params.tau)
    mask = state.mask.pin(dim, level)
    best = best_record(records, state.params.select_by)
    report = IterationReport(
        state.iteration + 1, full_imp, dim, level, branch, fallback,
        best.config if best else None, best.r_s if best else None, best.objective if best else None,
    )
    log.info("iteration %d: pinned %s = %s (%s)", report.iteration, state.space.dims[dim].name,
             state.space.dims[dim].values[level], branch)
    new_state = replace(state, mask=mask, iteration=state.iteration + 1, records=records,
                        reports=state.reports + (report,))
    return new_state, forest


# persistence ---------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _report_rows(space: HyperSpace, reports) -> str:
    head = ["iteration", *space.names, "pinned_dim", "pinned_value", "branch", "best_r_s", "best_objective"]
    lines = ["\t".join(head)]
    for rep in reports:
        imps = ["pinned" if v is None else f"{v:.6f}" for v in rep.importances]
        d = space.dims[rep.pinned_dim]
        lines.append("\t".join([
            str(rep.iteration), *imps, d.name, str(d.values[rep.pinned_level]), rep.branch,
            "" if rep.best_r_s is None else f"{rep.best_r_s:.6f}",
            "" if rep.best_objective is None else f"{rep.best_objective:.6f}",
        ]))
    return "\n".join(lines) + "\n"


class RunStore:
    def __init__(self, run_dir: str | Path):
        self.dir = Path(run_dir)

    @property
    def manifest_path(self) -> Path:
        return self.dir / "manifest.json"

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def init(self, space, reference, params: MipParams, archs: ArchSet, evaluator: Evaluator) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "forests").mkdir(exist_ok=True)
        manifest = {
            "kind": "mip",
            "seed": params.seed,
            "space": space.to_dict(),
            "reference": list(reference),
            "params": params.to_dict(),
            "evaluator": evaluator.describe(),
            **archs.to_dict(),
        }
        _atomic_write_text(self.manifest_path, json.dumps(manifest, indent=1))

    def manifest(self) -> dict:
        try:
            data = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ArchiveError(f"{self.dir}: no manifest.json") from None
        except ValueError as exc:
            raise ArchiveError(f"{self.manifest_path}: corrupt manifest ({exc})") from None
        for key in ("kind", "space", "params", "reference", "archs"):
            if key not in data:
                raise ArchiveError(f"{self.manifest_path}: missing {key!r}")
        return data

    def save_reference(self, scores) -> None:
        vals = [None if not np.isfinite(s) else float(s) for s in scores]
        _atomic_write_text(self.dir / "reference.json", json.dumps(vals))

    def load_reference(self):
        path = self.dir / "reference.json"
        if not path.exists():
            return None
        try:
            return tuple(json.loads(path.read_text(encoding="utf-8")))
        except ValueError as exc:
            raise ArchiveError(f"{path}: corrupt ({exc})") from None

    def save_iteration(self, state: MipState, new_records, forest: RandomForest | None) -> None:
        if forest is not None:
            forest.save(self.dir / "forests" / f"iter_{state.iteration:02d}.json")
        with open(self.dir / "trials.jsonl", "a", encoding="utf-8") as fh:
            for r in new_records:
                fh.write(json.dumps(r.to_dict()) + "\n")
        _atomic_write_text(self.dir / "report.tsv", _report_rows(state.space, state.reports))
        _atomic_write_text(self.dir / "state.json", json.dumps(state.to_dict()))

    def load_state_dict(self) -> dict | None:
        path = self.dir / "state.json"
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ArchiveError(f"{path}: corrupt state ({exc})") from None

    def sync_trials(self, records) -> None:
        """Make trials.jsonl match the committed state after an interrupted write."""
        text = "".join(json.dumps(r.to_dict()) + "\n" for r in records)
        _atomic_write_text(self.dir / "trials.jsonl", text)


def load_state(store: RunStore) -> tuple[MipState, ArchSet]:
    m = store.manifest()
    if m["kind"] != "mip":
        raise ArchiveError(f"{store.dir}: not a MIP run (kind={m['kind']!r})")
    try:
        space = HyperSpace.from_dict(m["space"])
        params = MipParams.from_dict(m["params"])
        archs = ArchSet.from_dict(m)
        reference = BpeConfig(tuple(m["reference"]))
        space.validate_config(reference)
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"{store.manifest_path}: invalid manifest ({exc})") from None
    ref_scores = store.load_reference()
    state = MipState(space, reference, ref_scores or (), params, PinMask.empty(len(space)))
    sd = store.load_state_dict()
    if sd is not None:
        try:
            state = replace(
                state,
                mask=PinMask(tuple(sd["pins"])),
                iteration=int(sd["iteration"]),
                records=tuple(TrialRecord.from_dict(r) for r in sd["records"]),
                reports=tuple(IterationReport.from_dict(r) for r in sd["reports"]),
            )
            space.validate_mask(state.mask)
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchiveError(f"{store.dir}/state.json: invalid state ({exc})") from None
        if len(state.mask.pinned) != state.iteration:
            raise ArchiveError(f"{store.dir}/state.json: pin count does not match iteration")
    return state, archs


def _finish(state: MipState, store: RunStore | None) -> MipResult:
    best = best_record(state.records, state.params.select_by)
    if best is None:
        raise RuntimeError("no valid trial record; cannot select a config")
    if store is not None and len(state.records) >= 2:
        fparams = replace(state.params.forest, seed=_sub_seed(state.params.seed, 0, 2))
        valid = [r for r in state.records if r.valid]
        if len(valid) >= 2:
            X = np.array([state.space.encode(BpeConfig(r.config)) for r in valid])
            y = np.array([r.r_s for r in valid])
            RandomForest.fit(X, y, fparams).save(store.dir / "forests" / "final.json")
    return MipResult(best, list(state.records), list(state.reports), state, pareto_front(state.records))


def _loop(state: MipState, evaluator: Evaluator, archs: ArchSet, store: RunStore | None) -> MipResult:
    while not state.done:
        before = len(state.records)
        state, forest = run_iteration(state, evaluator, archs)
        if store is not None:
            store.save_iteration(state, state.records[before:], forest)
    return _finish(state, store)


def run(
    space: HyperSpace,
    archs: ArchSet,
    evaluator: Evaluator,
    params: MipParams = MipParams(),
    reference: BpeConfig | None = None,
    run_dir: str | Path | None = None,
) -> MipResult:
    """Full MIP run: one reference evaluation plus ``len(space) * k`` trials.

    With ``run_dir`` the run is persisted after every iteration, and an
    existing run directory is resumed instead of restarted.
    """
    store = RunStore(run_dir) if run_dir is not None else None
    if store is not None and store.exists():
        return resume(run_dir, evaluator)
    if reference is None:
        raise ValueError("a reference config is required")
    space.validate_config(reference)
    if store is not None:
        store.init(space, reference, params, archs, evaluator)
    ref_scores = compute_reference(archs, evaluator, reference)
    if store is not None:
        store.save_reference(ref_scores)
    ref = tuple(None if not np.isfinite(s) else float(s) for s in ref_scores)
    state = MipState(space, reference, ref, params, PinMask.empty(len(space)))
    return _loop(state, evaluator, archs, store)


def resume(run_dir: str | Path, evaluator: Evaluator) -> MipResult:
    """Continue a persisted run at its recorded iteration."""
    store = RunStore(run_dir)
    state, archs = load_state(store)
    if not state.reference_scores:
        ref_scores = compute_reference(archs, evaluator, state.reference)
        store.save_reference(ref_scores)
        state = replace(state, reference_scores=tuple(None if not np.isfinite(s) else float(s) for s in ref_scores))
    store.sync_trials(state.records)
    return _loop(state, evaluator, archs, store)
