"""Read-only analyses over MIP run archives and ingested score tables.

Score tables are two-column CSV files with a header row ``id,score``.
Reports never write into the run directory; CSV output goes to a caller-chosen
directory.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forest import RandomForest
from .hyperspace import BpeConfig
from .mip import ArchiveError, RunStore, best_record, load_state, pareto_front
from .ranking import spearman

log = logging.getLogger(__name__)

MIN_OVERLAP = 0.8


@dataclass
class ResultTable:
    condition: str
    scores: dict[str, float]
    source: str = ""

    @classmethod
    def from_pairs(cls, condition: str, pairs, source: str = "") -> "ResultTable":
        scores: dict[str, float] = {}
        for aid, s in pairs:
            if aid in scores:
                raise ValueError(f"{condition}: duplicate id {aid!r}")
            scores[aid] = float(s)
        return cls(condition, scores, source)


def load_table(path: str | Path, condition: str | None = None) -> ResultTable:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValueError(f"{path}: expected a header row 'id,score'")
        pairs = [(row[0].strip(), row[1]) for row in reader if row and row[0].strip()]
    return ResultTable.from_pairs(condition or path.stem, pairs, str(path))


def save_table(table: ResultTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score"])
        for aid, s in table.scores.items():
            w.writerow([aid, repr(s)])


@dataclass
class CorrResult:
    r_s: float
    n: int
    overlap: float
    warning: str | None = None


def corr(a: ResultTable, b: ResultTable) -> CorrResult:
    """Spearman over the ids both tables share."""
    common = [i for i in a.scores if i in b.scores]
    if len(common) < 2:
        raise ValueError(f"need at least 2 common ids, found {len(common)}")
    r = spearman([a.scores[i] for i in common], [b.scores[i] for i in common])
    overlap = len(common) / max(len(a.scores), len(b.scores))
    warning = None
    if overlap < MIN_OVERLAP:
        warning = f"only {len(common)} shared ids ({overlap:.0%} overlap)"
        log.warning(warning)
    return CorrResult(r, len(common), overlap, warning)


@dataclass
class ImportanceReport:
    rows: list[dict]
    curves: list[dict]
    notice: str | None = None
    dims: list[str] = field(default_factory=list)

    def rows_csv(self) -> str:
        return _to_csv(self.rows, ["iteration", "dimension", "importance", "pinned", "pinned_value", "pinned_at"])

    def curves_csv(self) -> str:
        return _to_csv(self.curves, ["dimension", "level", "encoding", "mean", "std"])

    def text(self) -> str:
        iters = sorted({r["iteration"] for r in self.rows})
        width = max([len(d) for d in self.dims] + [10])
        out = ["iter  " + "  ".join(f"{d:>{width}}" for d in self.dims)]
        for it in iters:
            cells = []
            for d in self.dims:
                row = next(r for r in self.rows if r["iteration"] == it and r["dimension"] == d)
                if row["importance"] is None:
                    cell = f"={row['pinned_value']}"
                elif row["pinned"]:
                    cell = f"{row['importance']:.3f}*"
                else:
                    cell = f"{row['importance']:.3f}"
                cells.append(f"{cell:>{width}}")
            out.append(f"{it:>4}  " + "  ".join(cells))
        out.append("(* pinned in that iteration; =v pinned earlier to v)")
        if self.notice:
            out.append(self.notice)
        return "\n".join(out)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _to_csv(rows, cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def importance_report(run_dir: str | Path, context: str = "best") -> ImportanceReport:
    """Per-iteration importances plus per-dimension predicted-r_s sweeps.

    Sweeps run one dimension through its levels on the final forest while the
    other dimensions stay at the best record's levels (``context="best"``) or
    at their cheapest levels (``context="min_cost"``).
    """
    store = RunStore(run_dir)
    state, _ = load_state(store)
    if not state.reports:
        raise ArchiveError(f"{run_dir}: no completed iteration to report on")
    space = state.space
    pinned_at = {rep.pinned_dim: rep.iteration for rep in state.reports}
    rows = []
    for rep in state.reports:
        for d, dim in enumerate(space.dims):
            at = pinned_at.get(d)
            is_pinned = at is not None and at <= rep.iteration
            level = state.mask.pins[d] if is_pinned else None
            rows.append({
                "iteration": rep.iteration,
                "dimension": dim.name,
                "importance": rep.importances[d],
                "pinned": is_pinned,
                "pinned_value": dim.values[level] if level is not None else None,
                "pinned_at": at if is_pinned else None,
            })

    curves: list[dict] = []
    notice = None
    final = store.dir / "forests" / "final.json"
    if not final.exists():
        notice = "notice: no final forest snapshot; prediction curves omitted"
    else:
        try:
            forest = RandomForest.load(final)
        except (ValueError, KeyError) as exc:
            raise ArchiveError(f"{final}: corrupt forest ({exc})") from None
        if context == "min_cost":
            base = BpeConfig(tuple(d.min_cost_level() for d in space.dims))
        else:
            best = best_record(state.records, state.params.select_by)
            base = BpeConfig(best.config) if best else BpeConfig(tuple(d.min_cost_level() for d in space.dims))
        curves = prediction_curves(forest, space, base)
    return ImportanceReport(rows, curves, notice, space.names)


def prediction_curves(forest: RandomForest, space, base: BpeConfig) -> list[dict]:
    x0 = space.encode(base)
    out = []
    for d, dim in enumerate(space.dims):
        for j, enc in enumerate(dim.encodings):
            x = x0.copy()
            x[d] = enc
            per_tree = forest.predict_trees(x)
            out.append({"dimension": dim.name, "level": dim.values[j], "encoding": enc,
                        "mean": float(per_tree.mean()), "std": float(per_tree.std())})
    return out


def pareto_report(run_dir: str | Path) -> list[tuple[dict, float, float]]:
    """Non-dominated ``(config values, r_s, mean_cost)`` triples, cheapest first."""
    state, _ = load_state(RunStore(run_dir))
    if not state.records:
        raise ArchiveError(f"{run_dir}: no trial records")
    return [(state.space.config_values(BpeConfig(r.config)), r.r_s, r.mean_cost)
            for r in pareto_front(state.records)]


def pareto_csv(front) -> str:
    if not front:
        return ""
    names = list(front[0][0])
    rows = [{**cfg, "r_s": rs, "mean_cost": cost} for cfg, rs, cost in front]
    return _to_csv(rows, names + ["r_s", "mean_cost"])
