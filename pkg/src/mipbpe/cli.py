"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 evaluator failure, 4 invalid archive.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import mip
from .cellspace import GenotypeError, encode
from .evaluators import ArchSet, EvaluatorError, ExternalEvaluator, SurrogateEvaluator, SurrogateModel
from .hyperspace import NAMED_CONFIGS, SpaceError, default_preset, dump_space, load_space, named_config
from .report import corr, importance_report, load_table, pareto_csv, pareto_report
from .search import STRATEGIES, SearchBudget, write_trace

EXIT_USAGE = 2
EXIT_EVALUATOR = 3
EXIT_ARCHIVE = 4

DEFAULT_SURROGATE = {
    "fidelity": {"epoch": 5.0, "layers": 5.0, "channels": 1.0, "image_size": 1.0, "batch_size": 0.5},
    "bias": {"epoch": 0.05, "layers": 0.02, "image_size": 0.02},
    "noise_scale": 0.3,
    "op_scale": 0.3,
    "reference_noise": 0.0,
}


class UsageError(Exception):
    pass


def _global_options(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="run seed")
    p.add_argument("--run-dir", default=d(None), help="run directory")
    p.add_argument("--evaluator", choices=["surrogate", "external"], default=d("surrogate"))
    p.add_argument("--lambda", dest="lam", type=float, default=d(0.5), help="cost weight in (0, 1)")
    p.add_argument("--select-by", choices=["objective", "rs"], default=d("objective"))
    p.add_argument("--tau", type=float, default=d(0.1), help="importance threshold for min-cost pinning")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _evaluator_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluator")
    g.add_argument("--space", help="YAML/JSON space definition (default: built-in preset)")
    g.add_argument("--surrogate", help="YAML file overriding surrogate settings")
    g.add_argument("--command", help="shell command for the external evaluator")
    g.add_argument("--timeout", type=float, default=3600.0, help="external command timeout (s)")
    g.add_argument("--parallel", type=int, default=1, help="concurrent external commands")
    g.add_argument("--work-dir", help="external evaluator work/cache root")
    g.add_argument("--M", type=int, default=4, help="intermediate nodes per cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mipbpe", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="group", required=True)
    parent = argparse.ArgumentParser(add_help=False)
    _global_options(parent, suppress=True)

    space = sub.add_parser("space", help="inspect BPE spaces").add_subparsers(dest="cmd", required=True)
    p = space.add_parser("show", parents=[parent], help="dump a space as YAML")
    p.add_argument("--space")
    p = space.add_parser("validate", parents=[parent], help="check a space file")
    p.add_argument("file")

    m = sub.add_parser("mip", help="Minimum Importance Pruning runs").add_subparsers(dest="cmd", required=True)
    p = m.add_parser("run", parents=[parent], help="start (or resume) a run")
    _evaluator_options(p)
    p.add_argument("--k", type=int, default=10, help="configs sampled per iteration")
    p.add_argument("--archs", type=int, default=100, help="architecture set size")
    p.add_argument("--literal-sign", action="store_true", help="add the cost term instead of subtracting")
    p = m.add_parser("resume", parents=[parent], help="continue an interrupted run")
    p.add_argument("--command", help="override the external command")
    p.add_argument("--timeout", type=float)
    p.add_argument("--parallel", type=int)
    p.add_argument("--work-dir")
    m.add_parser("report", parents=[parent], help="print the run report")

    s = sub.add_parser("search", help="architecture search").add_subparsers(dest="cmd", required=True)
    p = s.add_parser("run", parents=[parent], help="search with a fixed BPE config")
    _evaluator_options(p)
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="rs")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--bpe", default="bpe-1", help=f"named config ({', '.join(NAMED_CONFIGS)}) or name=value,...")
    p.add_argument("--population", type=int, default=50)
    p.add_argument("--sample-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--baseline-decay", type=float, default=0.9)
    p.add_argument("--trace", help="write the trace as JSON lines")

    r = sub.add_parser("rank", help="rank statistics").add_subparsers(dest="cmd", required=True)
    p = r.add_parser("corr", parents=[parent], help="Spearman between two id,score CSV files")
    p.add_argument("a")
    p.add_argument("b")

    rep = sub.add_parser("report", help="run analyses").add_subparsers(dest="cmd", required=True)
    p = rep.add_parser("importance", parents=[parent], help="importances and prediction curves")
    p.add_argument("--context", choices=["best", "min_cost"], default="best")
    p.add_argument("--out", help="directory for importance.csv / curves.csv")
    p = rep.add_parser("pareto", parents=[parent], help="r_s versus cost Pareto set")
    p.add_argument("--out", help="CSV output path")
    return parser


def _space(args):
    if getattr(args, "space", None):
        space, ref = load_space(args.space)
        if ref is None:
            raise UsageError(f"{args.space}: a 'reference' mapping is required for runs")
        return space, ref
    return default_preset()


def _surrogate(args, space, ref) -> SurrogateEvaluator:
    cfg = dict(DEFAULT_SURROGATE)
    if getattr(args, "surrogate", None):
        with open(args.surrogate, encoding="utf-8") as fh:
            cfg.update(yaml.safe_load(fh) or {})
    model = SurrogateModel.generate(
        space, args.M, seed=int(cfg.get("seed", args.seed)),
        fidelity=cfg["fidelity"], bias=cfg["bias"], noise_scale=float(cfg["noise_scale"]),
        op_scale=float(cfg["op_scale"]), reference=ref, reference_noise=float(cfg["reference_noise"]),
    )
    return SurrogateEvaluator(model, space)


def _evaluator(args, space, ref, run_dir: Path | None):
    if args.evaluator == "external":
        if not args.command:
            raise UsageError("--evaluator external needs --command")
        root = Path(args.work_dir) if args.work_dir else (run_dir or Path(".")) / "work"
        return ExternalEvaluator(space, args.command, root, timeout=args.timeout, parallelism=args.parallel)
    return _surrogate(args, space, ref)


def _require_run_dir(args) -> Path:
    if not args.run_dir:
        raise UsageError("--run-dir is required")
    return Path(args.run_dir)


def _print_result(space, res: mip.MipResult) -> None:
    print("best config:", json.dumps(space.config_values(mip.BpeConfig(res.best.config))))
    print(f"r_s = {res.best.r_s:.4f}  mean_cost = {res.best.mean_cost:.4g}  objective = {res.best.objective:.4f}")
    print("pareto set (cheapest first):")
    for r in res.pareto:
        print(f"  r_s={r.r_s:.4f} cost={r.mean_cost:.4g} {json.dumps(space.config_values(mip.BpeConfig(r.config)))}")


def cmd_space(args) -> int:
    if args.cmd == "show":
        space, ref = load_space(args.space) if args.space else default_preset()
        print(dump_space(space, ref), end="")
    else:
        space, ref = load_space(args.file)
        print(f"ok: {len(space)} dimensions ({', '.join(space.names)})"
              + ("" if ref is None else "; reference config valid"))
    return 0


def cmd_mip(args) -> int:
    run_dir = _require_run_dir(args)
    if args.cmd == "run":
        space, ref = _space(args)
        evaluator = _evaluator(args, space, ref, run_dir)
        archs = ArchSet.sample(args.archs, args.M, np.random.default_rng([args.seed, 7]))
        params = mip.MipParams(k=args.k, tau=args.tau, lam=args.lam, literal_sign=args.literal_sign,
                               select_by=args.select_by, seed=args.seed)
        res = mip.run(space, archs, evaluator, params, ref, run_dir)
        _print_result(space, res)
    elif args.cmd == "resume":
        m = mip.RunStore(run_dir).manifest()
        space = mip.HyperSpace.from_dict(m["space"])
        desc = m.get("evaluator", {})
        if desc.get("kind") == "surrogate":
            evaluator = SurrogateEvaluator(SurrogateModel.from_dict(desc["model"]), space)
        elif desc.get("kind") == "external":
            root = Path(args.work_dir) if args.work_dir else run_dir / "work"
            evaluator = ExternalEvaluator(
                space, args.command or desc["command"], root,
                timeout=args.timeout or desc.get("timeout", 3600.0),
                parallelism=args.parallel or desc.get("parallelism", 1),
                result_file=desc.get("result_file", "result.txt"),
            )
        else:
            raise mip.ArchiveError(f"{run_dir}: unknown evaluator {desc.get('kind')!r} in manifest")
        res = mip.resume(run_dir, evaluator)
        _print_result(space, res)
    else:
        state, _ = mip.load_state(mip.RunStore(run_dir))
        report = run_dir / "report.tsv"
        if report.exists():
            print(report.read_text(encoding="utf-8"), end="")
        print(f"iterations: {state.iteration}/{len(state.space)}  records: {len(state.records)}")
        best = mip.best_record(state.records, state.params.select_by)
        if best is not None:
            _print_result(state.space, mip.MipResult(best, list(state.records), list(state.reports), state,
                                                     mip.pareto_front(state.records)))
    return 0


def _bpe_config(space, spec: str):
    if "=" not in spec:
        return named_config(space, spec)
    values = {}
    for part in spec.split(","):
        k, _, v = part.partition("=")
        values[k.strip()] = v.strip()
    return space.config_from_values(values)


def cmd_search(args) -> int:
    space, ref = _space(args)
    config = _bpe_config(space, args.bpe)
    evaluator = _evaluator(args, space, ref, Path(args.run_dir) if args.run_dir else None)
    budget = SearchBudget(args.budget, args.seed)
    if args.strategy == "ea":
        res = STRATEGIES["ea"](args.M, evaluator, config, budget, args.population, args.sample_size)
    elif args.strategy == "rl":
        res = STRATEGIES["rl"](args.M, evaluator, config, budget, args.lr, args.baseline_decay)
    else:
        res = STRATEGIES["rs"](args.M, evaluator, config, budget)
    if args.trace:
        write_trace(args.trace, res)
    print(f"best score {res.best_score:.6f} after {res.evaluations} evaluations ({len(res.trace)} steps)")
    print(encode(res.best))
    return 0


def cmd_rank(args) -> int:
    res = corr(load_table(args.a), load_table(args.b))
    print(f"r_s = {res.r_s:.6f}  n = {res.n}  overlap = {res.overlap:.0%}")
    if res.warning:
        print(f"warning: {res.warning}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    run_dir = _require_run_dir(args)
    if args.cmd == "importance":
        rep = importance_report(run_dir, args.context)
        print(rep.text())
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "importance.csv").write_text(rep.rows_csv(), encoding="utf-8")
            if rep.curves:
                (out / "curves.csv").write_text(rep.curves_csv(), encoding="utf-8")
    else:
        text = pareto_csv(pareto_report(run_dir))
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        print(text, end="")
    return 0


COMMANDS = {"space": cmd_space, "mip": cmd_mip, "search": cmd_search, "rank": cmd_rank, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.group](args)
    except EvaluatorError as exc:
        print(f"evaluator failure: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except mip.ArchiveError as exc:
        print(f"invalid archive: {exc}", file=sys.stderr)
        return EXIT_ARCHIVE
    except (UsageError, SpaceError, GenotypeError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
