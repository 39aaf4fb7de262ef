"""Performance estimators: score a fixed architecture set under one BPE config.

Two implementations ship with the package:

* :class:`SurrogateEvaluator` - a seeded synthetic stand-in for training whose
  noise level falls as the config's fidelity rises.
* :class:`ExternalEvaluator` - runs a user command once per architecture in a
  prepared work directory and reads back one number.

External-command protocol
-------------------------
For each architecture a work directory ``<work_root>/<key>/`` is created with

``genotype.txt``
    the two-line genotype text (see :mod:`mipbpe.cellspace`).
``bpe.cfg``
    one ``name = value`` line per BPE dimension, in space order.

The command runs with that directory as its working directory and with the
path exported in ``BPE_WORKDIR``; ``{workdir}`` in the command string is also
substituted.  It must write a single decimal number to ``result.txt`` (name
configurable).  ``key`` is the SHA-256 of ``bpe.cfg`` + NUL + ``genotype.txt``;
successful results are cached as ``<cache_dir>/<key>.json`` with fields
``score`` and ``seconds``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cellspace import Genotype, K, edge_count, encode, random_genotype
from .hyperspace import BpeConfig, HyperSpace, config_cost

log = logging.getLogger(__name__)

OK = "ok"
TIMEOUT = "timeout"
EXIT = "exit"
PARSE = "parse"


class EvaluatorError(RuntimeError):
    """Evaluation produced no usable score."""


@dataclass(frozen=True)
class ArchSet:
    genotypes: tuple[Genotype, ...]
    ids: tuple[str, ...]

    def __post_init__(self):
        if not self.genotypes:
            raise ValueError("an architecture set must be non-empty")
        if len(self.ids) != len(self.genotypes):
            raise ValueError("one id per genotype required")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("architecture ids must be unique")

    @classmethod
    def sample(cls, n: int, M: int, rng: np.random.Generator) -> "ArchSet":
        gs = tuple(random_genotype(M, rng) for _ in range(n))
        return cls(gs, tuple(f"arch-{i:03d}" for i in range(n)))

    @classmethod
    def single(cls, g: Genotype) -> "ArchSet":
        return cls((g,), (g.digest(),))

    def __len__(self):
        return len(self.genotypes)

    def to_dict(self) -> dict:
        return {"archs": [{"id": i, "genotype": encode(g)} for i, g in zip(self.ids, self.genotypes)]}

    @classmethod
    def from_dict(cls, data: dict) -> "ArchSet":
        from .cellspace import decode

        entries = data["archs"]
        return cls(tuple(decode(e["genotype"]) for e in entries), tuple(e["id"] for e in entries))


@dataclass
class EvalResult:
    """Scores aligned with the ArchSet; failed entries hold ``None``."""

    scores: list[float | None]
    mean_cost: float
    status: list[str]
    errors: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.scores) != len(self.status):
            raise ValueError("scores and status must align")
        for s, st in zip(self.scores, self.status):
            if (st == OK) != (s is not None):
                raise ValueError("failed entries must carry no score and ok entries a score")

    @property
    def ok_mask(self) -> np.ndarray:
        return np.array([st == OK for st in self.status])

    @property
    def effective_n(self) -> int:
        return int(self.ok_mask.sum())

    def valid(self, min_fraction: float = 0.8) -> bool:
        return self.effective_n >= min_fraction * len(self.scores)


class Evaluator:
    """Base class: ``evaluate(config, archs) -> EvalResult``."""

    space: HyperSpace

    def evaluate(self, config: BpeConfig, archs: ArchSet) -> EvalResult:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


def _stable_seed(*parts) -> int:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class SurrogateModel:
    """Synthetic ground truth.

    ``op_scores`` has shape ``(2, |E|, K)``: the quality contribution of each op
    on each edge of the normal (0) and reduction (1) cell.
    """

    op_scores: np.ndarray
    fidelity_weights: np.ndarray
    bias_weights: np.ndarray
    noise_scale: float
    seed: int = 0
    reference: tuple[int, ...] | None = None
    reference_noise: float = 0.0

    def __post_init__(self):
        ops = np.asarray(self.op_scores, dtype=float)
        object.__setattr__(self, "op_scores", ops)
        object.__setattr__(self, "fidelity_weights", np.asarray(self.fidelity_weights, dtype=float))
        object.__setattr__(self, "bias_weights", np.asarray(self.bias_weights, dtype=float))
        if ops.ndim != 3 or ops.shape[0] != 2 or ops.shape[2] != K:
            raise ValueError(f"op_scores must have shape (2, E, {K})")
        if not np.all(np.isfinite(ops)):
            raise ValueError("op_scores must be finite")
        if self.fidelity_weights.shape != self.bias_weights.shape:
            raise ValueError("fidelity and bias weights must cover the same dimensions")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be >= 0")
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(int(i) for i in self.reference))

    @property
    def M(self) -> int:
        E = self.op_scores.shape[1]
        m = 1
        while edge_count(m) < E:
            m += 1
        return m

    @classmethod
    def generate(
        cls,
        space: HyperSpace,
        M: int = 4,
        seed: int = 0,
        fidelity: dict[str, float] | None = None,
        bias: dict[str, float] | None = None,
        noise_scale: float = 0.1,
        op_scale: float = 0.3,
        reference: BpeConfig | None = None,
        reference_noise: float = 0.0,
    ) -> "SurrogateModel":
        """Random op weights ~ N(0, op_scale) plus named per-dimension weights."""
        rng = np.random.default_rng(_stable_seed("surrogate", seed))
        ops = rng.normal(0.0, op_scale, size=(2, edge_count(M), K))
        fw = np.zeros(len(space))
        bw = np.zeros(len(space))
        for name, w in (fidelity or {}).items():
            fw[space.dim_index(name)] = w
        for name, w in (bias or {}).items():
            bw[space.dim_index(name)] = w
        return cls(ops, fw, bw, noise_scale, seed,
                   tuple(reference) if reference is not None else None, reference_noise)

    def true_quality(self, g: Genotype) -> float:
        ops = g.op_matrix()
        if ops.shape != self.op_scores.shape[:2]:
            raise ValueError(f"genotype shape {ops.shape} does not match model {self.op_scores.shape[:2]}")
        total = self.op_scores[0, np.arange(ops.shape[1]), ops[0]].sum()
        total += self.op_scores[1, np.arange(ops.shape[1]), ops[1]].sum()
        return _sigmoid(float(total))

    def noise_sd(self, space: HyperSpace, config: BpeConfig) -> float:
        if self.reference is not None and tuple(config) == self.reference:
            return self.reference_noise
        fid = float(np.dot(self.fidelity_weights, space.normalized_levels(config)))
        return self.noise_scale / (1.0 + fid)

    def bias(self, space: HyperSpace, config: BpeConfig) -> float:
        # cheap levels underestimate; the top level of every dim carries no bias
        return -float(np.dot(self.bias_weights, 1.0 - space.normalized_levels(config)))

    def to_dict(self) -> dict:
        return {
            "op_scores": self.op_scores.tolist(),
            "fidelity_weights": self.fidelity_weights.tolist(),
            "bias_weights": self.bias_weights.tolist(),
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "reference": list(self.reference) if self.reference is not None else None,
            "reference_noise": self.reference_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        return cls(
            np.array(d["op_scores"]), np.array(d["fidelity_weights"]), np.array(d["bias_weights"]),
            float(d["noise_scale"]), int(d["seed"]),
            tuple(d["reference"]) if d.get("reference") is not None else None,
            float(d.get("reference_noise", 0.0)),
        )


def surrogate_true_quality(model: SurrogateModel, g: Genotype) -> float:
    return model.true_quality(g)


def surrogate_evaluate(model: SurrogateModel, space: HyperSpace, config: BpeConfig, archs: ArchSet) -> EvalResult:
    space.validate_config(config)
    sd = model.noise_sd(space, config)
    b = model.bias(space, config)
    scores = []
    for aid, g in zip(archs.ids, archs.genotypes):
        eps = 0.0
        if sd > 0:
            rng = np.random.default_rng(_stable_seed(model.seed, config.key(), aid))
            eps = sd * float(rng.standard_normal())
        scores.append(model.true_quality(g) + b + eps)
    return EvalResult(scores, config_cost(space, config), [OK] * len(scores))


class SurrogateEvaluator(Evaluator):
    def __init__(self, model: SurrogateModel, space: HyperSpace):
        self.model = model
        self.space = space
        self.calls = 0

    def evaluate(self, config: BpeConfig, archs: ArchSet) -> EvalResult:
        self.calls += 1
        return surrogate_evaluate(self.model, self.space, config, archs)

    def describe(self) -> dict:
        return {"kind": "surrogate", "model": self.model.to_dict()}


def render_bpe_cfg(space: HyperSpace, config: BpeConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in space.config_values(config).items())


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class ExternalEvaluator(Evaluator):
    """Delegates each architecture to a shell command (see module docstring)."""

    def __init__(
        self,
        space: HyperSpace,
        command: str,
        work_root: str | Path,
        cache_dir: str | Path | None = None,
        timeout: float = 3600.0,
        parallelism: int = 1,
        result_file: str = "result.txt",
    ):
        self.space = space
        self.command = command
        self.work_root = Path(work_root)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else self.work_root / "cache"
        self.timeout = timeout
        self.parallelism = max(1, int(parallelism))
        self.result_file = result_file
        self.invocations = 0
        self._lock = threading.Lock()

    def describe(self) -> dict:
        return {
            "kind": "external",
            "command": self.command,
            "timeout": self.timeout,
            "parallelism": self.parallelism,
            "result_file": self.result_file,
        }

    @staticmethod
    def cache_key(cfg_text: str, geno_text: str) -> str:
        return hashlib.sha256((cfg_text + "\0" + geno_text).encode()).hexdigest()

    def _run_one(self, cfg_text: str, g: Genotype, aid: str) -> tuple[str, float | None, float, str]:
        geno_text = encode(g) + "\n"
        key = self.cache_key(cfg_text, geno_text)
        cached = self.cache_dir / f"{key}.json"
        if cached.exists():
            try:
                hit = json.loads(cached.read_text(encoding="utf-8"))
                return OK, float(hit["score"]), float(hit["seconds"]), ""
            except (ValueError, KeyError):
                log.warning("ignoring corrupt cache entry %s", cached)

        workdir = self.work_root / key
        workdir.mkdir(parents=True, exist_ok=True)
        (workdir / "genotype.txt").write_text(geno_text, encoding="utf-8")
        (workdir / "bpe.cfg").write_text(cfg_text, encoding="utf-8")
        result = workdir / self.result_file
        if result.exists():
            result.unlink()
        env = dict(os.environ, BPE_WORKDIR=str(workdir.resolve()))
        cmd = self.command.replace("{workdir}", str(workdir.resolve()))
        with self._lock:
            self.invocations += 1
        start = time.perf_counter()
        try:
            proc = subprocess.run(cmd, shell=True, cwd=workdir, env=env, timeout=self.timeout,
                                  capture_output=True, text=True)
        except subprocess.TimeoutExpired:
            elapsed = time.perf_counter() - start
            return TIMEOUT, None, elapsed, f"{aid}: command timed out after {self.timeout}s"
        elapsed = time.perf_counter() - start
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1:] if proc.stderr else []
            return EXIT, None, elapsed, f"{aid}: command exited with {proc.returncode} {' '.join(tail)}".rstrip()
        try:
            score = float(result.read_text(encoding="utf-8").strip())
            if not math.isfinite(score):
                raise ValueError("non-finite")
        except (OSError, ValueError):
            return PARSE, None, elapsed, f"{aid}: could not parse a number from {self.result_file}"
        _atomic_write(cached, json.dumps({"score": score, "seconds": elapsed}))
        return OK, score, elapsed, ""

    def evaluate(self, config: BpeConfig, archs: ArchSet) -> EvalResult:
        self.space.validate_config(config)
        cfg_text = render_bpe_cfg(self.space, config)
        jobs = list(zip(archs.genotypes, archs.ids))
        if self.parallelism > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                outs = list(pool.map(lambda j: self._run_one(cfg_text, *j), jobs))
        else:
            outs = [self._run_one(cfg_text, g, aid) for g, aid in jobs]
        status = [o[0] for o in outs]
        scores = [o[1] for o in outs]
        errors = {aid: o[3] for aid, o in zip(archs.ids, outs) if o[0] != OK}
        for msg in errors.values():
            log.warning(msg)
        if all(st != OK for st in status):
            raise EvaluatorError(f"all {len(status)} architectures failed: " + "; ".join(errors.values()))
        seconds = [o[2] for o in outs]
        # wall-clock can round to 0 for trivial commands; keep the cost positive
        mean_cost = max(float(np.mean(seconds)), 1e-9)
        return EvalResult(scores, mean_cost, status, errors)


class CountingEvaluator(Evaluator):
    """Wraps another evaluator and counts architecture-set evaluations."""

    def __init__(self, inner: Evaluator):
        self.inner = inner
        self.space = inner.space
        self.calls = 0

    def evaluate(self, config: BpeConfig, archs: ArchSet) -> EvalResult:
        self.calls += 1
        return self.inner.evaluate(config, archs)

    def describe(self) -> dict:
        return self.inner.describe()


def scores_array(result: EvalResult) -> np.ndarray:
    return np.array([np.nan if s is None else s for s in result.scores], dtype=float)


def common_ok(results: Sequence[EvalResult]) -> np.ndarray:
    mask = np.ones(len(results[0].scores), dtype=bool)
    for r in results:
        mask &= r.ok_mask
    return mask
