"""Architecture search strategies driven by a fixed BPE config.

All strategies score genotypes through :class:`ArchScorer`, which caches by
genotype and counts evaluator invocations; budgets count cache misses only.
Each strategy also stops after ``max_steps`` proposals (default
``20 * max_evaluations``) so a converged sampler that keeps hitting the cache
still terminates.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cellspace import K, Genotype, edge_count, encode, genotype_from_matrix, mutate, random_genotype
from .evaluators import ArchSet, Evaluator, EvaluatorError
from .hyperspace import BpeConfig


@dataclass(frozen=True)
class SearchBudget:
    max_evaluations: int
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")

    @property
    def step_limit(self) -> int:
        return self.max_steps if self.max_steps is not None else 20 * self.max_evaluations


@dataclass(frozen=True)
class TraceEntry:
    step: int
    genotype: str
    score: float
    evaluations: int
    cached: bool = False


@dataclass
class SearchResult:
    best: Genotype
    best_score: float
    trace: list[TraceEntry]
    policy: "Policy | None" = None

    @property
    def evaluations(self) -> int:
        return self.trace[-1].evaluations if self.trace else 0


class ArchScorer:
    """Single-genotype scoring under one config, with a cache."""

    def __init__(self, evaluator: Evaluator, config: BpeConfig):
        self.evaluator = evaluator
        self.config = config
        self.cache: dict[str, float] = {}
        self.evaluations = 0

    def __call__(self, g: Genotype) -> tuple[float, bool]:
        key = encode(g)
        if key in self.cache:
            return self.cache[key], True
        res = self.evaluator.evaluate(self.config, ArchSet.single(g))
        self.evaluations += 1
        score = res.scores[0]
        if score is None:
            raise EvaluatorError(f"evaluation failed: {res.errors}")
        self.cache[key] = score
        return score, False


def arch_score(evaluator: Evaluator, config: BpeConfig, g: Genotype, scorer: ArchScorer | None = None) -> float:
    scorer = scorer or ArchScorer(evaluator, config)
    return scorer(g)[0]


class _Tracker:
    def __init__(self, scorer: ArchScorer, budget: SearchBudget):
        self.scorer = scorer
        self.budget = budget
        self.trace: list[TraceEntry] = []
        self.best: Genotype | None = None
        self.best_score = -np.inf

    @property
    def exhausted(self) -> bool:
        return (self.scorer.evaluations >= self.budget.max_evaluations
                or len(self.trace) >= self.budget.step_limit)

    def score(self, g: Genotype) -> float:
        s, cached = self.scorer(g)
        self.trace.append(TraceEntry(len(self.trace), encode(g), s, self.scorer.evaluations, cached))
        if s > self.best_score:
            self.best, self.best_score = g, s
        return s

    def result(self, policy=None) -> SearchResult:
        return SearchResult(self.best, float(self.best_score), self.trace, policy)


def random_search(M: int, evaluator: Evaluator, config: BpeConfig, budget: SearchBudget) -> SearchResult:
    """I.i.d. uniform genotypes; keeps the best."""
    rng = np.random.default_rng(budget.seed)
    t = _Tracker(ArchScorer(evaluator, config), budget)
    while not t.exhausted:
        t.score(random_genotype(M, rng))
    return t.result()


def evolution_search(
    M: int,
    evaluator: Evaluator,
    config: BpeConfig,
    budget: SearchBudget,
    population: int = 50,
    sample_size: int = 10,
) -> SearchResult:
    """Aging evolution: tournament of ``sample_size``, one-edge mutation,
    the oldest member dies each step."""
    if sample_size > population:
        raise ValueError("sample_size must not exceed population")
    if budget.max_evaluations < population:
        raise ValueError("budget must cover the initial population")
    rng = np.random.default_rng(budget.seed)
    t = _Tracker(ArchScorer(evaluator, config), budget)
    pop: deque[tuple[Genotype, float]] = deque()
    while len(pop) < population and not t.exhausted:
        g = random_genotype(M, rng)
        pop.append((g, t.score(g)))
    while not t.exhausted:
        picks = rng.choice(len(pop), size=sample_size, replace=False)
        parent = max((pop[i] for i in picks), key=lambda m: m[1])[0]
        child = mutate(parent, rng)
        pop.append((child, t.score(child)))
        pop.popleft()
    return t.result()


@dataclass
class Policy:
    """Independent categorical over ops for every edge of both cells."""

    logits: np.ndarray
    lr: float = 0.05
    baseline_decay: float = 0.9
    baseline: float | None = None
    baseline_history: list[float] = field(default_factory=list)

    @classmethod
    def uniform(cls, M: int, lr: float = 0.05, baseline_decay: float = 0.9) -> "Policy":
        return cls(np.zeros((2, edge_count(M), K)), lr, baseline_decay)

    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.probs(), axis=-1)
        u = rng.random(cdf.shape[:-1])
        return np.minimum((cdf < u[..., None]).sum(axis=-1), K - 1)

    def update(self, ops: np.ndarray, reward: float) -> float:
        """REINFORCE step against the moving-average baseline; returns the advantage."""
        adv = 0.0 if self.baseline is None else reward - self.baseline
        if adv != 0.0 and self.lr != 0.0:
            grad = -self.probs()
            np.put_along_axis(grad, ops[..., None], np.take_along_axis(grad, ops[..., None], -1) + 1.0, -1)
            self.logits = self.logits + self.lr * adv * grad
            if not np.all(np.isfinite(self.logits)):
                raise FloatingPointError(
                    f"policy logits diverged (reward={reward!r}, advantage={adv!r}, lr={self.lr})")
        if self.baseline is None:
            self.baseline = float(reward)
        else:
            self.baseline = self.baseline_decay * self.baseline + (1 - self.baseline_decay) * float(reward)
        self.baseline_history.append(self.baseline)
        return adv


def rl_search(
    M: int,
    evaluator: Evaluator,
    config: BpeConfig,
    budget: SearchBudget,
    lr: float = 0.05,
    baseline_decay: float = 0.9,
) -> SearchResult:
    """REINFORCE over per-edge categoricals; reward is the BPE score."""
    rng = np.random.default_rng(budget.seed)
    policy = Policy.uniform(M, lr, baseline_decay)
    t = _Tracker(ArchScorer(evaluator, config), budget)
    while not t.exhausted:
        ops = policy.sample(rng)
        reward = t.score(genotype_from_matrix(M, ops))
        policy.update(ops, reward)
    return t.result(policy)


STRATEGIES = {"rs": random_search, "ea": evolution_search, "rl": rl_search}


def write_trace(path: str | Path, result: SearchResult) -> None:
    """Line-delimited ``{step, genotype, score, evaluations, cached}`` records."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in result.trace:
            fh.write(json.dumps({"step": e.step, "genotype": e.genotype, "score": e.score,
                                 "evaluations": e.evaluations, "cached": e.cached}) + "\n")


def read_trace(path: str | Path) -> list[TraceEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(TraceEntry(d["step"], d["genotype"], d["score"], d["evaluations"], d.get("cached", False)))
    return out
