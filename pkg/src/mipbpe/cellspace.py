"""Cell-based architecture space: fully connected DAG cells, one op per edge.

Nodes ``-1`` and ``0`` are the two cell inputs; intermediate nodes are
``1..M``.  Every pair ``src < dst`` with ``dst >= 1`` is an edge, so a cell
has ``sum_{j=1..M} (j + 1)`` edges.  Edges are kept in canonical order
(``dst`` ascending, then ``src`` ascending).

Text form, one line per cell (normal first, then reduction)::

    -1->1:sep_conv_3x3;0->1:none;-1->2:skip_connect;...
"""

from __future__ import annotations

import hashlib
from typing import NamedTuple

import numpy as np

OPS = (
    "dil_conv_3x3",
    "dil_conv_5x5",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "max_pool_3x3",
    "avg_pool_3x3",
    "none",
    "skip_connect",
)
OP_INDEX = {op: i for i, op in enumerate(OPS)}
K = len(OPS)


class GenotypeError(ValueError):
    pass


class Edge(NamedTuple):
    src: int
    dst: int
    op: str


def edge_count(M: int) -> int:
    if M < 1:
        raise ValueError("a cell needs at least one intermediate node")
    return sum(j + 1 for j in range(1, M + 1))


def space_size(M: int, K: int = K) -> int:
    """Exact number of (normal, reduction) cell structures, ``2 * K**|E|``."""
    if K < 1:
        raise ValueError("K must be positive")
    return 2 * K ** edge_count(M)


def edge_pairs(M: int) -> list[tuple[int, int]]:
    return [(src, dst) for dst in range(1, M + 1) for src in range(-1, dst)]


class CellGenotype(NamedTuple):
    M: int
    edges: tuple[Edge, ...]

    @classmethod
    def from_ops(cls, M: int, ops) -> "CellGenotype":
        pairs = edge_pairs(M)
        if len(ops) != len(pairs):
            raise GenotypeError(f"expected {len(pairs)} ops for M={M}, got {len(ops)}")
        edges = []
        for (s, d), op in zip(pairs, ops):
            if not isinstance(op, str):
                op = OPS[int(op)]
            if op not in OP_INDEX:
                raise GenotypeError(f"unknown op {op!r}")
            edges.append(Edge(s, d, op))
        return cls(M, tuple(edges))

    @property
    def op_indices(self) -> list[int]:
        return [OP_INDEX[e.op] for e in self.edges]

    def validate(self) -> None:
        if self.M < 1:
            raise GenotypeError("M must be >= 1")
        if len(self.edges) != edge_count(self.M):
            raise GenotypeError(f"cell with M={self.M} needs {edge_count(self.M)} edges, got {len(self.edges)}")
        seen = set()
        for e in self.edges:
            if e.src >= e.dst:
                raise GenotypeError(f"edge {e.src}->{e.dst} violates src < dst")
            if e.src < -1 or e.dst < 1 or e.dst > self.M:
                raise GenotypeError(f"edge {e.src}->{e.dst} out of range for M={self.M}")
            if e.op not in OP_INDEX:
                raise GenotypeError(f"unknown op {e.op!r}")
            if (e.src, e.dst) in seen:
                raise GenotypeError(f"duplicate edge {e.src}->{e.dst}")
            seen.add((e.src, e.dst))

    def encode(self) -> str:
        return ";".join(f"{e.src}->{e.dst}:{e.op}" for e in self.edges)


class Genotype(NamedTuple):
    normal: CellGenotype
    reduction: CellGenotype

    @property
    def M(self) -> int:
        return self.normal.M

    @property
    def cells(self) -> tuple[CellGenotype, CellGenotype]:
        return (self.normal, self.reduction)

    def validate(self) -> None:
        if self.normal.M != self.reduction.M:
            raise GenotypeError("normal and reduction cells must share M")
        self.normal.validate()
        self.reduction.validate()

    def op_matrix(self) -> np.ndarray:
        """``(2, |E|)`` integer array of op indices."""
        return np.array([self.normal.op_indices, self.reduction.op_indices], dtype=np.int64)

    def digest(self) -> str:
        return hashlib.sha256(encode(self).encode()).hexdigest()[:16]


def genotype_from_matrix(M: int, ops: np.ndarray) -> Genotype:
    return Genotype(CellGenotype.from_ops(M, ops[0]), CellGenotype.from_ops(M, ops[1]))


def random_genotype(M: int, rng: np.random.Generator) -> Genotype:
    """Uniform op on every edge of both cells, independently."""
    E = edge_count(M)
    return genotype_from_matrix(M, rng.integers(0, K, size=(2, E)))


def mutate(g: Genotype, rng: np.random.Generator) -> Genotype:
    """Reassign one uniformly chosen edge (across both cells) to a different op."""
    ops = g.op_matrix()
    E = ops.shape[1]
    flat = int(rng.integers(0, 2 * E))
    cell, edge = divmod(flat, E)
    old = ops[cell, edge]
    new = int(rng.integers(0, K - 1))
    ops[cell, edge] = new if new < old else new + 1
    return genotype_from_matrix(g.M, ops)


def hamming(a: Genotype, b: Genotype) -> int:
    return int(np.sum(a.op_matrix() != b.op_matrix()))


def encode(g: Genotype) -> str:
    return g.normal.encode() + "\n" + g.reduction.encode()


def _decode_cell(line: str, M: int | None) -> CellGenotype:
    edges = []
    for part in line.strip().split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            arrow, op = part.rsplit(":", 1)
            src, dst = arrow.split("->")
            edges.append(Edge(int(src), int(dst), op.strip()))
        except ValueError:
            raise GenotypeError(f"malformed edge {part!r}") from None
    if not edges:
        raise GenotypeError("empty cell")
    if M is None:
        M = max(e.dst for e in edges)
    cell = CellGenotype(M, tuple(edges))
    cell.validate()
    order = {p: i for i, p in enumerate(edge_pairs(M))}
    return CellGenotype(M, tuple(sorted(edges, key=lambda e: order[(e.src, e.dst)])))


def decode(text: str, M: int | None = None) -> Genotype:
    """Parse the two-line text form; ``M`` is inferred when not given."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != 2:
        raise GenotypeError(f"expected 2 cell lines, got {len(lines)}")
    normal = _decode_cell(lines[0], M)
    reduction = _decode_cell(lines[1], M if M is not None else normal.M)
    g = Genotype(normal, reduction)
    g.validate()
    return g
