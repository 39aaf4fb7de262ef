"""Budgeted performance-estimation (BPE) hyper-parameter space.

A :class:`HyperSpace` is an ordered product of categorical dimensions.  Each
dimension carries ordered levels, a numeric encoding per level (used by the
regression forest for threshold splits) and a nonnegative cost proxy per
level (used by the lowest-cost sampling law and the cost model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml


class SpaceError(ValueError):
    """Raised for malformed dimensions, spaces or configurations."""


@dataclass(frozen=True)
class Dimension:
    name: str
    values: tuple
    encodings: tuple[float, ...]
    costs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "encodings", tuple(float(e) for e in self.encodings))
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        if not self.name:
            raise SpaceError("dimension name must be non-empty")
        if not self.values:
            raise SpaceError(f"{self.name}: at least one level required")
        if len(self.encodings) != len(self.values) or len(self.costs) != len(self.values):
            raise SpaceError(f"{self.name}: values, encodings and costs must have equal length")
        if any(b <= a for a, b in zip(self.encodings, self.encodings[1:])):
            raise SpaceError(f"{self.name}: encodings must be strictly increasing")
        if any(not math.isfinite(c) or c < 0 for c in self.costs):
            raise SpaceError(f"{self.name}: costs must be finite and >= 0")

    @classmethod
    def numeric(cls, name: str, values: Sequence[float], costs: Sequence[float]) -> "Dimension":
        """Dimension whose levels are their own encodings."""
        return cls(name, tuple(values), tuple(float(v) for v in values), tuple(costs))

    def __len__(self) -> int:
        return len(self.values)

    def index_of(self, value: Any) -> int:
        for i, v in enumerate(self.values):
            if v == value or str(v) == str(value):
                return i
        raise SpaceError(f"{self.name}: unknown level {value!r} (levels: {list(self.values)})")

    def min_cost_level(self) -> int:
        # ties resolve to the lowest encoding, i.e. the lowest index
        return int(np.argmin(self.costs))


@dataclass(frozen=True)
class BpeConfig:
    """One point of the space, stored as a level index per dimension."""

    assignment: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(i) for i in self.assignment))

    def __iter__(self):
        return iter(self.assignment)

    def __len__(self):
        return len(self.assignment)

    def __getitem__(self, i):
        return self.assignment[i]

    def key(self) -> str:
        return "-".join(str(i) for i in self.assignment)


@dataclass(frozen=True)
class PinMask:
    """Per-dimension optional fixed level index."""

    pins: tuple[int | None, ...]

    @classmethod
    def empty(cls, n: int) -> "PinMask":
        return cls((None,) * n)

    def pin(self, dim: int, level: int) -> "PinMask":
        if self.pins[dim] is not None:
            raise SpaceError(f"dimension {dim} is already pinned")
        pins = list(self.pins)
        pins[dim] = int(level)
        return PinMask(tuple(pins))

    @property
    def pinned(self) -> list[int]:
        return [i for i, p in enumerate(self.pins) if p is not None]

    @property
    def unpinned(self) -> list[int]:
        return [i for i, p in enumerate(self.pins) if p is None]

    def __len__(self):
        return len(self.pins)


@dataclass(frozen=True)
class HyperSpace:
    dims: tuple[Dimension, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise SpaceError("a space needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise SpaceError(f"duplicate dimension names in {names}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def dim_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SpaceError(f"unknown dimension {name!r}") from None

    def validate_config(self, config: BpeConfig) -> None:
        if len(config) != len(self.dims):
            raise SpaceError(f"config has {len(config)} entries, space has {len(self.dims)} dimensions")
        for d, i in zip(self.dims, config):
            if not 0 <= i < len(d):
                raise SpaceError(f"{d.name}: level index {i} out of range [0, {len(d)})")

    def validate_mask(self, mask: PinMask) -> None:
        if len(mask) != len(self.dims):
            raise SpaceError("pin mask length does not match the space")
        for d, p in zip(self.dims, mask.pins):
            if p is not None and not 0 <= p < len(d):
                raise SpaceError(f"{d.name}: pinned index {p} out of range")

    def config_from_values(self, values: Mapping[str, Any], defaults: BpeConfig | None = None) -> BpeConfig:
        """Build a config from ``{dimension name: level value}``.

        Dimensions missing from ``values`` fall back to ``defaults`` (or the
        minimum-cost level when no defaults are given).
        """
        unknown = set(values) - set(self.names)
        if unknown:
            raise SpaceError(f"unknown dimensions: {sorted(unknown)}")
        out = []
        for i, d in enumerate(self.dims):
            if d.name in values:
                out.append(d.index_of(values[d.name]))
            elif defaults is not None:
                out.append(defaults[i])
            else:
                out.append(d.min_cost_level())
        return BpeConfig(tuple(out))

    def config_values(self, config: BpeConfig) -> dict[str, Any]:
        return {d.name: d.values[i] for d, i in zip(self.dims, config)}

    def encode(self, config: BpeConfig, dims: Sequence[int] | None = None) -> np.ndarray:
        """Numeric feature vector (level encodings) for the forest."""
        idx = range(len(self.dims)) if dims is None else dims
        return np.array([self.dims[i].encodings[config[i]] for i in idx], dtype=float)

    def normalized_levels(self, config: BpeConfig) -> np.ndarray:
        """Level index scaled to [0, 1] per dimension (0 for single-level dims)."""
        return np.array(
            [i / (len(d) - 1) if len(d) > 1 else 0.0 for d, i in zip(self.dims, config)]
        )

    def to_dict(self) -> dict:
        return {
            "dimensions": [
                {
                    "name": d.name,
                    "levels": list(d.values),
                    "encodings": list(d.encodings),
                    "costs": list(d.costs),
                }
                for d in self.dims
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "HyperSpace":
        try:
            entries = data["dimensions"]
        except (KeyError, TypeError):
            raise SpaceError("space definition needs a 'dimensions' list") from None
        dims = []
        for entry in entries:
            try:
                name = str(entry["name"])
                levels = list(entry["levels"])
            except (KeyError, TypeError):
                raise SpaceError(f"dimension entry needs 'name' and 'levels': {entry!r}") from None
            encodings = entry.get("encodings")
            if encodings is None:
                try:
                    encodings = [float(v) for v in levels]
                except (TypeError, ValueError):
                    # non-numeric levels default to their position
                    encodings = list(range(len(levels)))
            costs = entry.get("costs", [0.0] * len(levels))
            dims.append(Dimension(name, tuple(levels), tuple(encodings), tuple(costs)))
        return cls(tuple(dims))


def sampling_distribution(dim: Dimension) -> np.ndarray:
    """Lowest-cost categorical law over a dimension's levels.

    ``p_j = exp(-c_j) / sum_k exp(-c_k)`` where ``c`` are the level costs
    min-max scaled to [0, 1].  Equal costs give the uniform distribution.
    """
    costs = np.asarray(dim.costs, dtype=float)
    span = costs.max() - costs.min()
    scaled = (costs - costs.min()) / span if span > 0 else np.zeros_like(costs)
    weights = np.exp(-scaled)
    return weights / weights.sum()


def sample_config(space: HyperSpace, mask: PinMask, rng: np.random.Generator) -> BpeConfig:
    """Draw one config: pinned dims keep their pin, the rest follow
    :func:`sampling_distribution` independently."""
    space.validate_mask(mask)
    out = []
    for d, pin in zip(space.dims, mask.pins):
        if pin is not None:
            out.append(pin)
        else:
            out.append(int(rng.choice(len(d), p=sampling_distribution(d))))
    return BpeConfig(tuple(out))


def config_cost(space: HyperSpace, config: BpeConfig) -> float:
    """Multiplicative cost proxy: product over dims of (1 + level cost)."""
    space.validate_config(config)
    cost = 1.0
    for d, i in zip(space.dims, config):
        cost *= 1.0 + d.costs[i]
    return cost


# Cost proxies: (1 + cost) is the relative slowdown against the cheapest level,
# following epoch x layers x channels^2 x image^2 scaling.  Batch size uses a
# sqrt(256 / batch) throughput penalty; learning rate and cutout are free.
_PRESET = [
    ("epoch", [10, 30, 50, 100, 600], None, [e / 10 - 1 for e in (10, 30, 50, 100, 600)]),
    ("batch_size", [32, 64, 96, 128, 256], None, [math.sqrt(256 / b) - 1 for b in (32, 64, 96, 128, 256)]),
    ("learning_rate", [0.01, 0.025, 0.03, 0.1], None, [0.0] * 4),
    ("layers", [6, 8, 16, 20], None, [n / 6 - 1 for n in (6, 8, 16, 20)]),
    ("float_point", ["half", "full"], [16, 32], [0.0, 1.0]),
    ("channels", [8, 16, 36], None, [(c / 8) ** 2 - 1 for c in (8, 16, 36)]),
    ("cutout", ["off", "on"], [0, 1], [0.0, 0.0]),
    ("image_size", [8, 16, 32], None, [(s / 8) ** 2 - 1 for s in (8, 16, 32)]),
]

REFERENCE_VALUES = {
    "epoch": 600,
    "batch_size": 96,
    "learning_rate": 0.025,
    "layers": 20,
    "float_point": "full",
    "channels": 36,
    "cutout": "on",
    "image_size": 32,
}

# Table 1 settings; float point and cutout are not listed there and are
# assumed full / off.
NAMED_CONFIGS = {
    "bpe-1": {"epoch": 10, "batch_size": 128, "learning_rate": 0.03, "layers": 6,
              "channels": 8, "image_size": 16, "float_point": "full", "cutout": "off"},
    "bpe-2": {"epoch": 30, "batch_size": 128, "learning_rate": 0.03, "layers": 16,
              "channels": 16, "image_size": 16, "float_point": "full", "cutout": "off"},
    "darts": {"epoch": 50, "batch_size": 64, "learning_rate": 0.025, "layers": 8,
              "channels": 16, "image_size": 32, "float_point": "full", "cutout": "off"},
    "reference": REFERENCE_VALUES,
}


def default_preset() -> tuple[HyperSpace, BpeConfig]:
    """The eight-dimension CIFAR-style space and its full-training reference."""
    dims = []
    for name, values, encodings, costs in _PRESET:
        enc = encodings if encodings is not None else [float(v) for v in values]
        dims.append(Dimension(name, tuple(values), tuple(enc), tuple(costs)))
    space = HyperSpace(tuple(dims))
    return space, space.config_from_values(REFERENCE_VALUES)


def named_config(space: HyperSpace, name: str) -> BpeConfig:
    try:
        values = NAMED_CONFIGS[name.lower()]
    except KeyError:
        raise SpaceError(f"unknown named config {name!r}; choose from {sorted(NAMED_CONFIGS)}") from None
    return space.config_from_values(values)


def load_space(path: str | Path) -> tuple[HyperSpace, BpeConfig | None]:
    """Load a space (and optional ``reference`` mapping) from a YAML/JSON file."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise SpaceError(f"{path}: expected a mapping at top level")
    space = HyperSpace.from_dict(data)
    ref = data.get("reference")
    return space, (space.config_from_values(ref) if ref else None)


def dump_space(space: HyperSpace, reference: BpeConfig | None = None) -> str:
    data = space.to_dict()
    if reference is not None:
        data["reference"] = space.config_values(reference)
    return yaml.safe_dump(data, sort_keys=False)
