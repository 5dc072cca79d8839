"""Ten families of 1-D test functions and seeded sample sets drawn from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from fmeval.domain import ContextBlock, Example, FeatureSchema, SeriesDataset, TabularDataset
from fmeval.errors import DomainError, InvalidInput
from fmeval.transforms import TaskDescription, base_task, decontextualize
from fmeval.util import atomic_write_text, rng_for


class Family(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    LOGARITHMIC = "logarithmic"
    SINE = "sine"
    POWER_LAW = "power_law"
    GAUSSIAN = "gaussian"
    PIECEWISE = "piecewise"
    STEP = "step"
    EXPONENTIAL = "exponential"
    PERIODIC_LINEAR = "periodic_linear"


# parameter name -> (default, low, high) for random draws
PARAM_RANGES: dict[Family, dict[str, tuple[float, float, float]]] = {
    Family.LINEAR: {"a": (1.5, -2.0, 2.0), "b": (-0.5, -1.0, 1.0)},
    Family.QUADRATIC: {"a": (0.1, -0.3, 0.3), "b": (-0.8, -1.0, 1.0), "c": (1.0, -1.0, 1.0)},
    Family.LOGARITHMIC: {"a": (1.5, 0.5, 2.0), "b": (0.5, -1.0, 1.0)},
    Family.SINE: {"A": (1.0, 0.5, 2.0), "omega": (1.0, 0.5, 2.0), "phi": (0.0, 0.0, 2 * math.pi)},
    Family.POWER_LAW: {"a": (0.5, 0.2, 1.0), "p": (1.5, 0.3, 3.0)},
    Family.GAUSSIAN: {"A": (2.0, 0.5, 2.0), "mu": (5.0, 2.0, 8.0), "sigma": (1.5, 0.5, 2.0)},
    Family.PIECEWISE: {"a1": (1.0, -2.0, 2.0), "a2": (-1.0, -2.0, 2.0), "b": (0.0, -1.0, 1.0),
                       "c": (5.0, 3.0, 7.0)},
    Family.STEP: {"t": (5.0, 3.0, 7.0), "c1": (0.0, -1.0, 1.0), "c2": (2.0, 1.0, 3.0)},
    Family.EXPONENTIAL: {"a": (0.5, 0.5, 2.0), "b": (0.3, -0.5, 0.3)},
    Family.PERIODIC_LINEAR: {"a": (0.5, -1.0, 1.0), "b": (1.0, 0.5, 2.0), "omega": (2.0, 0.5, 3.0)},
}

DEFAULT_RANGE = (0.0, 10.0)
DEFAULT_RANGES = {Family.LOGARITHMIC: (0.1, 10.0)}


@dataclass(frozen=True)
class FunctionSpec:
    family: Family
    params: Mapping[str, float] = field(default_factory=dict)
    x_range: tuple[float, float] = DEFAULT_RANGE
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        try:
            fam = Family(self.family)
        except ValueError:
            raise InvalidInput(f"unknown function family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        defaults = {k: v[0] for k, v in PARAM_RANGES[fam].items()}
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise InvalidInput(f"{fam.value} has no parameters {sorted(unknown)}")
        object.__setattr__(self, "params", {**defaults, **{k: float(v) for k, v in self.params.items()}})
        lo, hi = (float(v) for v in self.x_range)
        object.__setattr__(self, "x_range", (lo, hi))
        if not lo < hi:
            raise InvalidInput(f"x_range needs lo < hi, got {self.x_range}")
        if fam is Family.LOGARITHMIC and lo <= 0:
            raise InvalidInput("logarithmic functions need x_range lo > 0")
        if fam is Family.POWER_LAW and lo < 0:
            raise InvalidInput("power-law functions need x_range lo >= 0")
        if self.noise_sd < 0:
            raise InvalidInput("noise_sd must be non-negative")

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": dict(self.params),
                "x_range": list(self.x_range), "noise_sd": self.noise_sd, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FunctionSpec":
        fam = Family(d["family"]) if d["family"] in Family._value2member_map_ else d["family"]
        x_range = tuple(d.get("x_range") or DEFAULT_RANGES.get(fam, DEFAULT_RANGE))
        return cls(fam, dict(d.get("params") or {}), x_range, float(d.get("noise_sd", 0.0)),
                   int(d.get("seed", 0)))


def make_spec(family: str | Family, params: Mapping[str, float] | None = None, *,
              x_range: tuple[float, float] | None = None, noise_sd: float = 0.0, seed: int = 0) -> FunctionSpec:
    """Spec with the family's default x range unless one is given."""
    fam = Family(family) if isinstance(family, str) and family in Family._value2member_map_ else family
    if x_range is None:
        x_range = DEFAULT_RANGES.get(fam, DEFAULT_RANGE) if isinstance(fam, Family) else DEFAULT_RANGE
    return FunctionSpec(fam, dict(params or {}), x_range, noise_sd, seed)


def random_spec(family: str | Family, seed: int, noise_sd: float = 0.0) -> FunctionSpec:
    fam = Family(family)
    rng = rng_for(seed, "spec", fam.value)
    params = {k: float(rng.uniform(lo, hi)) for k, (_, lo, hi) in PARAM_RANGES[fam].items()}
    return make_spec(fam, params, noise_sd=noise_sd, seed=seed)


def eval_function(spec: FunctionSpec, x):
    """Noiseless value of the function at x (scalar or array)."""
    p = spec.params
    xa = np.asarray(x, dtype=float)
    fam = spec.family
    if fam is Family.LOGARITHMIC and np.any(xa <= 0):
        raise DomainError("logarithm of a non-positive x")
    if fam is Family.POWER_LAW and np.any(xa < 0):
        raise DomainError("power law of a negative x")
    if fam is Family.LINEAR:
        y = p["a"] * xa + p["b"]
    elif fam is Family.QUADRATIC:
        y = p["a"] * xa**2 + p["b"] * xa + p["c"]
    elif fam is Family.LOGARITHMIC:
        y = p["a"] * np.log(xa) + p["b"]
    elif fam is Family.SINE:
        y = p["A"] * np.sin(p["omega"] * xa + p["phi"])
    elif fam is Family.POWER_LAW:
        y = p["a"] * xa ** p["p"]
    elif fam is Family.GAUSSIAN:
        y = p["A"] * np.exp(-((xa - p["mu"]) ** 2) / (2 * p["sigma"] ** 2))
    elif fam is Family.PIECEWISE:
        # continuous at the breakpoint c
        y = np.where(xa < p["c"], p["b"] + p["a1"] * xa, p["b"] + p["a1"] * p["c"] + p["a2"] * (xa - p["c"]))
    elif fam is Family.STEP:
        y = np.where(xa < p["t"], p["c1"], p["c2"])
    elif fam is Family.EXPONENTIAL:
        y = p["a"] * np.exp(p["b"] * xa)
    elif fam is Family.PERIODIC_LINEAR:
        y = p["a"] * xa + p["b"] * np.sin(p["omega"] * xa)
    else:  # pragma: no cover - Family is closed
        raise InvalidInput(f"unknown family {fam}")
    return float(y) if np.ndim(y) == 0 else y


@dataclass(frozen=True)
class SampleSet:
    spec: FunctionSpec
    points: tuple[tuple[float, float], ...]

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def x(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def y(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def gen_sampleset(spec: FunctionSpec, n: int = 25, random_x: bool = False) -> SampleSet:
    if n < 2:
        raise InvalidInput("a sample set needs at least 2 points")
    lo, hi = spec.x_range
    if random_x:
        x = np.sort(rng_for(spec.seed, "synthetic-x").uniform(lo, hi, size=n))
    else:
        x = np.linspace(lo, hi, n)
    y = np.asarray(eval_function(spec, x), dtype=float)
    if spec.noise_sd > 0:
        y = y + rng_for(spec.seed, "synthetic-noise").normal(0.0, spec.noise_sd, size=n)
    return SampleSet(spec, tuple(zip(x.tolist(), y.tolist())))


def _family_label(fam: Family) -> str:
    return fam.value.replace("_", " ")


def synthetic_context(spec: FunctionSpec) -> ContextBlock:
    label = _family_label(spec.family)
    return ContextBlock(
        domain_name=f"mathematics, in particular {label} functions",
        task_prose=(f"Below you are asked to predict the value y of a {label} function of x "
                    "from samples of the same function."),
        feature_explanations={"x": "the input of the function", "y": "the function value"},
    )


def to_dataset(points: Sequence[tuple[float, float]], spec: FunctionSpec, rid_start: int = 0) -> TabularDataset:
    rows = tuple(Example((float(x),), float(y), rid_start + i) for i, (x, y) in enumerate(points))
    return TabularDataset((FeatureSchema("x"),), rows, FeatureSchema("y"), synthetic_context(spec),
                          f"synthetic-{spec.family.value}")


@dataclass(frozen=True)
class SyntheticTask:
    train: TabularDataset
    queries: TabularDataset  # targets are the hidden noiseless ground truth
    task: TaskDescription


def default_query_xs(spec: FunctionSpec, k: int = 10) -> np.ndarray:
    """Interpolation queries: midpoints between k+1 evenly spaced grid cells."""
    lo, hi = spec.x_range
    edges = np.linspace(lo, hi, k + 1)
    return (edges[:-1] + edges[1:]) / 2


def make_synthetic_task(spec: FunctionSpec, query_xs=None, n: int = 25, random_x: bool = False) -> SyntheticTask:
    samples = gen_sampleset(spec, n, random_x)
    qx = default_query_xs(spec) if query_xs is None else np.asarray(query_xs, dtype=float)
    lo, hi = spec.x_range
    if np.any(qx < lo) or np.any(qx > hi):
        raise InvalidInput("query points must lie inside x_range")
    truth = np.asarray(eval_function(spec, qx), dtype=float).reshape(-1)
    train = to_dataset(samples.points, spec)
    queries = to_dataset(list(zip(qx.tolist(), truth.tolist())), spec, rid_start=n)
    return SyntheticTask(train, queries, decontextualize(base_task(train)))


def dumps_spec(spec: FunctionSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


def load_spec(path: str | Path) -> FunctionSpec:
    return FunctionSpec.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


def write_sampleset(samples: SampleSet, path: str | Path) -> None:
    from fmeval.domain import dumps_series

    atomic_write_text(path, dumps_series(SeriesDataset(samples.points)))
