"""Core data types, dataset I/O and min-max normalization.

Everything here is an immutable value type. Categorical feature values are
stored as level strings; classification targets are stored as the integer
index of the level in ``target_schema.levels``.
"""

from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
import yaml

from fmeval.errors import InvalidData, InvalidSplit

FeatureValue = Union[float, str]

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class EvalMode(str, Enum):
    LIKELIHOOD_ONLY = "likelihood"
    POSTERIOR_FULL = "posterior"


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    kind: str = NUMERIC
    levels: tuple[str, ...] = ()
    unit: str | None = None
    description: str | None = None

    def __post_init__(self):
        if not self.name:
            raise InvalidData("feature name must be non-empty")
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise InvalidData(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise InvalidData(f"categorical feature {self.name!r} has no levels")
            if len(set(self.levels)) != len(self.levels):
                raise InvalidData(f"categorical feature {self.name!r} has duplicate levels")
        elif self.levels:
            raise InvalidData(f"numeric feature {self.name!r} cannot declare levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def level_index(self, value: str) -> int:
        try:
            return self.levels.index(value)
        except ValueError:
            raise InvalidData(f"{value!r} is not a level of {self.name!r}") from None

    def to_dict(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind}
        if self.levels:
            out["levels"] = list(self.levels)
        if self.unit is not None:
            out["unit"] = self.unit
        if self.description is not None:
            out["description"] = self.description
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        return cls(
            name=str(d["name"]),
            kind=d.get("kind", NUMERIC),
            levels=tuple(str(v) for v in d.get("levels", ())),
            unit=d.get("unit"),
            description=d.get("description"),
        )


@dataclass(frozen=True)
class Example:
    features: tuple[FeatureValue, ...]
    target: float | int
    rid: int = -1


@dataclass(frozen=True)
class ContextBlock:
    domain_name: str
    task_prose: str
    feature_explanations: Mapping[str, str] = field(default_factory=dict)
    source_prose: str | None = None
    # how class levels are spoken in verbal prompts, e.g. ">50K" -> "high income"
    label_phrases: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {"domain_name": self.domain_name, "task_prose": self.task_prose}
        if self.source_prose is not None:
            out["source_prose"] = self.source_prose
        if self.label_phrases:
            out["label_phrases"] = dict(self.label_phrases)
        out["feature_explanations"] = dict(self.feature_explanations)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ContextBlock":
        return cls(
            domain_name=str(d.get("domain_name", "")),
            task_prose=str(d.get("task_prose", "")),
            feature_explanations={str(k): str(v) for k, v in (d.get("feature_explanations") or {}).items()},
            source_prose=d.get("source_prose"),
            label_phrases={str(k): str(v) for k, v in (d.get("label_phrases") or {}).items()},
        )


@dataclass(frozen=True)
class TabularDataset:
    schema: tuple[FeatureSchema, ...]
    rows: tuple[Example, ...]
    target_schema: FeatureSchema
    context: ContextBlock | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "rows", tuple(self.rows))
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise InvalidData(f"duplicate feature names in {names}")
        if self.target_schema.name in names:
            raise InvalidData(f"target {self.target_schema.name!r} clashes with a feature name")
        level_sets = [frozenset(f.levels) if f.is_categorical else None for f in self.schema]
        arity = len(self.schema)
        n_classes = len(self.target_schema.levels)
        for row in self.rows:
            if len(row.features) != arity:
                raise InvalidData(f"row {row.rid} has {len(row.features)} values, schema has {arity}")
            for value, levels, feat in zip(row.features, level_sets, self.schema):
                if levels is None:
                    if isinstance(value, str):
                        raise InvalidData(f"row {row.rid}: numeric feature {feat.name!r} got {value!r}")
                elif value not in levels:
                    raise InvalidData(f"row {row.rid}: {value!r} is not a level of {feat.name!r}")
            if self.is_classification and not (isinstance(row.target, (int, np.integer)) and 0 <= row.target < n_classes):
                raise InvalidData(f"row {row.rid}: class index {row.target!r} out of range")

    @property
    def is_classification(self) -> bool:
        return self.target_schema.is_categorical

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    def __len__(self) -> int:
        return len(self.rows)

    def index_of(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise InvalidData(f"no feature named {name!r}") from None

    def column(self, name: str) -> list[FeatureValue]:
        i = self.index_of(name)
        return [r.features[i] for r in self.rows]

    def matrix(self) -> np.ndarray:
        """Feature values as a float array; fails on categorical features."""
        cats = [f.name for f in self.schema if f.is_categorical]
        if cats:
            raise InvalidData(f"categorical features {cats} must be numerized first")
        return np.array([r.features for r in self.rows], dtype=float).reshape(len(self.rows), len(self.schema))

    def targets(self) -> np.ndarray:
        dtype = int if self.is_classification else float
        return np.array([r.target for r in self.rows], dtype=dtype)

    def row_ids(self) -> list[int]:
        return [r.rid for r in self.rows]

    def with_rows(self, rows: Iterable[Example]) -> "TabularDataset":
        return replace(self, rows=tuple(rows))

    def select(self, names: Sequence[str]) -> "TabularDataset":
        """Keep only the named features, in the given order."""
        idx = [self.index_of(n) for n in names]
        rows = [Example(tuple(r.features[i] for i in idx), r.target, r.rid) for r in self.rows]
        return replace(self, schema=tuple(self.schema[i] for i in idx), rows=tuple(rows))

    def class_counts(self) -> dict[int, int]:
        counts = dict.fromkeys(range(len(self.target_schema.levels)), 0)
        for r in self.rows:
            counts[int(r.target)] += 1
        return counts


@dataclass(frozen=True)
class SeriesDataset:
    points: tuple[tuple[float, float], ...]
    x_unit: str = ""
    y_unit: str = ""
    context: ContextBlock | None = None
    name: str = ""

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        for (x0, _), (x1, _) in zip(pts, pts[1:]):
            if not x1 > x0:
                raise InvalidData(f"series x values must increase strictly ({x0} then {x1})")

    @property
    def x(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def y(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def window(self, lo: float = -math.inf, hi: float = math.inf) -> "SeriesDataset":
        """Points with lo <= x < hi."""
        return replace(self, points=tuple(p for p in self.points if lo <= p[0] < hi))


# -- normalization ---------------------------------------------------------------


@dataclass(frozen=True)
class FeatureRange:
    lo: float
    hi: float
    integral: bool = False

    @property
    def degenerate(self) -> bool:
        return self.hi == self.lo


@dataclass(frozen=True)
class NormParams:
    ranges: Mapping[str, FeatureRange]

    def normalize(self, name: str, value: float) -> float:
        r = self.ranges[name]
        if r.degenerate:
            return 0.5
        return (value - r.lo) / (r.hi - r.lo)

    def denormalize(self, name: str, value: float) -> float:
        r = self.ranges[name]
        if r.degenerate:
            return r.lo
        return r.lo + value * (r.hi - r.lo)


def fit_norm_params(dataset: TabularDataset) -> NormParams:
    ranges = {}
    for i, feat in enumerate(dataset.schema):
        if feat.is_categorical:
            continue
        values = np.array([r.features[i] for r in dataset.rows], dtype=float)
        if values.size == 0:
            raise InvalidData(f"cannot fit normalization on empty feature {feat.name!r}")
        if not np.all(np.isfinite(values)):
            raise InvalidData(f"feature {feat.name!r} has non-finite values")
        ranges[feat.name] = FeatureRange(
            float(values.min()), float(values.max()), bool(np.all(values == np.round(values)))
        )
    return NormParams(ranges)


def normalize_minmax(
    dataset: TabularDataset, params: NormParams | None = None
) -> tuple[TabularDataset, NormParams]:
    """Map numeric features to [0, 1] with per-feature min/max.

    When ``params`` is given (training statistics), they are applied as-is and
    values outside the training range land outside [0, 1].
    """
    if params is None:
        params = fit_norm_params(dataset)
    numeric = [(i, f.name) for i, f in enumerate(dataset.schema) if not f.is_categorical]
    rows = []
    for r in dataset.rows:
        feats = list(r.features)
        for i, name in numeric:
            v = float(feats[i])
            if not math.isfinite(v):
                raise InvalidData(f"row {r.rid}: non-finite value for {name!r}")
            feats[i] = params.normalize(name, v)
        rows.append(Example(tuple(feats), r.target, r.rid))
    return dataset.with_rows(rows), params


def denormalize(dataset: TabularDataset, params: NormParams) -> TabularDataset:
    numeric = [(i, f.name) for i, f in enumerate(dataset.schema) if f.name in params.ranges]
    rows = []
    for r in dataset.rows:
        feats = list(r.features)
        for i, name in numeric:
            feats[i] = params.denormalize(name, float(feats[i]))
        rows.append(Example(tuple(feats), r.target, r.rid))
    return dataset.with_rows(rows)


# -- splitting -------------------------------------------------------------------


def _largest_remainder(counts: Sequence[int], total: int) -> list[int]:
    n = sum(counts)
    quotas = [c * total / n for c in counts]
    alloc = [min(int(math.floor(q)), c) for q, c in zip(quotas, counts)]
    order = sorted(range(len(counts)), key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in order:
        if sum(alloc) >= total:
            break
        if alloc[k] < counts[k]:
            alloc[k] += 1
    return alloc


def split(
    dataset: TabularDataset, train_n: int, seed: int, test_n: int | None = None
) -> tuple[TabularDataset, TabularDataset]:
    """Seeded train/test split, stratified by label for classification.

    The test part is every remaining row, or a seeded sample of ``test_n`` of
    them. Both parts keep the original row order.
    """
    n = len(dataset)
    if train_n < 1 or train_n >= n:
        raise InvalidSplit(f"train_n={train_n} must be in [1, {n - 1}] for {n} rows")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5B,)))
    positions = np.arange(n)
    if dataset.is_classification:
        labels = dataset.targets()
        classes = sorted(set(labels.tolist()))
        groups = [positions[labels == c] for c in classes]
        alloc = _largest_remainder([len(g) for g in groups], train_n)
        chosen = np.concatenate([rng.permutation(g)[:a] for g, a in zip(groups, alloc)])
    else:
        chosen = rng.permutation(positions)[:train_n]
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    rest = positions[~mask]
    if test_n is not None:
        if test_n < 1:
            raise InvalidSplit("test_n must be positive")
        if test_n < rest.size:
            rest = np.sort(rng.choice(rest, size=test_n, replace=False))
    train = dataset.with_rows(dataset.rows[i] for i in np.flatnonzero(mask))
    test = dataset.with_rows(dataset.rows[i] for i in rest)
    return train, test


# -- serialization ---------------------------------------------------------------


def format_number(v: float) -> str:
    """Canonical text for a number: integral values without a decimal point."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _open_text(path: Path, mode: str = "r"):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def schema_to_dict(dataset: TabularDataset) -> dict:
    out: dict = {}
    if dataset.name:
        out["name"] = dataset.name
    out["target"] = dataset.target_schema.to_dict()
    out["features"] = [f.to_dict() for f in dataset.schema]
    if dataset.context is not None:
        out["context"] = dataset.context.to_dict()
    return out


def dumps_schema(dataset: TabularDataset) -> str:
    return yaml.safe_dump(schema_to_dict(dataset), sort_keys=False, allow_unicode=True, width=100)


def dumps_csv(dataset: TabularDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset.feature_names + [dataset.target_schema.name])
    tlevels = dataset.target_schema.levels
    for r in dataset.rows:
        values = [v if isinstance(v, str) else format_number(v) for v in r.features]
        values.append(tlevels[r.target] if dataset.is_classification else format_number(r.target))
        w.writerow(values)
    return buf.getvalue()


def loads_dataset(csv_text: str, schema_text: str) -> TabularDataset:
    meta = yaml.safe_load(schema_text) or {}
    return _build_dataset(csv.reader(io.StringIO(csv_text)), meta)


def _build_dataset(reader, meta: Mapping) -> TabularDataset:
    try:
        schema = tuple(FeatureSchema.from_dict(f) for f in meta["features"])
        target = FeatureSchema.from_dict(meta["target"])
    except KeyError as exc:
        raise InvalidData(f"schema is missing {exc}") from None
    context = ContextBlock.from_dict(meta["context"]) if meta.get("context") else None
    header = next(reader, None)
    expected = [f.name for f in schema] + [target.name]
    if header != expected:
        raise InvalidData(f"CSV header {header} does not match schema {expected}")
    target_index = {lvl: i for i, lvl in enumerate(target.levels)}
    rows = []
    for rid, rec in enumerate(reader):
        if len(rec) != len(expected):
            raise InvalidData(f"row {rid} has {len(rec)} fields, expected {len(expected)}")
        feats: list[FeatureValue] = []
        for value, feat in zip(rec, schema):
            if feat.is_categorical:
                feats.append(value)
            else:
                try:
                    feats.append(float(value))
                except ValueError:
                    raise InvalidData(f"row {rid}: {feat.name}={value!r} is not numeric") from None
        if target.is_categorical:
            if rec[-1] not in target_index:
                raise InvalidData(f"row {rid}: unknown target level {rec[-1]!r}")
            tval: float | int = target_index[rec[-1]]
        else:
            tval = float(rec[-1])
        rows.append(Example(tuple(feats), tval, rid))
    return TabularDataset(schema, tuple(rows), target, context, str(meta.get("name", "")))


def read_dataset(csv_path: str | Path, schema_path: str | Path) -> TabularDataset:
    meta = yaml.safe_load(Path(schema_path).read_text(encoding="utf-8")) or {}
    with _open_text(Path(csv_path)) as fh:
        return _build_dataset(csv.reader(fh), meta)


def write_dataset(dataset: TabularDataset, csv_path: str | Path, schema_path: str | Path) -> None:
    from fmeval.util import atomic_write_text

    atomic_write_text(csv_path, dumps_csv(dataset))
    atomic_write_text(schema_path, dumps_schema(dataset))


def dumps_series(series: SeriesDataset) -> str:
    lines = ["x,y"] + [f"{format_number(x)},{format_number(y)}" for x, y in series.points]
    return "\n".join(lines) + "\n"


def read_series(path: str | Path, x_unit: str = "", y_unit: str = "",
                context: ContextBlock | None = None, name: str = "") -> SeriesDataset:
    with _open_text(Path(path)) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2:
            raise InvalidData(f"series CSV needs a two-column header, got {header}")
        try:
            pts = [(float(a), float(b)) for a, b in reader]
        except ValueError as exc:
            raise InvalidData(f"bad series row: {exc}") from None
    return SeriesDataset(tuple(pts), x_unit, y_unit, context, name)


def write_series(series: SeriesDataset, path: str | Path) -> None:
    from fmeval.util import atomic_write_text

    atomic_write_text(path, dumps_series(series))
