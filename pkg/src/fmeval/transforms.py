"""Prompt-space operators and anti-memorization perturbations.

``numerize``/``decontextualize`` strip every semantic cue from the data and
the task text; ``verbalize``/``contextualize`` put semantics back and add the
domain hint. The perturbation functions rewrite a dataset (renames, noise,
rescaling, merges, shifts) so that it no longer matches any public copy.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from fmeval.domain import (
    CATEGORICAL,
    NUMERIC,
    ContextBlock,
    EvalMode,
    Example,
    FeatureSchema,
    NormParams,
    SeriesDataset,
    TabularDataset,
    fit_norm_params,
)
from fmeval.errors import InvalidContext, InvalidData
from fmeval.util import atomic_write_text, rng_for

ANON_PREFIX = "feature "

CLASSIFICATION_TEMPLATE = (
    "Below you are asked to perform a classification task. In this task, you will be given "
    "some numerical features, and your task is to predict the class ({classes}) given the features."
)
REGRESSION_TEMPLATE = "This is a regression task where we predict y from x given some training data."

HINT_TEMPLATE = (
    "During the process, please actively make use of any domain knowledge or prior information "
    "you know about {keywords} and incorporate it with the patterns you see from the data."
)

# Generic words that may legitimately appear in anonymized prompts.
_GENERIC_WORDS = frozenset(
    """a an and are as at be by class classes data example examples feature features for from
    given in is it of on or predict prediction task the this to value values was were with x y
    which who whose their its has have been into per that than these those other all any each
    record records taken measured measurement measurements""".split()
)


@dataclass(frozen=True)
class TaskDescription:
    text: str
    mode_tag: EvalMode
    hint: str | None = None
    task_type: str = "classification"  # or "regression"
    n_classes: int = 2


def class_list_text(n_classes: int) -> str:
    if n_classes == 2:
        return "0 or 1"
    return ", ".join(str(i) for i in range(n_classes - 1)) + f" or {n_classes - 1}"


# -- blocklist -------------------------------------------------------------------


def _terms_from_phrase(phrase: str) -> set[str]:
    phrase = phrase.strip().lower()
    out = {phrase} if phrase and not phrase.isdigit() else set()
    for tok in re.split(r"[^0-9a-z]+", phrase):
        if len(tok) >= 3 and not tok.isdigit() and tok not in _GENERIC_WORDS:
            out.add(tok)
    return {t for t in out if t and t not in _GENERIC_WORDS}


def build_blocklist(
    schema: Sequence[FeatureSchema],
    target: FeatureSchema | None = None,
    context: ContextBlock | None = None,
    extra: Iterable[str] = (),
) -> frozenset[str]:
    """Words whose presence in a likelihood-only prompt would leak the domain.

    Covers feature names, units, the target name, the domain name and the
    content words of the source description. Generic words such as "x",
    "class" and "data" are exempt.
    """
    terms: set[str] = set()
    feats = list(schema) + ([target] if target is not None else [])
    for f in feats:
        terms |= _terms_from_phrase(f.name)
        if f.unit:
            terms |= _terms_from_phrase(f.unit)
    if context is not None:
        terms |= _terms_from_phrase(context.domain_name)
        if context.source_prose:
            terms |= _terms_from_phrase(context.source_prose)
    for word in extra:
        terms |= _terms_from_phrase(word)
    return frozenset(terms)


def find_blocklisted(text: str, blocklist: Iterable[str]) -> list[str]:
    hits = []
    low = text.lower()
    for term in sorted(blocklist):
        if re.search(r"(?<![0-9a-z])" + re.escape(term) + r"(?![0-9a-z])", low):
            hits.append(term)
    return hits


def anon_name(i: int) -> str:
    return f"{ANON_PREFIX}{i}"


def is_anonymized(dataset: TabularDataset) -> bool:
    return all(f.name == anon_name(i) and not f.is_categorical for i, f in enumerate(dataset.schema))


# -- numerize / verbalize -------------------------------------------------------------


@dataclass(frozen=True)
class SemanticSchema:
    """What numerize throws away, kept so verbalize can restore it."""

    features: tuple[FeatureSchema, ...]
    target: FeatureSchema
    norm: NormParams
    context: ContextBlock | None = None
    name: str = ""

    @classmethod
    def fit(cls, dataset: TabularDataset) -> "SemanticSchema":
        return cls(dataset.schema, dataset.target_schema, fit_norm_params(dataset),
                   dataset.context, dataset.name)

    def blocklist(self, extra: Iterable[str] = ()) -> frozenset[str]:
        return build_blocklist(self.features, self.target, self.context, extra)


def categorical_code(index: int, n_levels: int) -> float:
    return 1.0 if n_levels == 1 else index / (n_levels - 1)


def numerize(dataset: TabularDataset, semantics: SemanticSchema | None = None) -> TabularDataset:
    """Turn every feature into an anonymous number.

    Categorical level i of L maps to i/(L-1); numeric features are min-max
    normalized with ``semantics.norm`` (fitted on ``dataset`` when omitted,
    which is what training rows want; test rows should pass the training
    semantics). Names, units, descriptions and context are dropped.
    """
    if semantics is None:
        semantics = SemanticSchema.fit(dataset)
    if [f.name for f in semantics.features] != dataset.feature_names:
        raise InvalidData("dataset schema does not match the semantic schema")
    lookups = [
        {lvl: categorical_code(i, len(f.levels)) for i, lvl in enumerate(f.levels)} if f.is_categorical else None
        for f in semantics.features
    ]
    norm = semantics.norm
    rows = []
    for r in dataset.rows:
        vals = []
        for v, f, lk in zip(r.features, dataset.schema, lookups):
            if lk is not None:
                if v not in lk:
                    raise InvalidData(f"row {r.rid}: unknown level {v!r} for {f.name!r}")
                vals.append(lk[v])
            else:
                x = float(v)
                if not math.isfinite(x):
                    raise InvalidData(f"row {r.rid}: non-finite value for {f.name!r}")
                vals.append(norm.normalize(f.name, x))
        rows.append(Example(tuple(vals), r.target, r.rid))
    schema = tuple(FeatureSchema(anon_name(i)) for i in range(len(dataset.schema)))
    t = dataset.target_schema
    if t.is_categorical:
        target = FeatureSchema("class", CATEGORICAL, tuple(str(i) for i in range(len(t.levels))))
    else:
        target = FeatureSchema("y")
    return TabularDataset(schema, tuple(rows), target, None, "")


def _round_numeric(value: float, integral: bool) -> float:
    return float(round(value)) if integral else round(value, 2)


def verbalize(dataset: TabularDataset, semantics: SemanticSchema) -> TabularDataset:
    """Restore semantic names, level strings and original numeric scale.

    Accepts either a numerized dataset (codes are decoded) or one already in
    semantic form (numbers are only rounded). Numbers are rounded to integers
    for features whose training values were all integral, else to 2 decimals.
    """
    feats = semantics.features
    if len(dataset.schema) != len(feats):
        raise InvalidData("arity mismatch between dataset and semantic schema")
    encoded = dataset.feature_names != [f.name for f in feats]
    rows = []
    for r in dataset.rows:
        vals: list = []
        for v, f in zip(r.features, feats):
            rng = semantics.norm.ranges.get(f.name)
            if f.is_categorical:
                if not encoded:
                    vals.append(v)
                    continue
                vals.append(_decode_level(float(v), f, r.rid))
            else:
                x = float(v)
                if encoded:
                    x = semantics.norm.denormalize(f.name, x)
                vals.append(_round_numeric(x, rng.integral if rng else False))
        rows.append(Example(tuple(vals), r.target, r.rid))
    return TabularDataset(feats, tuple(rows), semantics.target, semantics.context, semantics.name)


def _decode_level(code: float, f: FeatureSchema, rid: int) -> str:
    n = len(f.levels)
    if n == 1:
        if abs(code - 1.0) > 1e-6:
            raise InvalidData(f"row {rid}: code {code} is not valid for single-level {f.name!r}")
        return f.levels[0]
    pos = code * (n - 1)
    idx = round(pos)
    if abs(pos - idx) > 1e-6 or not 0 <= idx < n:
        raise InvalidData(f"row {rid}: code {code} does not decode to a level of {f.name!r}")
    return f.levels[idx]


def format_value(value, feat: FeatureSchema | None = None) -> str:
    """Prompt text for one value: integers bare, reals to 2 decimals."""
    if isinstance(value, str):
        if re.search(r"[,=\[\]]", value) or value != value.strip():
            return repr(value)
        return value
    x = float(value)
    text = str(int(round(x))) if x == round(x) and abs(x) < 1e15 else repr(round(x, 2))
    if text == "-0":
        text = "0"
    if feat is not None and feat.unit:
        text = f"{text} {feat.unit}"
    return text


def verbal_text(example: Example, schema: Sequence[FeatureSchema]) -> str:
    """Render a row as ``{Name=value, ...}``."""
    parts = [f"{f.name}={format_value(v, f)}" for v, f in zip(example.features, schema)]
    return "{" + ", ".join(parts) + "}"


# -- task text operators ----------------------------------------------------------


def decontextualize(task: TaskDescription) -> TaskDescription:
    """Replace the task text with a fixed generic template; drops the hint."""
    if task.task_type == "regression":
        text = REGRESSION_TEMPLATE
    else:
        text = CLASSIFICATION_TEMPLATE.format(classes=class_list_text(task.n_classes))
    return TaskDescription(text, EvalMode.LIKELIHOOD_ONLY, None, task.task_type, task.n_classes)


def make_hint(keywords: str) -> str:
    return HINT_TEMPLATE.format(keywords=keywords)


def contextualize(task: TaskDescription, ctx: ContextBlock) -> TaskDescription:
    if not ctx.domain_name or not ctx.domain_name.strip():
        raise InvalidContext("contextualize needs a non-empty domain_name")
    parts = [ctx.task_prose.strip()]
    if ctx.feature_explanations:
        lines = [f"- {name}: {text}" for name, text in ctx.feature_explanations.items()]
        parts.append("The features are:\n" + "\n".join(lines))
    if ctx.source_prose:
        parts.append(ctx.source_prose.strip())
    text = "\n".join(p for p in parts if p)
    return TaskDescription(text, EvalMode.POSTERIOR_FULL, make_hint(ctx.domain_name.strip()),
                           task.task_type, task.n_classes)


def base_task(dataset: TabularDataset) -> TaskDescription:
    """The task as it comes with the dataset, before either operator runs."""
    prose = dataset.context.task_prose if dataset.context else ""
    if dataset.is_classification:
        return TaskDescription(prose, EvalMode.POSTERIOR_FULL, None, "classification",
                               len(dataset.target_schema.levels))
    return TaskDescription(prose, EvalMode.POSTERIOR_FULL, None, "regression", 0)


# -- perturbation recipes ----------------------------------------------------------


@dataclass(frozen=True)
class PerturbationRecipe:
    """Declarative dataset rewrite.

    Steps run in a fixed order: noise, binarization, scale changes, merges,
    renames, shift. Rename keys refer to names before renaming; scale changes
    and merges introduce their own new names.

    noise_specs values:
      {"dist": "uniform_int", "low": -2, "high": 2, "clip": [17, 90]}
      {"dist": "gaussian", "mean": 1.0, "variance": 0.01, "mode": "additive"|"multiplicative"}
    scale_changes values: {"factor": 1/7, "new_name": ..., "unit": ...}
    merges: [{"inputs": [a, b], "output": name, "combiner": "difference"|"sum"}]
    binarizations values: {"positive": [levels...], "levels": [negative, positive]}
    """

    applies_to: str = "tabular"  # or "series"
    renames: Mapping[str, str] = field(default_factory=dict)
    noise_specs: Mapping[str, Mapping] = field(default_factory=dict)
    scale_changes: Mapping[str, Mapping] = field(default_factory=dict)
    merges: tuple[Mapping, ...] = ()
    binarizations: Mapping[str, Mapping] = field(default_factory=dict)
    shift: float | None = None
    hide_metadata: bool = False
    descriptions: Mapping[str, str] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "merges", tuple(self.merges))
        targets = set(self.renames.values())
        if len(targets) != len(self.renames):
            raise InvalidData("rename targets must be distinct")
        clash = targets & set(self.renames)
        if clash:
            raise InvalidData(f"rename targets {sorted(clash)} collide with renamed features")
        for m in self.merges:
            ins = list(m["inputs"])
            if len(set(ins)) != len(ins):
                raise InvalidData(f"merge inputs must be pairwise distinct: {ins}")

    def to_dict(self) -> dict:
        return {
            "applies_to": self.applies_to,
            "seed": self.seed,
            "renames": dict(self.renames),
            "noise_specs": {k: dict(v) for k, v in self.noise_specs.items()},
            "scale_changes": {k: dict(v) for k, v in self.scale_changes.items()},
            "merges": [dict(m) for m in self.merges],
            "binarizations": {k: dict(v) for k, v in self.binarizations.items()},
            "shift": self.shift,
            "hide_metadata": self.hide_metadata,
            "descriptions": dict(self.descriptions),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerturbationRecipe":
        return cls(
            applies_to=d.get("applies_to", "tabular"),
            renames=dict(d.get("renames") or {}),
            noise_specs={k: dict(v) for k, v in (d.get("noise_specs") or {}).items()},
            scale_changes={k: dict(v) for k, v in (d.get("scale_changes") or {}).items()},
            merges=tuple(dict(m) for m in (d.get("merges") or ())),
            binarizations={k: dict(v) for k, v in (d.get("binarizations") or {}).items()},
            shift=d.get("shift"),
            hide_metadata=bool(d.get("hide_metadata", False)),
            descriptions=dict(d.get("descriptions") or {}),
            seed=int(d.get("seed", 0)),
        )


def dumps_recipe(recipe: PerturbationRecipe) -> str:
    return yaml.safe_dump(recipe.to_dict(), sort_keys=False, allow_unicode=True)


def load_recipe(path: str | Path) -> PerturbationRecipe:
    return PerturbationRecipe.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {})


def save_recipe(recipe: PerturbationRecipe, path: str | Path) -> None:
    atomic_write_text(path, dumps_recipe(recipe))


ADULT_FEATURES = (
    "age", "workclass", "fnlwgt", "education", "marital-status", "occupation", "relationship",
    "race", "sex", "capital-gain", "capital-loss", "hours-per-week", "native-country",
)
MARRIED_LEVELS = ("Married-civ-spouse", "Married-AF-spouse", "Married-spouse-absent")


def adult_recipe(seed: int = 0) -> PerturbationRecipe:
    """The income-task rewrite: renames, age noise, binary marital status,
    hours per day instead of per week, and a single capital net gain."""
    return PerturbationRecipe(
        applies_to="tabular",
        renames={
            "education": "degree",
            "marital-status": "marital status",
            "fnlwgt": "representative weight",
            "race": "ethnicity",
            "sex": "gender",
            "workclass": "employer type",
            "relationship": "household role",
            "native-country": "country of origin",
        },
        noise_specs={"age": {"dist": "uniform_int", "low": -2, "high": 2, "clip": [17, 90]}},
        scale_changes={"hours-per-week": {"factor": 1 / 7, "new_name": "hours per day", "unit": "hours"}},
        merges=({"inputs": ["capital-gain", "capital-loss"], "output": "capital net gain",
                 "combiner": "difference", "unit": "dollars"},),
        binarizations={"marital-status": {"positive": list(MARRIED_LEVELS),
                                          "levels": ["not married", "married"]}},
        descriptions={
            "marital status": "whether the individual is currently married",
            "hours per day": "the usual number of working hours per day",
            "capital net gain": "investment gains minus investment losses, in dollars",
        },
        seed=seed,
    )


def co2_recipe(seed: int = 0, multiplicative: bool = False) -> PerturbationRecipe:
    return PerturbationRecipe(
        applies_to="series",
        noise_specs={"y": {"dist": "gaussian", "mean": 1.0, "variance": 1e-2,
                           "mode": "multiplicative" if multiplicative else "additive"}},
        shift=1.0,
        hide_metadata=True,
        seed=seed,
    )


def _noise_draws(spec: Mapping, n: int, seed: int, stream: str) -> np.ndarray:
    # draw i belongs to row position i whatever order rows are processed in
    rng = rng_for(seed, "noise", stream)
    dist = spec.get("dist", "gaussian")
    if dist == "uniform_int":
        return rng.integers(int(spec["low"]), int(spec["high"]), size=n, endpoint=True).astype(float)
    if dist == "gaussian":
        sd = math.sqrt(float(spec["variance"])) if "variance" in spec else float(spec.get("sd", 1.0))
        return rng.normal(float(spec.get("mean", 0.0)), sd, size=n)
    raise InvalidData(f"unknown noise distribution {dist!r}")


def _apply_noise(values: np.ndarray, spec: Mapping, draws: np.ndarray) -> np.ndarray:
    if spec.get("mode", "additive") == "multiplicative":
        out = values * draws
    else:
        out = values + draws
    if spec.get("clip") is not None:
        lo, hi = spec["clip"]
        out = np.clip(out, lo, hi)
    return out


def perturb_tabular(dataset: TabularDataset, recipe: PerturbationRecipe, seed: int | None = None) -> TabularDataset:
    seed = recipe.seed if seed is None else seed
    names = dataset.feature_names
    referenced = set(recipe.renames) | set(recipe.noise_specs) | set(recipe.scale_changes) | set(recipe.binarizations)
    for m in recipe.merges:
        referenced |= set(m["inputs"])
    missing = referenced - set(names)
    if missing:
        raise InvalidData(f"recipe references features absent from the dataset: {sorted(missing)}")
    clash = set(recipe.renames.values()) & set(names)
    if clash:
        raise InvalidData(f"rename targets {sorted(clash)} already exist in the dataset")

    n = len(dataset)
    schema = {f.name: f for f in dataset.schema}
    order = list(names)
    cols: dict[str, list | np.ndarray] = {name: [r.features[i] for r in dataset.rows] for i, name in enumerate(names)}
    explanations = dict(dataset.context.feature_explanations) if dataset.context else {}

    for name, spec in recipe.noise_specs.items():
        if schema[name].is_categorical:
            raise InvalidData(f"cannot add numeric noise to categorical {name!r}")
        vals = np.asarray(cols[name], dtype=float)
        cols[name] = _apply_noise(vals, spec, _noise_draws(spec, n, seed, name)).tolist()

    for name, spec in recipe.binarizations.items():
        f = schema[name]
        if not f.is_categorical:
            raise InvalidData(f"binarization needs a categorical feature, {name!r} is numeric")
        positive = set(spec["positive"])
        unknown = positive - set(f.levels)
        if unknown:
            raise InvalidData(f"binarization of {name!r} names unknown levels {sorted(unknown)}")
        neg, pos = spec.get("levels", ["no", "yes"])
        cols[name] = [pos if v in positive else neg for v in cols[name]]
        schema[name] = replace(f, levels=(neg, pos))

    for name, spec in recipe.scale_changes.items():
        f = schema[name]
        if f.is_categorical:
            raise InvalidData(f"cannot rescale categorical {name!r}")
        factor = float(spec["factor"])
        new = spec.get("new_name", name)
        vals = (np.asarray(cols.pop(name), dtype=float) * factor).tolist()
        cols[new] = vals
        schema.pop(name)
        schema[new] = FeatureSchema(new, NUMERIC, (), spec.get("unit", f.unit), spec.get("description"))
        order[order.index(name)] = new
        explanations.pop(name, None)

    for m in recipe.merges:
        ins = list(m["inputs"])
        for name in ins:
            if schema[name].is_categorical:
                raise InvalidData(f"cannot merge categorical {name!r}")
        arrays = [np.asarray(cols[name], dtype=float) for name in ins]
        combiner = m.get("combiner", "sum")
        if combiner == "difference":
            merged = arrays[0] - sum(arrays[1:])
        elif combiner == "sum":
            merged = sum(arrays)
        else:
            raise InvalidData(f"unknown merge combiner {combiner!r}")
        out = m["output"]
        pos = min(order.index(name) for name in ins)
        for name in ins:
            cols.pop(name)
            schema.pop(name)
            order.remove(name)
            explanations.pop(name, None)
        order.insert(pos, out)
        cols[out] = np.asarray(merged).tolist()
        schema[out] = FeatureSchema(out, NUMERIC, (), m.get("unit"), m.get("description"))

    for old, new in recipe.renames.items():
        if old not in schema:
            raise InvalidData(f"rename source {old!r} was consumed by an earlier step")
        schema[new] = replace(schema.pop(old), name=new)
        cols[new] = cols.pop(old)
        order[order.index(old)] = new
        if old in explanations:
            explanations[new] = explanations.pop(old)

    if recipe.shift is not None:
        raise InvalidData("shift applies to series targets, not tabular datasets")

    for name, text in recipe.descriptions.items():
        if name in schema:
            explanations[name] = text
            schema[name] = replace(schema[name], description=text)

    new_schema = tuple(schema[name] for name in order)
    columns = [cols[name] for name in order]
    rows = tuple(Example(tuple(c[i] for c in columns), r.target, r.rid) for i, r in enumerate(dataset.rows))
    ctx = dataset.context
    if ctx is not None:
        ctx = replace(ctx, feature_explanations={k: explanations[k] for k in order if k in explanations})
        if recipe.hide_metadata:
            ctx = replace(ctx, source_prose=None)
    return TabularDataset(new_schema, rows, dataset.target_schema, ctx, dataset.name)


def perturb_adult(dataset: TabularDataset, recipe: PerturbationRecipe | None = None,
                  seed: int | None = None) -> TabularDataset:
    missing = set(ADULT_FEATURES) - set(dataset.feature_names)
    if missing:
        raise InvalidData(f"not an Adult-schema dataset; missing {sorted(missing)}")
    recipe = adult_recipe(0 if seed is None else seed) if recipe is None else recipe
    return perturb_tabular(dataset, recipe, seed)


def perturb_series(series: SeriesDataset, recipe: PerturbationRecipe, seed: int | None = None) -> SeriesDataset:
    """Noise then shift on y; x is never touched."""
    seed = recipe.seed if seed is None else seed
    y = series.y
    spec = recipe.noise_specs.get("y")
    if spec is not None:
        y = _apply_noise(y, spec, _noise_draws(spec, y.size, seed, "y"))
    if recipe.shift is not None:
        y = y + float(recipe.shift)
    ctx = series.context
    name = series.name
    if recipe.hide_metadata:
        name = ""
        if ctx is not None:
            ctx = replace(ctx, source_prose=None)
    return SeriesDataset(tuple(zip(series.x.tolist(), y.tolist())), series.x_unit, series.y_unit, ctx, name)
