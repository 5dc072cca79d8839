"""Metrics, the two-condition comparison protocol, feature selection and rules capture."""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from fmeval.baselines.gp import gp_fit, gp_optimize, gp_predict
from fmeval.baselines.kernels import (
    KernelExpr,
    dumps_kernel,
    loads_kernel,
    make_expert_kernel,
    make_llm_kernel,
    make_rbf_kernel,
)
from fmeval.baselines.mlp import BINARY, REGRESSION, MlpConfig, four_layer, mlp_train
from fmeval.domain import EvalMode, SeriesDataset, TabularDataset, split
from fmeval.errors import FmevalError, InvalidInput, SelectionFailure
from fmeval.llm import TranscriptLog, batch_predict
from fmeval.prompts import SEPARATOR, PromptBundle, build_prompt, fmt_code
from fmeval.transforms import (
    SemanticSchema,
    TaskDescription,
    base_task,
    contextualize,
    decontextualize,
    find_blocklisted,
    format_value,
    numerize,
    verbalize,
)
from fmeval.util import derive_seed, sha256_text, stable_hash

LLM_WITHOUT_DOMAIN = "llm_without_domain"
LLM_WITH_DOMAIN = "llm_with_domain"
MLP = "mlp"
GP = "gp"
CONDITIONS = (LLM_WITHOUT_DOMAIN, LLM_WITH_DOMAIN, MLP, GP)
LLM_CONDITIONS = (LLM_WITHOUT_DOMAIN, LLM_WITH_DOMAIN)


# -- metrics ---------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSet:
    n_test: int
    n_extraction_failures: int = 0
    accuracy: float | None = None
    accuracy_se: float | None = None
    mse: float | None = None
    rmse: float | None = None
    repeat_sd: float | None = None  # spread of the headline metric across prompt repeats
    n_repeats: int = 1

    def __post_init__(self):
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise InvalidInput(f"accuracy must lie in [0, 1], got {self.accuracy}")

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(predictions: Sequence, truth: Sequence) -> MetricSet:
    """Share of exact matches; a ``None`` prediction is an extraction failure and counts as wrong."""
    if len(predictions) != len(truth):
        raise InvalidInput(f"{len(predictions)} predictions for {len(truth)} test rows")
    n = len(truth)
    if n == 0:
        raise InvalidInput("accuracy needs at least one test row")
    failures = sum(1 for p in predictions if p is None)
    correct = sum(1 for p, t in zip(predictions, truth) if p is not None and int(p) == int(t))
    p = correct / n
    return MetricSet(n, failures, accuracy=p, accuracy_se=math.sqrt(p * (1 - p) / n))


def regression_metrics(predictions: Sequence, truth: Sequence) -> MetricSet:
    """MSE and RMSE over the rows with a prediction; failures are counted, not scored."""
    if len(predictions) != len(truth):
        raise InvalidInput(f"{len(predictions)} predictions for {len(truth)} test rows")
    pairs = [(float(p), float(t)) for p, t in zip(predictions, truth) if p is not None]
    failures = len(truth) - len(pairs)
    if not pairs:
        return MetricSet(len(truth), failures, mse=math.nan, rmse=math.nan)
    mse = sum((p - t) ** 2 for p, t in pairs) / len(pairs)
    return MetricSet(len(truth), failures, mse=mse, rmse=math.sqrt(mse))


def score(predictions: Sequence, test: TabularDataset) -> MetricSet:
    truth = test.targets().tolist()
    return accuracy(predictions, truth) if test.is_classification else regression_metrics(predictions, truth)


def _combine_repeats(per_repeat: list[MetricSet]) -> MetricSet:
    first = per_repeat[0]
    if len(per_repeat) == 1:
        return first
    failures = sum(m.n_extraction_failures for m in per_repeat)
    if first.accuracy is not None:
        values = [m.accuracy for m in per_repeat]
        p = float(np.mean(values))
        return MetricSet(first.n_test, failures, accuracy=p, accuracy_se=math.sqrt(p * (1 - p) / first.n_test),
                         repeat_sd=float(np.std(values, ddof=1)), n_repeats=len(per_repeat))
    values = [m.mse for m in per_repeat]
    mse = float(np.mean(values))
    return MetricSet(first.n_test, failures, mse=mse, rmse=math.sqrt(mse),
                     repeat_sd=float(np.std(values, ddof=1)), n_repeats=len(per_repeat))


# -- protocol --------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    """Everything a condition run needs besides the data; snapshotted into reports."""

    seed: int = 0
    repeats: int = 1
    parallelism: int = 1
    shuffle_prompts: bool = False
    mlp_hidden: int = 500
    mlp_activation: str = "relu"
    mlp_learning_rate: float = 0.05
    mlp_epochs: int = 500
    mlp_batch_size: int = 32
    mlp_dtype: str = "float32"
    mlp_seeds: int = 1
    gp_kernel: str = "sum(rbf(v=1.0,l=0.2),white(v=0.01))"
    gp_restarts: int = 5
    gp_steps: int = 100
    capture_rules: bool = False

    def mlp_config(self, n_inputs: int, task: str, seed: int) -> MlpConfig:
        return four_layer(n_inputs, self.mlp_hidden, task, activation=self.mlp_activation,
                          learning_rate=self.mlp_learning_rate, epochs=self.mlp_epochs,
                          batch_size=self.mlp_batch_size, seed=seed, dtype=self.mlp_dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown evaluation settings {sorted(unknown)}")
        return cls(**dict(d))


@dataclass(frozen=True)
class Split:
    train: TabularDataset
    test: TabularDataset

    @property
    def test_ids(self) -> list[int]:
        return self.test.row_ids()


def make_split(dataset: TabularDataset, train_n: int, test_n: int | None, seed: int) -> Split:
    """Test rows first, then a train sample from what is left.

    Several train sizes drawn with the same seed share one test set.
    """
    n = len(dataset)
    test_n = n - train_n if test_n is None else test_n
    if test_n < 1 or train_n < 1 or train_n + test_n > n:
        raise InvalidInput(f"cannot take {train_n} train and {test_n} test rows from {n}")
    pool, test = split(dataset, n - test_n, seed)
    train = pool if train_n == len(pool) else split(pool, train_n, derive_seed(seed, "train", str(train_n)))[0]
    return Split(train, test)


@dataclass
class EvalReport:
    condition: str
    dataset_id: str
    recipe_hash: str | None
    metrics: MetricSet
    config: dict
    train_n: int
    test_row_ids: list[int]
    predictions: list
    transcript: str | None = None
    captured_rules: str | None = None
    rules_prompt_hash: str | None = None
    rules_warning: bool = False
    run_prompt_hash: str | None = None
    item_errors: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.condition == MLP:
            return f"mlp_n{self.train_n}"
        if self.condition == GP:
            return f"gp_{self.extra.get('kernel_id', 'custom')}"
        return self.condition

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        d = {k: v for k, v in d.items() if k != "label"}
        d["metrics"] = MetricSet(**d["metrics"])
        return cls(**d)


@dataclass(frozen=True)
class PromptPlan:
    """Prompts for one LLM condition plus what rules capture needs."""

    prompts: list[PromptBundle]
    train_view: TabularDataset
    task: TaskDescription
    mode: EvalMode


def plan_prompts(condition: str, sp: Split, config: EvalConfig) -> PromptPlan:
    """Apply the condition's operators and render one prompt per test row."""
    semantics = SemanticSchema.fit(sp.train)
    if condition == LLM_WITHOUT_DOMAIN:
        mode = EvalMode.LIKELIHOOD_ONLY
        train_view = numerize(sp.train, semantics)
        test_view = numerize(sp.test, semantics)
        task = decontextualize(base_task(sp.train))
        blocklist = semantics.blocklist()
    elif condition == LLM_WITH_DOMAIN:
        mode = EvalMode.POSTERIOR_FULL
        train_view = verbalize(sp.train, semantics)
        test_view = verbalize(sp.test, semantics)
        if sp.train.context is None:
            raise InvalidInput("the with-domain condition needs a dataset with a context block")
        task = contextualize(base_task(sp.train), sp.train.context)
        blocklist = None
    else:
        raise InvalidInput(f"{condition!r} is not an LLM condition")
    prompts = []
    for i, q in enumerate(test_view.rows):
        shuffle = derive_seed(config.seed, "prompt-order", str(q.rid)) if config.shuffle_prompts else None
        prompts.append(build_prompt(mode, train_view, task, q, blocklist=blocklist, shuffle_seed=shuffle))
    return PromptPlan(prompts, train_view, task, mode)


def run_condition(condition: str, sp: Split, config: EvalConfig, *, backend=None,
                  transcript: TranscriptLog | None = None, dataset_id: str = "",
                  recipe_hash: str | None = None) -> EvalReport:
    """Evaluate one condition on a shared split.

    LLM conditions need a backend; per-item failures are recorded in the
    report rather than raised.
    """
    if condition not in CONDITIONS:
        raise InvalidInput(f"unknown condition {condition!r}; expected one of {CONDITIONS}")
    base = dict(condition=condition, dataset_id=dataset_id or sp.train.name, recipe_hash=recipe_hash,
                config=config.to_dict(), train_n=len(sp.train), test_row_ids=sp.test_ids)
    if condition in LLM_CONDITIONS:
        if backend is None:
            raise InvalidInput("LLM conditions need a backend")
        plan = plan_prompts(condition, sp, config)
        per_repeat, last = [], None
        for r in range(config.repeats):
            extras = [{"condition": condition, "repeat": r, "rid": rid} for rid in sp.test_ids]
            last = batch_predict(backend, plan.prompts, config.parallelism, transcript, extras)
            per_repeat.append(score([p.value for p in last.predictions], sp.test))
        report = EvalReport(metrics=_combine_repeats(per_repeat), predictions=[p.value for p in last.predictions],
                            transcript=transcript.path.name if transcript else None,
                            run_prompt_hash=stable_hash([p.hash for p in plan.prompts]),
                            item_errors=[list(e) for e in last.errors], **base)
        if config.capture_rules:
            cap = capture_rules(plan, backend, report.run_prompt_hash, transcript)
            report.captured_rules, report.rules_prompt_hash, report.rules_warning = cap.text, cap.prompt_hash, cap.warning
        return report
    if condition == MLP:
        preds, extra = _run_mlp(sp, config)
    else:
        preds, extra = _run_gp(sp, config)
    return EvalReport(metrics=extra.pop("metrics"), predictions=preds, extra=extra, **base)


def _run_mlp(sp: Split, config: EvalConfig):
    semantics = SemanticSchema.fit(sp.train)
    train, test = numerize(sp.train, semantics), numerize(sp.test, semantics)
    task = BINARY if train.is_classification else REGRESSION
    if train.is_classification and len(train.target_schema.levels) != 2:
        raise InvalidInput("the MLP baseline handles binary classification and regression")
    metrics, preds = [], None
    for s in range(config.mlp_seeds):
        model = mlp_train(config.mlp_config(len(train.schema), task, derive_seed(config.seed, "mlp", str(s))), train)
        out = model.predict(test.matrix())
        p = [int(v) for v in out] if train.is_classification else [float(v) for v in out]
        metrics.append(score(p, test))
        preds = preds or p
    combined = _combine_seeds(metrics)
    return preds, {"metrics": combined, "n_seeds": config.mlp_seeds,
                   "per_seed": [m.accuracy if m.accuracy is not None else m.mse for m in metrics]}


def _combine_seeds(metrics: list[MetricSet]) -> MetricSet:
    """Mean over training seeds; ``repeat_sd`` then holds the seed-level spread."""
    return _combine_repeats(metrics)


def _run_gp(sp: Split, config: EvalConfig):
    if sp.train.is_classification:
        raise InvalidInput("the GP baseline is for regression tasks")
    semantics = SemanticSchema.fit(sp.train)
    train, test = numerize(sp.train, semantics), numerize(sp.test, semantics)
    X, y = train.matrix(), train.targets().astype(float)
    y_mean = float(y.mean())
    kernel = gp_optimize(loads_kernel(config.gp_kernel), X, y - y_mean, restarts=config.gp_restarts,
                         steps=config.gp_steps, seed=derive_seed(config.seed, "gp"))
    mean, _ = gp_predict(gp_fit(kernel, X, y - y_mean), test.matrix())
    preds = [float(v) + y_mean for v in mean]
    return preds, {"metrics": score(preds, test), "kernel": dumps_kernel(kernel), "kernel_id": "custom"}


# -- rules capture ---------------------------------------------------------------


RULES_REQUEST = ("Based on the examples above, list the rules you would use to predict the {target} "
                 "for new data, as a numbered list.")


@dataclass(frozen=True)
class RulesCapture:
    text: str
    prompt_hash: str
    linked_run_hash: str | None
    warning: bool


def rules_prompt(plan: PromptPlan) -> str:
    first = plan.prompts[0]
    head = first.text.split("\n\nNow predict the", 1)[0]
    return head + "\n\n" + RULES_REQUEST.format(target=first.target_name) + "\n"


def capture_rules(plan: PromptPlan, backend, run_prompt_hash: str | None = None,
                  transcript: TranscriptLog | None = None) -> RulesCapture:
    """Ask for the rules behind the predictions; the text is stored verbatim."""
    text = rules_prompt(plan)
    resp = backend.complete(text, "rules")
    raw = resp.raw_text or ""
    prompt_hash = sha256_text(text)[:16]
    if transcript is not None:
        transcript.append({"kind": "rules", "prompt_hash": prompt_hash, "prompt": text,
                           "raw_response": raw, "linked_run_hash": run_prompt_hash})
    return RulesCapture(raw, prompt_hash, run_prompt_hash, warning=not raw.strip())


# -- feature selection -----------------------------------------------------------


@dataclass(frozen=True)
class FeatureSubset:
    names: tuple[str, ...]  # in schema order
    mi_bits: float | None = None

    @property
    def k(self) -> int:
        return len(self.names)

    @classmethod
    def of(cls, names: Iterable[str], dataset: TabularDataset, mi_bits: float | None = None) -> "FeatureSubset":
        wanted = list(names)
        if len(set(wanted)) != len(wanted):
            raise InvalidInput(f"duplicate feature names in {wanted}")
        unknown = [n for n in wanted if n not in dataset.feature_names]
        if unknown:
            raise InvalidInput(f"unknown features {unknown}")
        return cls(tuple(n for n in dataset.feature_names if n in wanted), mi_bits)


def feature_selection_eval(subset: FeatureSubset | Sequence[str], sp: Split, config: EvalConfig) -> MetricSet:
    """Train the MLP on the subset's columns only and score it on the test rows."""
    names = subset.names if isinstance(subset, FeatureSubset) else tuple(subset)
    if not names:
        raise InvalidInput("feature subset is empty")
    sub = FeatureSubset.of(names, sp.train)
    restricted = Split(sp.train.select(sub.names), sp.test.select(sub.names))
    return _run_mlp(restricted, config)[1]["metrics"]


SELECTION_REQUEST = ("Which top-{k} features are the most useful for predicting the {target}? "
                     "The last line of your reply must have the form 'ANSWER: <name>, <name>, ...' "
                     "listing exactly {k} names from the candidate list.")


def selection_prompt(dataset: TabularDataset, k: int, mode: EvalMode, n_examples: int = 50,
                     seed: int = 0) -> tuple[str, list[str]]:
    """Prompt text and the candidate names it shows, in schema order."""
    mode = EvalMode(mode)
    semantics = SemanticSchema.fit(dataset)
    rows = dataset
    if n_examples < len(dataset):
        rows = split(dataset, n_examples, seed)[0]
    if mode is EvalMode.LIKELIHOOD_ONLY:
        view = numerize(rows, semantics)
        task = decontextualize(base_task(dataset))
        target = "class" if dataset.is_classification else "y"
        lines = [f"example {i}, features: [" + ", ".join(fmt_code(v) for v in r.features) + "], "
                 + f"{target} {int(r.target) if dataset.is_classification else format_value(r.target)}"
                 for i, r in enumerate(view.rows, 1)]
        candidates = view.feature_names
        head = task.text
    else:
        view = verbalize(rows, semantics)
        if dataset.context is None:
            raise InvalidInput("semantic feature selection needs a dataset with a context block")
        task = contextualize(base_task(dataset), dataset.context)
        target = dataset.target_schema.name
        phrases = dataset.context.label_phrases or {}
        lines = []
        for i, r in enumerate(view.rows, 1):
            cells = [f"{f.name}={format_value(v, f)}" for v, f in zip(r.features, view.schema)]
            if dataset.is_classification:
                lvl = dataset.target_schema.levels[int(r.target)]
                cells.append(phrases.get(lvl, f"{target}={lvl}"))
            else:
                cells.append(f"{target}={format_value(r.target)}")
            lines.append(f"case {i}, " + ", ".join(cells))
        candidates = view.feature_names
        head = task.text + " " + (task.hint or "")
    text = (head.strip() + "\n\nBelow are a few examples.\n" + SEPARATOR + "\n" + "\n".join(lines) + "\n"
            + SEPARATOR + "\n\nCandidate features:\n"
            + "\n".join(f"candidate {i}: {n}" for i, n in enumerate(candidates, 1)) + "\n\n"
            + SELECTION_REQUEST.format(k=k, target=target) + "\n")
    if mode is EvalMode.LIKELIHOOD_ONLY:
        hits = find_blocklisted(text, semantics.blocklist())
        if hits:
            raise InvalidInput(f"anonymous selection prompt leaks domain terms: {hits}")
    return text, candidates


_ANSWER = re.compile(r"(?im)^[^\S\n]*[*_`#>\s]*answer[*_`\s]*[:=]\s*(.*?)\s*$")


def parse_selection(raw: str, candidates: Sequence[str], k: int) -> list[str]:
    found = _ANSWER.findall(raw or "")
    if not found:
        raise SelectionFailure("no ANSWER line in the selection reply")
    items = [re.sub(r"^[\s'\"`*\[\(]+|[\s'\"`*\]\)\.]+$", "", s) for s in found[-1].split(",")]
    items = [s for s in items if s]
    lookup = {c.lower(): c for c in candidates}
    chosen = []
    for s in items:
        c = lookup.get(s.lower())
        if c is None:
            raise SelectionFailure(f"unknown feature {s!r} in the selection reply")
        if c in chosen:
            raise SelectionFailure(f"feature {c!r} named twice")
        chosen.append(c)
    if len(chosen) != k:
        raise SelectionFailure(f"expected {k} features, got {len(chosen)}")
    return chosen


def llm_select_features(dataset: TabularDataset, k: int, mode: EvalMode, backend, *,
                        n_examples: int = 50, seed: int = 0,
                        transcript: TranscriptLog | None = None) -> FeatureSubset:
    d = len(dataset.schema)
    if not 1 <= k <= d:
        raise InvalidInput(f"k={k} must be in [1, {d}]")
    text, candidates = selection_prompt(dataset, k, mode, n_examples, seed)
    try:
        raw = backend.complete(text, "select").raw_text
    except FmevalError as exc:
        raise SelectionFailure(f"selection request failed: {exc}") from exc
    if transcript is not None:
        transcript.append({"kind": "select", "prompt_hash": sha256_text(text)[:16], "prompt": text,
                           "raw_response": raw, "mode": EvalMode(mode).value, "k": k})
    chosen = parse_selection(raw, candidates, k)
    names = [dataset.feature_names[candidates.index(c)] for c in chosen]
    return FeatureSubset.of(names, dataset)


# -- mutual information ----------------------------------------------------------


def discretize(dataset: TabularDataset, bins: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Integer codes per feature (categorical levels, numeric quantile bins) and target codes."""
    cols = []
    for j, f in enumerate(dataset.schema):
        values = dataset.column(f.name)
        if f.is_categorical:
            cols.append(np.array([f.level_index(v) for v in values]))
        else:
            x = np.asarray(values, dtype=float)
            edges = np.unique(np.quantile(x, np.arange(1, bins) / bins))
            cols.append(np.searchsorted(edges, x, side="right"))
    X = np.stack(cols, axis=1) if cols else np.zeros((len(dataset), 0), dtype=int)
    t = dataset.targets()
    if dataset.is_classification:
        y = t.astype(int)
    else:
        edges = np.unique(np.quantile(t, np.arange(1, bins) / bins))
        y = np.searchsorted(edges, t, side="right")
    return X.astype(np.int64), y.astype(np.int64)


def _entropy_bits(keys: np.ndarray) -> float:
    _, counts = np.unique(keys, axis=0, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def mutual_information(X: np.ndarray, y: np.ndarray) -> float:
    """Plug-in estimate of I(X; y) in bits from joint frequencies; X is (n, k) codes."""
    X = np.asarray(X).reshape(len(y), -1)
    y = np.asarray(y).reshape(-1, 1)
    if X.shape[1] == 0:
        return 0.0
    return _entropy_bits(X) + _entropy_bits(y) - _entropy_bits(np.hstack([X, y]))


def subset_mi(X: np.ndarray, y: np.ndarray, idx: Sequence[int]) -> float:
    return mutual_information(X[:, sorted(idx)], y)


_TIE = 1e-12


def _check_k(k: int, d: int):
    if k < 1 or k > d:
        raise InvalidInput(f"k={k} must be in [1, {d}]")


def mi_greedy(dataset: TabularDataset, k: int, bins: int = 4) -> FeatureSubset:
    """Add, k times, the feature that maximizes the joint MI of the chosen set."""
    d = len(dataset.schema)
    _check_k(k, d)
    X, y = discretize(dataset, bins)
    chosen: list[int] = []
    best = 0.0
    for _ in range(k):
        best_j, best = None, -math.inf
        for j in range(d):
            if j in chosen:
                continue
            mi = subset_mi(X, y, chosen + [j])
            if mi > best + _TIE:  # earlier schema position wins ties
                best_j, best = j, mi
        chosen.append(best_j)
    return FeatureSubset.of([dataset.feature_names[j] for j in chosen], dataset, subset_mi(X, y, chosen))


def mi_exhaustive(dataset: TabularDataset, k: int, bins: int = 4, max_features: int = 16) -> FeatureSubset:
    """Best k-subset over all C(d, k) candidates; the lexicographically first wins exact ties."""
    d = len(dataset.schema)
    _check_k(k, d)
    if d > max_features:
        raise InvalidInput(f"exhaustive search is limited to {max_features} features, got {d}")
    X, y = discretize(dataset, bins)
    best_idx, best = None, -math.inf
    for idx in itertools.combinations(range(d), k):
        mi = subset_mi(X, y, idx)
        if mi > best:  # strict: the result is the exact maximum of the estimator
            best_idx, best = idx, mi
    return FeatureSubset.of([dataset.feature_names[j] for j in best_idx], dataset, best)


# -- CO2 extrapolation -----------------------------------------------------------


CO2_KERNELS = {"rbf": make_rbf_kernel, "llm": make_llm_kernel, "expert": make_expert_kernel}


@dataclass
class SeriesFit:
    kernel_id: str
    kernel: str
    initial_lml: float
    lml: float
    rmse: float
    test_x: list[float]
    test_y: list[float]
    mean: list[float]
    sd: list[float]
    peak_period_months: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def dominant_period(values: Sequence[float], step_months: float = 1.0) -> float | None:
    """Period (in months) of the strongest non-constant Fourier component after a linear detrend."""
    v = np.asarray(values, dtype=float)
    if v.size < 4:
        return None
    t = np.arange(v.size)
    resid = v - np.polyval(np.polyfit(t, v, 1), t)
    power = np.abs(np.fft.rfft(resid))[1:]
    k = int(np.argmax(power)) + 1
    return v.size * step_months / k


def fit_series_gp(series: SeriesDataset, kernel_id: str, kernel: KernelExpr | None = None, *,
                  train_end: float = 1981.0, test_start: float = 1990.0, test_end: float = 1993.0,
                  restarts: int = 5, steps: int = 100, seed: int = 0) -> SeriesFit:
    """Optimize a kernel on x < train_end and extrapolate to [test_start, test_end).

    Time is centred on the training mean and y on the training mean before fitting.
    """
    kernel = kernel if kernel is not None else CO2_KERNELS[kernel_id]()
    train = series.window(hi=train_end)
    test = series.window(test_start, test_end)
    if len(train.points) < 2 or not test.points:
        raise InvalidInput("series windows leave no training or no test points")
    x0, y0 = float(train.x.mean()), float(train.y.mean())
    x, y = train.x - x0, train.y - y0
    res = gp_optimize(kernel, x, y, restarts=restarts, steps=steps,
                      seed=derive_seed(seed, "co2", kernel_id), full=True)
    model = gp_fit(res.kernel, x, y)
    mean, var = gp_predict(model, test.x - x0)
    pred = mean + y0
    rmse = float(np.sqrt(np.mean((pred - test.y) ** 2)))
    return SeriesFit(kernel_id, dumps_kernel(res.kernel), res.initial_lml, res.lml, rmse,
                     test.x.tolist(), test.y.tolist(), pred.tolist(), np.sqrt(var).tolist(),
                     dominant_period(pred))
