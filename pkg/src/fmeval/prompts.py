"""Prompt rendering for the two evaluation modes.

Likelihood-only prompts show anonymous numeric vectors::

    example 1, features: [1.0, 0.33], class 0

Posterior prompts show named, verbal rows plus the domain hint::

    case 1, degree=Doctorate, age=33 years, high income
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from fmeval.domain import EvalMode, Example, TabularDataset
from fmeval.errors import ModeViolation
from fmeval.transforms import (
    TaskDescription,
    class_list_text,
    find_blocklisted,
    format_value,
    is_anonymized,
)
from fmeval.util import sha256_text

SEPARATOR = "-" * 53
GUESS_SENTENCE = "An intuitive guess rather than an accurate estimate is enough."
DOMAIN_SENTENCE = "In this process, please actively utilize any domain knowledge you know about the task."
EXAMPLES_INTRO = "Below are a few examples that you can learn from. Your prediction is based on them."


@dataclass(frozen=True)
class PromptBundle:
    task_text: str
    hint: str | None
    incontext_block: tuple[str, ...]
    query_text: str
    answer_format_clause: str
    mode: EvalMode
    task_type: str = "classification"
    # answer tokens; the index of a token is its class index
    labels: tuple[str, ...] = ()
    target_name: str = "class"

    @property
    def text(self) -> str:
        task = self.task_text.strip()
        extras = [GUESS_SENTENCE]
        if self.mode is EvalMode.POSTERIOR_FULL:
            extras.append(DOMAIN_SENTENCE)
            if self.hint:
                extras.append(self.hint)
        parts = [task + ("\n" if "\n" in task else " ") + " ".join(extras)]
        if self.incontext_block:
            parts.append(EXAMPLES_INTRO + "\n" + SEPARATOR + "\n" + "\n".join(self.incontext_block) + "\n" + SEPARATOR)
        noun = "data" if self.mode is EvalMode.LIKELIHOOD_ONLY else "case"
        parts.append(f"Now predict the {self.target_name} for the {noun} below:")
        parts.append(self.query_text)
        parts.append(self.answer_format_clause)
        return "\n\n".join(parts) + "\n"

    @property
    def hash(self) -> str:
        return sha256_text(self.text)[:16]


def fmt_code(v: float) -> str:
    """Numerized value as in the figure layout: 1.0, 0.33, 0.4."""
    r = round(float(v), 2)
    return repr(r + 0.0)  # + 0.0 folds -0.0 into 0.0


def _likelihood_row(i: int | str, ex: Example, dataset: TabularDataset, target: str | None) -> str:
    feats = "[" + ", ".join(fmt_code(v) for v in ex.features) + "]"
    word = "class" if dataset.is_classification else "y"
    tail = f"{word}=?" if target is None else f"{word} {target}"
    return f"example {i}, features: {feats}, {tail}"


def _label_tokens(dataset: TabularDataset, mode: EvalMode) -> tuple[str, ...]:
    t = dataset.target_schema
    if not t.is_categorical:
        return ()
    if mode is EvalMode.LIKELIHOOD_ONLY:
        return tuple(str(i) for i in range(len(t.levels)))
    phrases = dataset.context.label_phrases if dataset.context else {}
    return tuple(phrases.get(lvl, f"{t.name}={lvl}") for lvl in t.levels)


def _posterior_row(i: int | str, ex: Example, dataset: TabularDataset, labels: Sequence[str],
                   with_target: bool) -> str:
    parts = [f"{f.name}={format_value(v, f)}" for v, f in zip(ex.features, dataset.schema)]
    t = dataset.target_schema
    if not with_target:
        parts.append(f"{t.name}=?")
    elif t.is_categorical:
        parts.append(labels[int(ex.target)])
    else:
        parts.append(f"{t.name}={format_value(ex.target)}")
    return f"case {i}, " + ", ".join(parts)


def _answer_clause(mode: EvalMode, dataset: TabularDataset, labels: Sequence[str]) -> str:
    lead = "You may reason briefly, but the last line of your reply must have the form "
    if not dataset.is_classification:
        return lead + "'ANSWER: <number>', where <number> is your predicted value."
    if mode is EvalMode.LIKELIHOOD_ONLY:
        return lead + f"'ANSWER: <class>', where <class> is {class_list_text(len(labels))}."
    return lead + "'ANSWER: <label>', where <label> is one of: " + ", ".join(labels) + "."


def build_prompt(
    mode: EvalMode,
    dataset: TabularDataset,
    task: TaskDescription,
    query: Example,
    *,
    blocklist: Iterable[str] | None = None,
    shuffle_seed: int | None = None,
) -> PromptBundle:
    """Render the in-context examples of ``dataset`` and one query row.

    The dataset must already be in the form the mode expects: numerized for
    likelihood-only, verbalized for posterior. With a blocklist, likelihood
    prompts are scanned and rejected on any hit.
    """
    mode = EvalMode(mode)
    anon = is_anonymized(dataset)
    if mode is EvalMode.LIKELIHOOD_ONLY:
        if not anon:
            raise ModeViolation("likelihood-only prompts need numerized, anonymous features")
        if task.mode_tag is not EvalMode.LIKELIHOOD_ONLY or task.hint:
            raise ModeViolation("likelihood-only prompts need a decontextualized task without hint")
    else:
        if anon:
            raise ModeViolation("posterior prompts need verbalized features, got anonymous ones")
        if task.mode_tag is not EvalMode.POSTERIOR_FULL:
            raise ModeViolation("posterior prompts need a contextualized task")
    if len(query.features) != len(dataset.schema):
        raise ModeViolation("query arity does not match the dataset schema")

    rows = list(dataset.rows)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(rows))
        rows = [rows[i] for i in order]

    labels = _label_tokens(dataset, mode)
    if mode is EvalMode.LIKELIHOOD_ONLY:
        def target_text(ex):
            return str(int(ex.target)) if dataset.is_classification else format_value(ex.target)

        block = tuple(_likelihood_row(i, ex, dataset, target_text(ex)) for i, ex in enumerate(rows, 1))
        query_text = _likelihood_row("x", query, dataset, None)
        target_name = "class" if dataset.is_classification else "y"
    else:
        block = tuple(_posterior_row(i, ex, dataset, labels, True) for i, ex in enumerate(rows, 1))
        query_text = _posterior_row("x", query, dataset, labels, False)
        target_name = dataset.target_schema.name

    bundle = PromptBundle(
        task_text=task.text,
        hint=task.hint if mode is EvalMode.POSTERIOR_FULL else None,
        incontext_block=block,
        query_text=query_text,
        answer_format_clause=_answer_clause(mode, dataset, labels),
        mode=mode,
        task_type="classification" if dataset.is_classification else "regression",
        labels=labels,
        target_name=target_name,
    )
    if mode is EvalMode.LIKELIHOOD_ONLY and blocklist is not None:
        hits = find_blocklisted(bundle.text, blocklist)
        if hits:
            raise ModeViolation(f"likelihood-only prompt leaks domain terms: {hits}")
    return bundle
