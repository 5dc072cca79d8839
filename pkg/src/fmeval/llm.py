"""Chat-completion client, answer extraction and the offline mock backend."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from fmeval.errors import (
    AuthFailure,
    ExtractionFailure,
    FmevalError,
    InvalidInput,
    LlmError,
    MalformedResponse,
    MockParseFailure,
    RateLimited,
    Timeout,
)
from fmeval.prompts import PromptBundle
from fmeval.util import canonical_json, sha256_text

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"


@dataclass(frozen=True)
class ClientConfig:
    endpoint_url: str = DEFAULT_ENDPOINT
    model_name: str = "gpt-4"
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 4
    concurrency_limit: int = 4
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 1.0
    repeats: int = 3
    # set only through ${VAR} interpolation in run configs; never written to snapshots
    api_key: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidInput("temperature must be >= 0")
        if self.concurrency_limit < 1:
            raise InvalidInput("concurrency_limit must be >= 1")
        if self.max_retries < 0:
            raise InvalidInput("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClientConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    usage: Mapping[str, int] = field(default_factory=dict)
    latency: float = 0.0
    attempts: tuple[Mapping, ...] = ()


# -- transcripts -------------------------------------------------------------------


class TranscriptLog:
    """Append-only JSON-lines log; writes are serialized across threads."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: Mapping) -> None:
        line = canonical_json(record) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


# -- live client -----------------------------------------------------------------


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


def _prompt_text(prompt: PromptBundle | str) -> str:
    return prompt.text if isinstance(prompt, PromptBundle) else str(prompt)


def complete(
    config: ClientConfig,
    prompt: PromptBundle | str,
    *,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
    transcript: TranscriptLog | None = None,
) -> LlmResponse:
    """POST one chat-completion request, retrying transient failures.

    429 and 5xx responses, timeouts and connection errors are retried with
    exponential backoff (``backoff_base * 2**attempt`` seconds) up to
    ``max_retries`` times.
    """
    text = _prompt_text(prompt)
    payload = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": text}],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    headers = {"Content-Type": "application/json"}
    key = config.api_key or os.environ.get(config.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"

    own_client = client is None
    http = client or httpx.Client(timeout=config.timeout)
    attempts: list[dict] = []
    last_error: LlmError | None = None
    t0 = time.monotonic()
    try:
        for attempt in range(config.max_retries + 1):
            if attempt:
                sleep(config.backoff_base * 2 ** (attempt - 1))
            started = time.monotonic()
            try:
                resp = http.post(config.endpoint_url, json=payload, headers=headers, timeout=config.timeout)
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"request timed out after {config.timeout}s: {exc}")
                attempts.append({"attempt": attempt + 1, "error": "timeout"})
                continue
            except httpx.TransportError as exc:
                last_error = Timeout(f"endpoint unreachable: {exc}")
                attempts.append({"attempt": attempt + 1, "error": type(exc).__name__})
                continue
            attempts.append({"attempt": attempt + 1, "status": resp.status_code,
                             "latency": round(time.monotonic() - started, 6)})
            log.debug("attempt %d -> HTTP %d", attempt + 1, resp.status_code)
            if resp.status_code in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code in _TRANSIENT_STATUS:
                last_error = (RateLimited if resp.status_code == 429 else LlmError)(
                    f"HTTP {resp.status_code} after {attempt + 1} attempts")
                continue
            if resp.status_code >= 400:
                raise LlmError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                raw = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"unexpected response body: {exc}") from None
            if not isinstance(raw, str):
                raise MalformedResponse("message content is not a string")
            out = LlmResponse(raw, dict(body.get("usage") or {}), time.monotonic() - t0, tuple(attempts))
            if transcript is not None:
                transcript.append({"prompt_hash": sha256_text(text)[:16], "prompt": text,
                                   "raw_response": raw, "attempts": attempts})
            return out
        assert last_error is not None
        raise last_error
    finally:
        if own_client:
            http.close()


# -- extraction ------------------------------------------------------------------

_NUMBER = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_STANDALONE_NUMBER = re.compile(r"(?<![\w.])" + _NUMBER + r"(?![\w])")
_ANSWER_LINE = re.compile(r"(?im)^[^\S\n]*[*_`#>\s]*(?:final\s+)?answer[*_`\s]*[:=][*_`\s]*(.*?)[*_`\s]*$")
_RANGE_TAIL = re.compile(_NUMBER + r"\s*(?:-|\u2013|to|and|or)\s*" + _NUMBER + r"$")
_CLASS_KEYWORD = r"(?:class|label|prediction|predicted class|answer)\s*(?:is|=|:|of)?\s*[*_`'\"]*"


@dataclass(frozen=True)
class Prediction:
    value: int | float | None
    ok: bool
    error: str | None = None
    prompt_hash: str = ""
    raw_text: str = ""


def _clean_token(token: str) -> str:
    return token.strip().strip("*_`'\"").strip().rstrip(".").strip()


def _mentions(text: str, label: str) -> bool:
    return re.search(r"(?<![\w.])" + re.escape(label) + r"(?![\w]|\.\d)", text, flags=re.I) is not None


def _match_label(token: str, labels: Sequence[str]) -> int | None:
    t = _clean_token(token).lower()
    for prefix in ("class ", "label "):
        if t.startswith(prefix):
            t = t[len(prefix):]
    lowered = [lbl.lower() for lbl in labels]
    # longest first so "not married" is not read as "married"
    for idx in sorted(range(len(labels)), key=lambda i: -len(lowered[i])):
        lbl = lowered[idx]
        if t == lbl:
            return idx
        if t.startswith(lbl) and not (t[len(lbl)].isalnum() or t[len(lbl)] == "."):
            rest = t[len(lbl):]
            # "0 or 1" names two classes: refuse rather than guess
            if any(_mentions(rest, other) for j, other in enumerate(lowered) if j != idx):
                return None
            return idx
    return None


def _parse_real(token: str) -> float | None:
    """The single number in an ANSWER value; None if there are zero or several."""
    nums = _STANDALONE_NUMBER.findall(_clean_token(token).replace(",", ""))
    if len(nums) != 1:
        return None
    v = float(nums[0])
    return v if math.isfinite(v) else None


def _keyword_label(text: str, labels: Sequence[str]) -> int | None:
    alternatives = "|".join(re.escape(lbl) for lbl in sorted(labels, key=len, reverse=True))
    pattern = re.compile(r"(?i)(?<![\w])" + _CLASS_KEYWORD + r"(" + alternatives + r")(?![\w])")
    found = [(m.group(1), text.count("\n", 0, m.start())) for m in pattern.finditer(text)]
    if not found:
        return None
    last_line = found[-1][1]
    named = {_match_label(lbl, labels) for lbl, line in found if line == last_line}
    # two different labels asserted on the final line ("class 0 or class 1") are ambiguous
    return named.pop() if len(named) == 1 else None


def extract(response: LlmResponse | str, expected: str, labels: Sequence[str] = ()) -> int | float:
    """Read the prediction out of a model reply.

    The last ``ANSWER: <value>`` line wins. Without such a line, regression
    falls back to the last standalone number and classification to the last
    ``class is <label>``-style phrase (or a reply that is just a label). An
    ANSWER line with an invalid value fails outright instead of falling back.
    Classification returns the index of the matched label.
    """
    text = response.raw_text if isinstance(response, LlmResponse) else str(response)
    if expected not in ("class", "real"):
        raise InvalidInput(f"expected must be 'class' or 'real', got {expected!r}")
    if expected == "class" and not labels:
        raise InvalidInput("class extraction needs the label set")
    answers = _ANSWER_LINE.findall(text)
    if answers:
        token = answers[-1]
        if expected == "class":
            idx = _match_label(token, labels)
            if idx is None:
                idx = _keyword_label(token, labels)
            if idx is None:
                raise ExtractionFailure(f"ANSWER value {token!r} is not one of {list(labels)}")
            return idx
        value = _parse_real(token)
        if value is None:
            raise ExtractionFailure(f"ANSWER value {token!r} is not a number")
        return value

    if expected == "real":
        nums = list(_STANDALONE_NUMBER.finditer(text))
        if not nums:
            raise ExtractionFailure("no number in response")
        if _RANGE_TAIL.search(text[: nums[-1].end()]):
            raise ExtractionFailure("response ends with a range, not a single value")
        value = float(nums[-1].group(0))
        if not math.isfinite(value):
            raise ExtractionFailure("non-finite number in response")
        return value

    if _clean_token(text).lower() in {lbl.lower() for lbl in labels}:
        return _match_label(text, labels)
    idx = _keyword_label(text, labels)
    if idx is not None:
        return idx
    raise ExtractionFailure("no class label found in response")


def expected_kind(bundle: PromptBundle) -> str:
    return "class" if bundle.task_type == "classification" else "real"


def extract_for(bundle: PromptBundle, response: LlmResponse | str) -> int | float:
    return extract(response, expected_kind(bundle), bundle.labels)


# -- mock backend ----------------------------------------------------------------

_LIK_ROW = re.compile(r"^example (\d+), features: \[(.*)\], (class|y) (.+)$")
_LIK_QUERY = re.compile(r"^example x, features: \[(.*)\], (class|y)=\?$")


def _split_segments(text: str) -> list[str]:
    """Split on ', ' outside single-quoted values."""
    segs, buf, quote = [], [], False
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "'" and (not buf or buf[-1] == "=" or quote):
            quote = not quote
        if not quote and text.startswith(", ", i):
            segs.append("".join(buf))
            buf = []
            i += 2
            continue
        buf.append(ch)
        i += 1
    segs.append("".join(buf))
    return segs


def _parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] == "'":
        return raw[1:-1]
    m = re.match(_NUMBER + r"(?:\s+\S.*)?$", raw)
    if m:
        return float(re.match(_NUMBER, raw).group(0))
    return raw


def _parse_mock_prompt(text: str):
    lines = text.splitlines()
    rows, query = [], None
    query_lines = [ln for ln in lines if ln.startswith(("example x,", "case x,"))]
    if len(query_lines) != 1:
        raise MockParseFailure("prompt has no single query line")
    qline = query_lines[0]
    if qline.startswith("example x,"):
        m = _LIK_QUERY.match(qline)
        if not m:
            raise MockParseFailure(f"cannot parse query line {qline!r}")
        query = [float(v) for v in m.group(1).split(", ")] if m.group(1) else []
        kind = "class" if m.group(2) == "class" else "real"
        for ln in lines:
            mm = _LIK_ROW.match(ln)
            if mm:
                feats = [float(v) for v in mm.group(2).split(", ")] if mm.group(2) else []
                rows.append((feats, mm.group(4).strip()))
        return "numeric", kind, rows, query
    qsegs = _split_segments(qline[len("case x, "):])
    if not qsegs[-1].endswith("=?"):
        raise MockParseFailure(f"query line does not end with '<target>=?': {qline!r}")
    target = qsegs[-1][:-2]
    query = [_parse_value(s.split("=", 1)[1]) for s in qsegs[:-1]]
    kind = "class"
    for ln in lines:
        m = re.match(r"^case (\d+), (.*)$", ln)
        if not m:
            continue
        segs = _split_segments(m.group(2))
        last = segs[-1]
        feats = [_parse_value(s.split("=", 1)[1]) for s in segs[:-1]]
        label = last
        if last.startswith(target + "=") and not isinstance(_parse_value(last[len(target) + 1:]), str):
            kind = "real"
            label = last[len(target) + 1:]
        rows.append((feats, label))
    return "verbal", kind, rows, query


def _distances(rows, query, space: str) -> list[float]:
    if space == "numeric":
        return [math.sqrt(sum((a - b) ** 2 for a, b in zip(feats, query))) for feats, _ in rows]
    # verbal rows: numeric columns min-max scaled over rows+query, categorical mismatch = 1
    columns = list(zip(*([f for f, _ in rows] + [query]))) if rows else []
    scales = []
    for col in columns:
        if all(isinstance(v, float) for v in col):
            lo, hi = min(col), max(col)
            scales.append((lo, hi - lo if hi > lo else 1.0))
        else:
            scales.append(None)
    out = []
    for feats, _ in rows:
        s = 0.0
        for a, b, sc in zip(feats, query, scales):
            if sc is None or not isinstance(a, float) or not isinstance(b, float):
                s += 0.0 if a == b else 1.0
            else:
                s += ((a - b) / sc[1]) ** 2
        out.append(math.sqrt(s))
    return out


def mock_complete(prompt: PromptBundle | str) -> LlmResponse:
    """Deterministic k-NN stand-in for a model.

    Regression answers with the y of the nearest in-context example (ties go
    to the lower x); classification with the majority label of the 3 nearest
    examples (ties go to the label of the nearest one).
    """
    text = _prompt_text(prompt)
    space, kind, rows, query = _parse_mock_prompt(text)
    if not rows:
        raise MockParseFailure("prompt has no in-context examples")
    if any(len(f) != len(query) for f, _ in rows):
        raise MockParseFailure("in-context rows and query differ in arity")
    dist = _distances(rows, query, space)

    def x_key(i):
        return tuple(v if isinstance(v, float) else math.inf for v in rows[i][0])

    if kind == "real":
        best = min(range(len(rows)), key=lambda i: (dist[i], x_key(i), i))
        answer = rows[best][1]
    else:
        order = sorted(range(len(rows)), key=lambda i: (dist[i], i))[:3]
        votes: dict[str, int] = {}
        for i in order:
            votes[rows[i][1]] = votes.get(rows[i][1], 0) + 1
        top = max(votes.values())
        answer = next(rows[i][1] for i in order if votes[rows[i][1]] == top)
    raw = f"Nearest-neighbour guess.\nANSWER: {answer}"
    return LlmResponse(raw, {"prompt_tokens": len(text.split()), "completion_tokens": 4}, 0.0, ({"attempt": 1},))


# -- backends & batching -----------------------------------------------------------


class LiveBackend:
    name = "live"

    def __init__(self, config: ClientConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def complete(self, prompt: PromptBundle | str, kind: str = "predict") -> LlmResponse:
        return complete(self.config, prompt, client=self._client, sleep=self._sleep)

    def close(self) -> None:
        self._client.close()


class MockBackend:
    """Offline backend: k-NN for predictions, fixed text for other requests."""

    name = "mock"

    def __init__(self, config: ClientConfig | None = None, rules_text: str = "1. (mock) no rules available.",
                 selection: Sequence[str] | None = None):
        self.config = config or ClientConfig(repeats=1)
        self.rules_text = rules_text
        self.selection = list(selection) if selection is not None else None

    def complete(self, prompt: PromptBundle | str, kind: str = "predict") -> LlmResponse:
        if kind == "predict":
            return mock_complete(prompt)
        if kind == "rules":
            return LlmResponse(self.rules_text)
        if kind == "select":
            if self.selection is not None:
                return LlmResponse("ANSWER: " + ", ".join(self.selection))
            names = re.findall(r"^candidate \d+: (.+)$", _prompt_text(prompt), flags=re.M)
            k = int(re.search(r"top-(\d+)", _prompt_text(prompt)).group(1))
            return LlmResponse("ANSWER: " + ", ".join(names[:k]))
        raise InvalidInput(f"unknown request kind {kind!r}")

    def close(self) -> None:
        pass


@dataclass
class BatchResult:
    predictions: list[Prediction]
    errors: list[tuple[int, str]]

    @property
    def n_failures(self) -> int:
        return sum(1 for p in self.predictions if not p.ok)


def predict_one(backend, bundle: PromptBundle, transcript: TranscriptLog | None = None,
                extra: Mapping | None = None) -> Prediction:
    try:
        resp = backend.complete(bundle, "predict")
    except FmevalError as exc:
        pred = Prediction(None, False, f"{type(exc).__name__}: {exc}", bundle.hash)
        if transcript is not None:
            transcript.append({"prompt_hash": bundle.hash, "prompt": bundle.text, "raw_response": None,
                               "prediction": None, "error": pred.error, **(extra or {})})
        return pred
    try:
        value = extract_for(bundle, resp)
        pred = Prediction(value, True, None, bundle.hash, resp.raw_text)
    except ExtractionFailure as exc:
        pred = Prediction(None, False, f"ExtractionFailure: {exc}", bundle.hash, resp.raw_text)
    if transcript is not None:
        transcript.append({
            "prompt_hash": bundle.hash, "prompt": bundle.text, "raw_response": resp.raw_text,
            "expected": expected_kind(bundle), "labels": list(bundle.labels),
            "prediction": pred.value, "error": pred.error, "attempts": list(resp.attempts),
            **(extra or {}),
        })
    return pred


def batch_predict(backend, prompts: Sequence[PromptBundle], parallelism: int = 1,
                  transcript: TranscriptLog | None = None,
                  extras: Sequence[Mapping] | None = None) -> BatchResult:
    """Run all prompts; results keep input order and failures stay per-item."""
    limit = getattr(getattr(backend, "config", None), "concurrency_limit", 1)
    if parallelism < 1 or parallelism > limit:
        raise InvalidInput(f"parallelism {parallelism} must be in [1, {limit}]")
    extras = list(extras) if extras is not None else [None] * len(prompts)

    def run(i):
        return predict_one(backend, prompts[i], transcript, extras[i])

    if parallelism == 1:
        preds = [run(i) for i in range(len(prompts))]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            preds = list(pool.map(run, range(len(prompts))))
    errors = [(i, p.error) for i, p in enumerate(preds) if not p.ok]
    return BatchResult(preds, errors)


def replay_transcript(path: str | Path) -> list[tuple[dict, int | float | None]]:
    """Re-run extraction over logged responses; returns (record, re-extracted value)."""
    out = []
    for rec in TranscriptLog(path).records():
        if rec.get("raw_response") is None or "expected" not in rec:
            continue
        try:
            value = extract(rec["raw_response"], rec["expected"], rec.get("labels") or ())
        except ExtractionFailure:
            value = None
        out.append((rec, value))
    return out
