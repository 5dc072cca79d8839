"""Composable stationary kernels with analytic hyperparameter gradients.

Kernels form an expression tree of primitives joined by Sum and Product.
On multi-dimensional inputs ExpSineSquared sums its sine term over
dimensions (a product of 1-D periodic kernels), which keeps it positive
semi-definite; on 1-D inputs this is the usual form.
Hyperparameters are enumerated in prefix order (node first, then left, then
right); gradients are taken with respect to their logarithms.

Text form, round-trip exact::

    sum(rbf(v=4356.0,l=67.0),prod(rbf(v=5.76,l=90.0),expsine(v=1.0,l=1.3,p=1.0)))
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields, replace
from typing import Sequence, Union

import numpy as np

from fmeval.errors import InvalidInput


def _check_positive(node) -> None:
    for f in fields(node):
        value = getattr(node, f.name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise InvalidInput(f"{type(node).__name__}.{f.name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class RBF:
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class ExpSineSquared:
    variance: float = 1.0
    lengthscale: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class RationalQuadratic:
    variance: float = 1.0
    lengthscale: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class WhiteNoise:
    variance: float = 1.0

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class Sum:
    left: "KernelExpr"
    right: "KernelExpr"


@dataclass(frozen=True)
class Product:
    left: "KernelExpr"
    right: "KernelExpr"


KernelExpr = Union[RBF, ExpSineSquared, RationalQuadratic, WhiteNoise, Sum, Product]
PRIMITIVES = (RBF, ExpSineSquared, RationalQuadratic, WhiteNoise)

_TAGS = {RBF: "rbf", ExpSineSquared: "expsine", RationalQuadratic: "rq", WhiteNoise: "white",
         Sum: "sum", Product: "prod"}
_SHORT = {"variance": "v", "lengthscale": "l", "period": "p", "alpha": "a"}


def _points(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, None]
    return a


def _dist2(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _abs_diff(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.abs(A[:, None, :] - B[None, :, :])


def _same(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.all(A[:, None, :] == B[None, :, :], axis=-1).astype(float)


def leaves(k: KernelExpr) -> list:
    if isinstance(k, (Sum, Product)):
        return leaves(k.left) + leaves(k.right)
    return [k]


def params(k: KernelExpr) -> list[float]:
    """Hyperparameter values in prefix order."""
    if isinstance(k, (Sum, Product)):
        return params(k.left) + params(k.right)
    return [float(getattr(k, f.name)) for f in fields(k)]


def param_names(k: KernelExpr, prefix: str = "") -> list[str]:
    if isinstance(k, (Sum, Product)):
        tag = _TAGS[type(k)]
        return param_names(k.left, f"{prefix}{tag}.0.") + param_names(k.right, f"{prefix}{tag}.1.")
    return [f"{prefix}{_TAGS[type(k)]}.{f.name}" for f in fields(k)]


def with_params(k: KernelExpr, values: Sequence[float]) -> KernelExpr:
    """Same tree with hyperparameters replaced, consumed in prefix order."""
    it = iter([float(v) for v in values])
    out = _rebuild(k, it)
    if next(it, None) is not None:
        raise InvalidInput("too many hyperparameter values for this kernel")
    return out


def _rebuild(k, it):
    if isinstance(k, (Sum, Product)):
        left = _rebuild(k.left, it)
        return type(k)(left, _rebuild(k.right, it))
    try:
        return replace(k, **{f.name: next(it) for f in fields(k)})
    except StopIteration:
        raise InvalidInput("too few hyperparameter values for this kernel") from None


def gram(k: KernelExpr, X1, X2=None) -> np.ndarray:
    """Kernel matrix between two point sets (1-D arrays are single-feature points)."""
    A = _points(X1)
    B = A if X2 is None else _points(X2)
    return _gram(k, A, B, _dist2(A, B))


def _gram(k, A, B, d2):
    if isinstance(k, Sum):
        return _gram(k.left, A, B, d2) + _gram(k.right, A, B, d2)
    if isinstance(k, Product):
        return _gram(k.left, A, B, d2) * _gram(k.right, A, B, d2)
    if isinstance(k, RBF):
        return k.variance * np.exp(-d2 / (2 * k.lengthscale**2))
    if isinstance(k, ExpSineSquared):
        s = np.sin(np.pi * _abs_diff(A, B) / k.period)
        return k.variance * np.exp(-2 * np.sum(s * s, axis=-1) / k.lengthscale**2)
    if isinstance(k, RationalQuadratic):
        return k.variance * (1 + d2 / (2 * k.alpha * k.lengthscale**2)) ** (-k.alpha)
    if isinstance(k, WhiteNoise):
        return k.variance * _same(A, B)
    raise InvalidInput(f"not a kernel expression: {k!r}")


def kernel_eval(k: KernelExpr, x, x2) -> float:
    a = np.asarray(x, dtype=float).reshape(1, -1)
    b = np.asarray(x2, dtype=float).reshape(1, -1)
    return float(gram(k, a, b)[0, 0])


def kernel_diag(k: KernelExpr, X) -> np.ndarray:
    """k(x, x) for each point; every primitive is stationary so this is the summed variance."""
    A = _points(X)
    return np.full(len(A), float(_gram(k, A[:1], A[:1], np.zeros((1, 1)))[0, 0]))


def gram_with_grads(k: KernelExpr, X) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gram matrix of X and its derivatives with respect to each log-hyperparameter."""
    A = _points(X)
    return _grads(k, A, _dist2(A, A))


def _grads(k, A, d2):
    if isinstance(k, Sum):
        Kl, gl = _grads(k.left, A, d2)
        Kr, gr = _grads(k.right, A, d2)
        return Kl + Kr, gl + gr
    if isinstance(k, Product):
        Kl, gl = _grads(k.left, A, d2)
        Kr, gr = _grads(k.right, A, d2)
        return Kl * Kr, [g * Kr for g in gl] + [Kl * g for g in gr]
    if isinstance(k, RBF):
        K = k.variance * np.exp(-d2 / (2 * k.lengthscale**2))
        return K, [K, K * d2 / k.lengthscale**2]
    if isinstance(k, ExpSineSquared):
        arg = np.pi * _abs_diff(A, A) / k.period
        s = np.sin(arg)
        l2 = k.lengthscale**2
        s2 = np.sum(s * s, axis=-1)
        K = k.variance * np.exp(-2 * s2 / l2)
        return K, [K, K * 4 * s2 / l2, K * 4 * np.sum(s * np.cos(arg) * arg, axis=-1) / l2]
    if isinstance(k, RationalQuadratic):
        a, l2 = k.alpha, k.lengthscale**2
        u = 1 + d2 / (2 * a * l2)
        K = k.variance * u ** (-a)
        return K, [K, K * d2 / (l2 * u), K * (-a * np.log(u) + d2 / (2 * l2 * u))]
    if isinstance(k, WhiteNoise):
        K = k.variance * _same(A, A)
        return K, [K]
    raise InvalidInput(f"not a kernel expression: {k!r}")


# -- text form -------------------------------------------------------------------

def dumps_kernel(k: KernelExpr) -> str:
    if isinstance(k, (Sum, Product)):
        return f"{_TAGS[type(k)]}({dumps_kernel(k.left)},{dumps_kernel(k.right)})"
    args = ",".join(f"{_SHORT[f.name]}={getattr(k, f.name)!r}" for f in fields(k))
    return f"{_TAGS[type(k)]}({args})"


_TOKEN = re.compile(r"\s*(?:([a-z]+)|(\()|(\))|(,)|(=)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|inf|nan))")
_BY_TAG = {v: k for k, v in _TAGS.items()}


def _tokenize(text: str) -> list[str]:
    out, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise InvalidInput(f"cannot parse kernel text at offset {pos}: {text[pos:pos + 20]!r}")
        out.append(m.group(m.lastindex))
        pos = m.end()
    return out


def loads_kernel(text: str) -> KernelExpr:
    tokens = _tokenize(text)
    node, pos = _parse(tokens, 0)
    if pos != len(tokens):
        raise InvalidInput(f"trailing text after kernel expression: {tokens[pos:]}")
    return node


def _expect(tokens, pos, tok):
    if pos >= len(tokens) or tokens[pos] != tok:
        got = tokens[pos] if pos < len(tokens) else "end of text"
        raise InvalidInput(f"expected {tok!r} in kernel text, got {got!r}")
    return pos + 1


def _parse(tokens, pos):
    if pos >= len(tokens) or tokens[pos] not in _BY_TAG:
        raise InvalidInput(f"expected a kernel name at token {pos}")
    cls = _BY_TAG[tokens[pos]]
    pos = _expect(tokens, pos + 1, "(")
    if cls in (Sum, Product):
        left, pos = _parse(tokens, pos)
        pos = _expect(tokens, pos, ",")
        right, pos = _parse(tokens, pos)
        return cls(left, right), _expect(tokens, pos, ")")
    long = {_SHORT[f.name]: f.name for f in fields(cls)}
    kwargs = {}
    while True:
        key = tokens[pos] if pos < len(tokens) else None
        if key not in long or long[key] in kwargs:
            raise InvalidInput(f"bad or repeated argument {key!r} for {_TAGS[cls]}")
        pos = _expect(tokens, pos + 1, "=")
        try:
            kwargs[long[key]] = float(tokens[pos])
        except (IndexError, ValueError):
            raise InvalidInput(f"expected a number for {_TAGS[cls]}.{key}") from None
        pos += 1
        if pos < len(tokens) and tokens[pos] == ",":
            pos += 1
            continue
        break
    if set(kwargs) != set(long.values()):
        raise InvalidInput(f"{_TAGS[cls]} needs arguments {sorted(long)}")
    return cls(**kwargs), _expect(tokens, pos, ")")


# -- named kernels ---------------------------------------------------------------

def sum_of(*terms: KernelExpr) -> KernelExpr:
    out = terms[0]
    for t in terms[1:]:
        out = Sum(out, t)
    return out


def make_rbf_kernel() -> KernelExpr:
    return RBF(variance=100.0, lengthscale=20.0)


def make_llm_kernel() -> KernelExpr:
    """Long-term RBF + yearly ExpSineSquared + RationalQuadratic + WhiteNoise.

    Initial values (years, ppm): rbf(v=100, l=20), expsine(v=4, l=1, p=1),
    rq(v=1, l=1, a=1), white(v=0.1). The period starts at one year.
    """
    return sum_of(RBF(100.0, 20.0), ExpSineSquared(4.0, 1.0, 1.0), RationalQuadratic(1.0, 1.0, 1.0),
                  WhiteNoise(0.1))


def make_expert_kernel() -> KernelExpr:
    """Textbook CO2 construction: trend, decaying yearly cycle, medium-term
    irregularities, and correlated plus white noise (years, ppm)."""
    trend = RBF(66.0**2, 67.0)
    seasonal = Product(RBF(2.4**2, 90.0), ExpSineSquared(1.0, 1.3, 1.0))
    medium = RationalQuadratic(0.66**2, 1.2, 0.78)
    noise = Sum(RBF(0.18**2, 0.134), WhiteNoise(0.19**2))
    return sum_of(trend, seasonal, medium, noise)
