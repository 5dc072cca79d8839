import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmeval.baselines.kernels import (
    RBF,
    ExpSineSquared,
    Product,
    RationalQuadratic,
    Sum,
    WhiteNoise,
    dumps_kernel,
    gram,
    gram_with_grads,
    kernel_diag,
    kernel_eval,
    loads_kernel,
    make_expert_kernel,
    make_llm_kernel,
    make_rbf_kernel,
    params,
    with_params,
)
from fmeval.errors import InvalidInput


def scalar_oracle(k, x, x2) -> float:
    """Closed forms evaluated one pair at a time with the math module."""
    r = math.dist(x, x2)
    if isinstance(k, Sum):
        return scalar_oracle(k.left, x, x2) + scalar_oracle(k.right, x, x2)
    if isinstance(k, Product):
        return scalar_oracle(k.left, x, x2) * scalar_oracle(k.right, x, x2)
    if isinstance(k, RBF):
        return k.variance * math.exp(-r * r / (2 * k.lengthscale ** 2))
    if isinstance(k, ExpSineSquared):
        s2 = sum(math.sin(math.pi * abs(a - b) / k.period) ** 2 for a, b in zip(x, x2))
        return k.variance * math.exp(-2 * s2 / k.lengthscale ** 2)
    if isinstance(k, RationalQuadratic):
        return k.variance * (1 + r * r / (2 * k.alpha * k.lengthscale ** 2)) ** (-k.alpha)
    return k.variance if tuple(x) == tuple(x2) else 0.0


pos = st.floats(0.05, 5.0)
primitive = st.one_of(
    st.builds(RBF, pos, pos),
    st.builds(ExpSineSquared, pos, pos, pos),
    st.builds(RationalQuadratic, pos, pos, pos),
    st.builds(WhiteNoise, pos),
)


def trees(depth):
    if depth == 0:
        return primitive
    sub = trees(depth - 1)
    return st.one_of(primitive, st.builds(Sum, sub, sub), st.builds(Product, sub, sub))


kernel_trees = trees(3)


def test_rbf_unit_at_zero_distance():
    assert kernel_eval(RBF(1, 1), [0.3], [0.3]) == 1.0


def test_periodic_kernel_repeats():
    k = ExpSineSquared(2.0, 0.7, 1.5)
    assert kernel_eval(k, [0.2], [1.7]) == pytest.approx(kernel_eval(k, [0.2], [0.2]), abs=1e-12)


def test_rq_approaches_rbf():
    assert kernel_eval(RationalQuadratic(1, 1, 1e4), [0.0], [1.0]) == pytest.approx(math.exp(-0.5), abs=1e-3)


def test_positivity_enforced():
    for bad in (lambda: RBF(0, 1), lambda: RBF(1, -1), lambda: WhiteNoise(math.inf), lambda: ExpSineSquared(1, 1, 0)):
        with pytest.raises(InvalidInput):
            bad()


def test_named_kernels_zero_distance_sums_variances():
    llm = make_llm_kernel()
    assert kernel_eval(llm, [0.0], [0.0]) == pytest.approx(100 + 4 + 1 + 0.1, abs=1e-12)
    expert = make_expert_kernel()
    want = 66 ** 2 + 2.4 ** 2 * 1.0 + 0.66 ** 2 + 0.18 ** 2 + 0.19 ** 2
    assert kernel_eval(expert, [0.0], [0.0]) == pytest.approx(want, rel=1e-12)
    assert make_rbf_kernel() == RBF(100.0, 20.0)
    assert all(v > 0 for k in (llm, expert) for v in params(k))


@settings(max_examples=100, deadline=None)
@given(kernel_trees, st.integers(0, 2**32 - 1), st.integers(2, 10), st.integers(1, 3))
def test_gram_matches_oracle_and_is_symmetric(k, seed, n, dim):
    X = np.random.default_rng(seed).uniform(-3, 3, size=(n, dim))
    K = gram(k, X)
    assert np.array_equal(K, K.T)
    for i in range(n):
        for j in range(n):
            assert K[i, j] == pytest.approx(scalar_oracle(k, X[i], X[j]), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(kernel_trees, st.integers(0, 2**32 - 1), st.integers(2, 25), st.integers(1, 3))
def test_gram_is_psd(k, seed, n, dim):
    X = np.random.default_rng(seed).uniform(-3, 3, size=(n, dim))
    K = gram(k, X)
    scale = max(1.0, float(np.max(np.abs(K))))
    assert np.linalg.eigvalsh(K).min() > -1e-8 * scale


@settings(max_examples=60, deadline=None)
@given(kernel_trees)
def test_text_round_trip(k):
    text = dumps_kernel(k)
    assert loads_kernel(text) == k
    assert dumps_kernel(loads_kernel(text)) == text


def test_text_parse_errors():
    for bad in ("rbf(v=1)", "rbf(v=1,l=1", "sum(rbf(v=1,l=1))", "cubic(v=1)", "rbf(v=1,l=1) extra", "rbf(v=-1,l=1)"):
        with pytest.raises(InvalidInput):
            loads_kernel(bad)


@settings(max_examples=40, deadline=None)
@given(kernel_trees, st.integers(0, 1000), st.integers(1, 2))
def test_log_parameter_gradients(k, seed, dim):
    X = np.random.default_rng(seed).uniform(-2, 2, size=(6, dim))
    K, grads = gram_with_grads(k, X)
    assert np.allclose(K, gram(k, X), rtol=1e-12, atol=0)
    theta = np.log(params(k))
    h = 1e-6
    for i, g in enumerate(grads):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd = (gram(with_params(k, np.exp(up)), X) - gram(with_params(k, np.exp(down)), X)) / (2 * h)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7 * max(1.0, np.abs(K).max()))


def test_with_params_arity():
    k = make_llm_kernel()
    with pytest.raises(InvalidInput):
        with_params(k, params(k)[:-1])
    with pytest.raises(InvalidInput):
        with_params(k, params(k) + [1.0])


def test_diag_is_stationary_variance():
    k = make_llm_kernel()
    X = np.linspace(0, 5, 7)
    assert np.allclose(kernel_diag(k, X), np.diag(gram(k, X)))
