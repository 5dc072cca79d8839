import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmeval.errors import DomainError, InvalidInput
from fmeval.synthetic import (
    Family,
    FunctionSpec,
    eval_function,
    gen_sampleset,
    make_spec,
    make_synthetic_task,
    random_spec,
)


def test_linear_value():
    assert eval_function(make_spec("linear", {"a": 2, "b": 1}), 3) == 7


def test_sine_at_zero():
    assert eval_function(make_spec("sine", {"A": 1, "omega": 1, "phi": 0}), 0) == 0


def test_periodic_linear_value():
    spec = make_spec("periodic_linear", {"a": 0.5, "b": 1, "omega": 2 * math.pi})
    assert eval_function(spec, 1) == pytest.approx(0.5 + math.sin(2 * math.pi), abs=1e-15)


def test_domain_errors():
    spec = make_spec("logarithmic")
    with pytest.raises(DomainError):
        eval_function(spec, 0.0)
    with pytest.raises(DomainError):
        eval_function(make_spec("power_law"), -1.0)


def test_spec_invariants():
    with pytest.raises(InvalidInput):
        make_spec("linear", x_range=(1.0, 1.0))
    with pytest.raises(InvalidInput):
        make_spec("logarithmic", x_range=(0.0, 1.0))
    with pytest.raises(InvalidInput):
        make_spec("power_law", x_range=(-1.0, 1.0))
    with pytest.raises(InvalidInput):
        FunctionSpec("cubic")


def test_exactly_ten_families():
    assert len(Family) == 10
    for fam in Family:
        s = random_spec(fam, seed=0)
        y = eval_function(s, gen_sampleset(s, 5).x)
        assert np.all(np.isfinite(y))


def test_even_grid():
    s = gen_sampleset(make_spec("linear", x_range=(0.0, 1.0)), 25)
    assert s.x[0] == 0.0 and s.x[24] == 1.0
    assert np.allclose(np.diff(s.x), 1 / 24, atol=1e-12, rtol=0)


def test_noiseless_points_on_curve():
    spec = make_spec("gaussian")
    s = gen_sampleset(spec, 25)
    assert np.array_equal(s.y, eval_function(spec, s.x))


def test_noise_sd_matches():
    spec = make_spec("linear", noise_sd=0.1, seed=2)
    s = gen_sampleset(spec, 10_000)
    resid = s.y - eval_function(spec, s.x)
    assert 0.095 <= resid.std(ddof=1) <= 0.105


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(Family)), st.integers(0, 10_000), st.booleans())
def test_sampleset_reproducible_and_in_range(fam, seed, random_x):
    spec = random_spec(fam, seed, noise_sd=0.05)
    a, b = gen_sampleset(spec, 25, random_x), gen_sampleset(spec, 25, random_x)
    assert a.points == b.points and a.n == 25
    lo, hi = spec.x_range
    assert np.all((a.x >= lo) & (a.x <= hi))


def test_task_text_and_queries():
    spec = make_spec("linear")
    task = make_synthetic_task(spec, n=25)
    assert "linear" not in task.task.text.lower()
    assert len(task.train) == 25 and len(task.queries) == 10
    qx = task.queries.matrix()[:, 0]
    assert np.array_equal(task.queries.targets(), eval_function(spec, qx))


def test_prompt_lists_all_training_points():
    from fmeval.prompts import build_prompt
    from fmeval.transforms import SemanticSchema, numerize

    task = make_synthetic_task(make_spec("linear"), n=25)
    sem = SemanticSchema.fit(task.train)
    p = build_prompt("likelihood", numerize(task.train, sem), task.task, numerize(task.queries, sem).rows[0])
    assert len(p.incontext_block) == 25
    assert p.text.count("\nexample ") == 26  # 25 rows plus the query
