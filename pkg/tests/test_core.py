from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from batchroute.core import (ModelPool, ModelSpec, Query, State, amortized_state_cost, as_fraction,
                             batch_group_cost, format_money, query_cost, system_prompt_cost)


def model(t_sys=0, c_in="0.01", c_out="0.02", **kw):
    return ModelSpec("m", Fraction(c_in), Fraction(c_out), t_sys, **kw)


def query(t_in=1, t_out=1, qid="q"):
    return Query(qid, np.zeros(2), t_in, t_out)


@pytest.mark.parametrize("t_sys,c_in,expected", [(0, "0.01", "0"), (100, "0.01", "1"), (360, "0.025", "9")])
def test_system_prompt_cost(t_sys, c_in, expected):
    assert system_prompt_cost(model(t_sys, c_in)) == Fraction(expected)


def test_query_cost_examples():
    assert query_cost(query(1, 1), model(c_in="0", c_out="0")) == 0
    assert query_cost(query(50, 10), model(c_in="0.1", c_out="0.2")) == Fraction(7)


def test_query_rejects_zero_output_tokens():
    with pytest.raises(ValueError):
        Query("q", np.zeros(2), 200, 0)


def test_amortized_cost_unbatched_is_sum():
    m = model(360, "0.025")
    pool = ModelPool((m,))
    q = query(40, 1)
    assert amortized_state_cost(q, State(0, 1), pool) == system_prompt_cost(m) + query_cost(q, m)


def test_amortized_cost_example():
    # C_sys = 9, C_q = 1
    m = ModelSpec("m", Fraction(1, 40), Fraction(0), 360, batch_grid=(1, 4), effective_batch_size=4)
    q = Query("q", np.zeros(1), 40, 1)
    assert amortized_state_cost(q, State(0, 4), ModelPool((m,))) == Fraction(13, 4)


def test_batch_group_cost_examples():
    m = ModelSpec("m", Fraction(1, 40), Fraction(0), 360)
    qs = [Query(f"q{i}", np.zeros(1), 40, 1) for i in range(10)]
    assert batch_group_cost(m, 4, []) == 0
    assert batch_group_cost(m, 4, qs[:4]) == 13
    assert batch_group_cost(m, 4, qs) == 37


def test_pool_rejects_descending_prices():
    a = ModelSpec("a", Fraction(1), Fraction(1))
    b = ModelSpec("b", Fraction(2), Fraction("0.5"))
    with pytest.raises(ValueError, match="ascending"):
        ModelPool((a, b))
    ModelPool((a, ModelSpec("c", Fraction(1), Fraction(1))))


def test_pool_check_state():
    pool = ModelPool((model(batch_grid=(1, 4, 8), effective_batch_size=4),))
    pool.check_state(State(0, 4))
    for bad in (State(0, 8), State(0, 2), State(1, 1)):
        with pytest.raises(ValueError):
            pool.check_state(bad)


def test_format_money():
    assert format_money(Fraction(393, 10)) == "39.3"
    assert format_money(35) == "35.0"
    assert format_money(Fraction(1, 3)) == "0.333333333333"
    assert as_fraction(0.69) == Fraction(69, 100)
    with pytest.raises(ValueError):
        as_fraction(float("nan"))


prices = st.fractions(min_value=0, max_value=1, max_denominator=1000)


@given(t_sys=st.integers(0, 2000), c_in=prices, c_out=prices, t_in=st.integers(1, 500),
       t_out=st.integers(1, 100), b=st.integers(1, 63))
def test_amortized_cost_monotone_in_batch(t_sys, c_in, c_out, t_in, t_out, b):
    m = ModelSpec("m", c_in, c_out, t_sys, batch_grid=(1, b, b + 1) if b > 1 else (1, 2),
                  effective_batch_size=b + 1 if b > 1 else 2)
    pool = ModelPool((m,))
    q = query(t_in, t_out)
    lo, hi = amortized_state_cost(q, State(0, b), pool), amortized_state_cost(q, State(0, b + 1), pool)
    if system_prompt_cost(m) > 0:
        assert hi < lo
    else:
        assert hi == lo


@given(t_sys=st.integers(0, 2000), c_in=prices, c_out=prices, b=st.integers(1, 16),
       tokens=st.lists(st.tuples(st.integers(1, 300), st.integers(1, 50)), min_size=0, max_size=40))
def test_ceiling_slack(t_sys, c_in, c_out, b, tokens):
    m = ModelSpec("m", c_in, c_out, t_sys)
    qs = [Query(f"q{i}", np.zeros(1), ti, to) for i, (ti, to) in enumerate(tokens)]
    pool = ModelPool((m,))
    exact = batch_group_cost(m, b, qs)
    amort = sum((system_prompt_cost(m) / b + query_cost(q, m) for q in qs), Fraction(0))
    assert exact >= amort
    if system_prompt_cost(m) > 0:
        assert (exact == amort) == (len(qs) % b == 0)
    # recomputation is bit-identical
    assert batch_group_cost(m, b, qs) == exact
    assert all(amortized_state_cost(q, State(0, 1), pool) == system_prompt_cost(m) + query_cost(q, m) for q in qs)
