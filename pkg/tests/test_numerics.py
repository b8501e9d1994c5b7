import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rendezvous.numerics import (
    QuadratureError,
    gaussian_cvar_lower,
    gaussian_var_lower,
    integrate,
    integrate_segments,
    select_top_k,
)

from oracles import cvar_lower_closed_form


def sinusoid(t):
    return 8.0 + np.sin(np.asarray(t) / 10.0)


def sinusoid_exact(a, b):
    return 8.0 * (b - a) - 10.0 * (math.cos(b / 10.0) - math.cos(a / 10.0))


@pytest.mark.parametrize("b", [1.0, 10.0, 31.4, 100.0, 300.0])
def test_sinusoid_integral_matches_closed_form(b):
    res = integrate(sinusoid, 0.0, b, abs_tol=1e-12, rel_tol=1e-12)
    assert abs(res.value - sinusoid_exact(0.0, b)) <= 1e-9


def test_polynomial_is_exact_in_one_panel():
    # GK15 integrates polynomials up to degree 22 exactly
    res = integrate(lambda t: t ** 10, 0.0, 1.0)
    assert res.intervals == 1
    assert res.value == pytest.approx(1 / 11, rel=1e-14)


def test_empty_interval_and_bad_order():
    assert integrate(sinusoid, 3.0, 3.0).value == 0.0
    with pytest.raises(ValueError):
        integrate(sinusoid, 2.0, 1.0)


def test_vector_integrand():
    res = integrate(lambda t: np.stack([np.ones_like(t), t]), 0.0, 2.0)
    np.testing.assert_allclose(res.value, [2.0, 2.0], rtol=1e-12)


def test_subdivision_limit_raises_with_best_estimate():
    with pytest.raises(QuadratureError) as info:
        integrate(lambda t: np.sin(1.0 / np.maximum(t, 1e-300)), 0.0, 1.0,
                  abs_tol=1e-14, rel_tol=0.0, limit=5)
    assert info.value.best.intervals >= 5


def test_singular_endpoint_converges():
    res = integrate(lambda t: 1.0 / np.sqrt(t), 0.0, 1.0, abs_tol=1e-9, rel_tol=1e-9, limit=400)
    assert res.value == pytest.approx(2.0, abs=1e-7)


def test_segments_match_scalar_integrals():
    edges = np.array([0.0, 3.0, 3.0, 10.0, 42.0, 250.0])
    res = integrate_segments(sinusoid, edges, abs_tol=1e-12, rel_tol=1e-13)
    expect = [sinusoid_exact(a, b) for a, b in zip(edges[:-1], edges[1:])]
    np.testing.assert_allclose(res.value, expect, atol=1e-9)
    assert res.value[1] == 0.0


def test_segments_vector_integrand():
    f = lambda t: np.stack([sinusoid(t), t * t])
    res = integrate_segments(f, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(res.value[1], [1 / 3, 7 / 3], rtol=1e-10)


def test_segments_reject_unsorted():
    with pytest.raises(ValueError):
        integrate_segments(sinusoid, [0.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        integrate_segments(sinusoid, [0.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 200.0), min_size=2, max_size=12))
def test_segment_cumsum_matches_direct_integral(points):
    edges = np.sort(np.asarray(points))
    res = integrate_segments(sinusoid, edges, abs_tol=1e-10, rel_tol=1e-12)
    cum = np.cumsum(res.value)
    for k in range(1, edges.size):
        assert cum[k - 1] == pytest.approx(sinusoid_exact(edges[0], edges[k]), abs=1e-7)


@pytest.mark.parametrize("gamma", [0.001, 0.01, 0.05, 0.1, 0.5, 0.99])
def test_cvar_closed_form(gamma):
    got = gaussian_cvar_lower(3.0, 2.0, gamma)
    assert got == pytest.approx(cvar_lower_closed_form(3.0, 2.0, gamma), abs=1e-9)


def test_cvar_degenerate_and_invalid():
    assert gaussian_cvar_lower(5.0, 0.0, 0.05) == 5.0
    assert gaussian_cvar_lower(5.0, 1.0, 1.0) == pytest.approx(5.0, abs=1e-10)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            gaussian_cvar_lower(0.0, 1.0, bad)
    with pytest.raises(ValueError):
        gaussian_cvar_lower(0.0, -1.0, 0.1)


def test_cvar_below_var():
    for gamma in (0.01, 0.2, 0.7):
        assert gaussian_cvar_lower(0.0, 1.0, gamma) < gaussian_var_lower(0.0, 1.0, gamma)
    assert gaussian_var_lower(1.0, 2.0, 0.5) == pytest.approx(1.0)


def test_top_k_matches_sort_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        k = int(rng.integers(0, n + 1))
        vals = rng.integers(0, 10, n).astype(float)  # many ties
        for direction in ("min", "max"):
            key = vals if direction == "min" else -vals
            expect = np.lexsort((np.arange(n), key))[:k]
            np.testing.assert_array_equal(select_top_k(vals, k, direction), expect)


def test_top_k_nan_is_worst_and_errors():
    vals = [np.nan, 2.0, 1.0]
    assert select_top_k(vals, 2).tolist() == [2, 1]
    assert select_top_k(vals, 2, "max").tolist() == [1, 2]
    with pytest.raises(ValueError):
        select_top_k(vals, 4)
    with pytest.raises(ValueError):
        select_top_k(vals, -1)
    with pytest.raises(ValueError):
        select_top_k(vals, 1, "median")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.data())
def test_top_k_property(values, data):
    k = data.draw(st.integers(0, len(values)))
    idx = select_top_k(values, k)
    assert len(set(idx.tolist())) == k
    chosen = sorted(values[i] for i in idx)
    assert chosen == sorted(values)[:k]
