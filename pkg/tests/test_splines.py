import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.interpolate import BSpline

from catcontrol.splines import (AmplitudeError, basis_matrix, build_basis, complex_drives,
                                evaluate_active, knot_sequence, synthesize, write_basis_csv)

T = 2.0


def naive_bspline(i, k, knots, t):
    """Direct recursive Cox-de Boor with 1-based index i and the 0/0 = 0 convention."""
    if k == 0:
        return 1.0 if knots[i - 1] <= t < knots[i] else 0.0
    out = 0.0
    den = knots[i + k - 1] - knots[i - 1]
    if den > 0:
        out += (t - knots[i - 1]) / den * naive_bspline(i, k - 1, knots, t)
    den = knots[i + k] - knots[i]
    if den > 0:
        out += (knots[i + k] - t) / den * naive_bspline(i + 1, k - 1, knots, t)
    return out


def test_knots_clamped_uniform():
    kn = knot_sequence(11, 3, T)
    assert len(kn) == 15
    assert np.all(kn[:4] == 0) and np.all(kn[-4:] == T)
    assert np.allclose(np.diff(kn[3:12]), T / 8)


def test_order_zero_indicator():
    b = build_basis(11, 0, T)
    kn = b.knots
    t = np.linspace(0, T, 101)[:-1]
    vals = b.evaluate_all(t)[0]
    assert np.array_equal(vals, ((kn[0] <= t) & (t < kn[1])).astype(float))


def test_partition_of_unity_full_basis():
    b = build_basis()
    t = np.linspace(0, T, 2001)
    assert np.abs(b.evaluate_all(t).sum(axis=0) - 1).max() <= 1e-12


def test_against_naive_recursion_and_scipy():
    b = build_basis()
    assert b.evaluate_all(1.0)[4, 0] == pytest.approx(naive_bspline(5, 3, b.knots, 1.0), abs=1e-15)
    t = np.linspace(0, T, 97)[:-1]
    for i in range(11):
        ref = BSpline.basis_element(b.knots[i:i + 5], extrapolate=False)(t)
        assert np.allclose(b.evaluate_all(t)[i], np.nan_to_num(ref), atol=1e-13)


def test_endpoints_vanish():
    b = build_basis()
    assert np.all(evaluate_active(b, 0.0) == 0)
    assert np.all(evaluate_active(b, T) == 0)
    c = np.random.default_rng(0).normal(size=(4, 9))
    w = synthesize(c, b, np.array([0.0, T]))
    assert np.all(w == 0)


def test_at_most_four_nonzero():
    b = build_basis()
    t = np.random.default_rng(1).uniform(0, T, 1000)
    assert (evaluate_active(b, t) != 0).sum(axis=0).max() <= 4


def test_outside_interval_rejected():
    with pytest.raises(ValueError):
        evaluate_active(build_basis(), 2.5)
    with pytest.raises(ValueError):
        build_basis(3, 3, T)
    with pytest.raises(ValueError):
        build_basis(11, 3, 0.0)


def test_synthesis_examples():
    b = build_basis()
    t = np.linspace(0, T, 51)
    assert np.all(synthesize(np.zeros((4, 9)), b, t) == 0)
    c = np.zeros((4, 9))
    c[2, 3] = 1.0  # spline B_5
    w = synthesize(c, b, t)
    assert np.allclose(w[2], b.evaluate_all(t)[4], atol=0)
    assert np.all(w[[0, 1, 3]] == 0)
    ec, eq = complex_drives(w)
    assert np.allclose(eq, w[2]) and np.all(ec == 0)


def test_amplitude_cap():
    c = np.zeros((4, 9))
    c[0, 0] = 2 * np.pi * 10.5
    with pytest.raises(AmplitudeError):
        synthesize(c, build_basis(), np.linspace(0, T, 5))


def test_basis_csv(tmp_path):
    p = tmp_path / "b.csv"
    write_basis_csv(p, build_basis(), 11)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["t_us"] + [f"B{i}" for i in range(2, 11)]
    assert len(rows) == 12


coeff = arrays(float, (4, 9), elements=st.floats(-50, 50))


@settings(max_examples=30, deadline=None)
@given(coeff, coeff, st.floats(-2, 2), st.floats(-2, 2))
def test_synthesis_linear(c1, c2, a, bb):
    b = build_basis()
    t = np.linspace(0, T, 41)
    lhs = synthesize(a * c1 + bb * c2, b, t, cap=None)
    rhs = a * synthesize(c1, b, t, cap=None) + bb * synthesize(c2, b, t, cap=None)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


@settings(max_examples=30, deadline=None)
@given(coeff)
def test_jacobian_is_basis_matrix(c):
    b = build_basis()
    t = np.linspace(0, T, 21)
    M = basis_matrix(b, t)
    assert np.allclose(synthesize(c, b, t, cap=None), c @ M, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.floats(0, T))
def test_local_support(i, t):
    b = build_basis()
    v = b.evaluate_all(t)[i, 0]
    if not (b.knots[i] <= t < b.knots[i + 4]) and t < T:
        assert v == 0.0
