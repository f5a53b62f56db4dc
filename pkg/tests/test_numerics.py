import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itsnbf.numerics import (BisectionSpec, BracketError, bisect_monotone,
                             finite_difference_gradient, nelder_mead_2d, polar_midpoint_integrate,
                             project_intersection)


def test_bisection_examples():
    assert bisect_monotone(lambda x: -x, BisectionSpec(0, 1, -0.5, 1e-12)) == pytest.approx(0.5)
    x = bisect_monotone(lambda x: 1 / (1 + x), BisectionSpec(0, 10, 0.25, 1e-12))
    assert x == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(BracketError, match="not bracketed"):
        bisect_monotone(lambda x: 2.0, BisectionSpec(0, 1, 1.0, 1e-6))
    with pytest.raises(ValueError):
        BisectionSpec(1, 0, 0, 1e-3)


def test_bisection_halves_bracket():
    widths = []
    bisect_monotone(lambda x: -x, BisectionSpec(0, 1, -1 / 3, 1e-14), widths)
    assert len(widths) > 10
    for a, b in zip([1.0] + widths, widths):
        assert b == pytest.approx(a / 2)


def test_bisection_respects_max_iter():
    calls = []

    def f(x):
        calls.append(x)
        return -x

    bisect_monotone(f, BisectionSpec(0, 1, -1 / 3, 0.0, max_iter=5))
    assert len(calls) <= 2 + 5


def test_projection_feasible_is_identity():
    X = np.array([[0.1 + 0.1j], [0.2]])
    U = np.diag([1.0, 2.0])
    np.testing.assert_array_equal(project_intersection(X, 1.0, U, 1.0), X)


def test_projection_identity_ellipsoid_is_radial():
    X = np.array([[3.0 + 1j], [-2.0]])
    Y = project_intersection(X, 4.0, np.eye(2), 2.0)
    np.testing.assert_allclose(Y, X * math.sqrt(2.0 / np.vdot(X, X).real), rtol=1e-10)


def _rejection_oracle(x, power, U, bound, n, rng, center=(0.0, 0.0), half_width=2.0):
    pts = np.asarray(center) + rng.uniform(-half_width, half_width, size=(n, 2))
    ok = (np.sum(pts ** 2, axis=1) <= power) & (np.einsum("ni,ij,nj->n", pts, U, pts) <= bound)
    pts = pts[ok]
    return pts[np.argmin(np.sum((pts - x) ** 2, axis=1))]


def test_projection_matches_rejection_oracle():
    rng = np.random.default_rng(2)
    U = np.array([[4.0, 1.0], [1.0, 0.5]])
    x = np.array([1.5, 1.2])
    y = project_intersection(x[:, None].astype(complex), 1.5, U, 1.0).real[:, 0]
    coarse = _rejection_oracle(x, 1.5, U, 1.0, 10 ** 6, rng)
    # second pass refines the sampling around the coarse oracle's answer
    oracle = _rejection_oracle(x, 1.5, U, 1.0, 10 ** 6, rng, coarse, 0.02)
    assert np.linalg.norm(y - x) <= np.linalg.norm(oracle - x) + 1e-9
    assert abs(np.linalg.norm(y - x) - np.linalg.norm(oracle - x)) < 1e-4


def _random_case(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    U = A @ A.conj().T
    X = 2 * (rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2)))
    return rng, U, X


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_projection_feasible_idempotent_optimal(seed):
    rng, U, X = _random_case(seed)
    power, bound = 1.0, 0.5
    Y = project_intersection(X, power, U, bound)
    assert np.vdot(Y, Y).real <= power * (1 + 1e-10)
    assert np.real(np.vdot(Y, U @ Y)) <= bound * (1 + 1e-10)
    np.testing.assert_allclose(project_intersection(Y, power, U, bound), Y, atol=1e-12)
    d = np.linalg.norm(X - Y)
    for _ in range(20):
        Z = rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape)
        Z = project_intersection(Z, power, U, bound)  # any feasible point
        assert d <= np.linalg.norm(X - Z) + 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_projection_nonexpansive(seed):
    rng, U, X = _random_case(seed)
    X2 = X + rng.standard_normal(X.shape)
    Y1 = project_intersection(X, 1.0, U, 0.5)
    Y2 = project_intersection(X2, 1.0, U, 0.5)
    assert np.linalg.norm(Y1 - Y2) <= np.linalg.norm(X - X2) * (1 + 1e-7)


def test_projection_rejects_non_psd():
    with pytest.raises(ValueError, match="PSD"):
        project_intersection(np.ones((2, 1)), 0.1, np.diag([1.0, -1.0]), 0.1)


def test_nelder_mead_examples():
    r = nelder_mead_2d(lambda x, y: (x - 1) ** 2 + (y - 2) ** 2, (0.5, 0.5),
                       bounds=((None, None), (None, None)), budget=2000, xatol=1e-10,
                       fatol=1e-16)
    assert r.x == pytest.approx(1.0, abs=1e-6) and r.y == pytest.approx(2.0, abs=1e-6)
    rosen = nelder_mead_2d(lambda x, y: (1 - x) ** 2 + 100 * (y - x * x) ** 2, (0.0, 0.0),
                           bounds=((None, None), (None, None)), budget=500)
    assert rosen.value < 1e-3
    assert rosen.evaluations <= 500 + 3


def test_nelder_mead_start_at_optimum_and_bounds():
    r = nelder_mead_2d(lambda x, y: x * x + y * y, (0.0, 0.0))
    assert r.value == 0.0 and r.evaluations < 100
    # nonnegative quadrant: the unconstrained optimum (-1, -1) clips to the origin
    r = nelder_mead_2d(lambda x, y: (x + 1) ** 2 + (y + 1) ** 2, (1.0, 1.0))
    assert r.x >= 0 and r.y >= 0
    assert r.value == pytest.approx(2.0, abs=1e-6)


def test_polar_midpoint_examples():
    R = 3.0
    assert polar_midpoint_integrate(lambda r, p: np.ones_like(r), R, 64, 128).real == \
        pytest.approx(math.pi * R * R, abs=1e-6)
    val = polar_midpoint_integrate(lambda r, p: r, R, 64, 128).real
    assert val == pytest.approx(2 * math.pi * R ** 3 / 3, rel=1e-4)
    assert abs(polar_midpoint_integrate(lambda r, p: np.exp(1j * p), R, 64, 128)) < 1e-12


def test_polar_midpoint_second_order():
    def kernel(r, p):
        return np.exp(-r) * (2 + np.cos(p))

    exact = 2 * math.pi * 2 * (1 - 3 * math.exp(-2))  # 2 pi * 2 * int_0^2 r e^-r dr
    errs = [abs(polar_midpoint_integrate(kernel, 2.0, n, 16).real - exact) for n in (8, 16, 32)]
    assert errs[0] / errs[1] >= 3.9 and errs[1] / errs[2] >= 3.9


def test_finite_difference_examples():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    g = finite_difference_gradient(lambda Z: float(np.vdot(Z, Z).real), X, h=1e-5)
    np.testing.assert_allclose(g, 2 * X, atol=1e-6)
    A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    g = finite_difference_gradient(lambda Z: float(np.real(np.trace(A.conj().T @ Z))), X)
    np.testing.assert_allclose(g, A, atol=1e-6)
    # random Hermitian quadratic Re(x^H Q x) has gradient 2 Q x in this convention
    Q = A + A.conj().T
    x = X[:, 0]
    g = finite_difference_gradient(lambda z: float(np.real(np.vdot(z, Q @ z))), x)
    np.testing.assert_allclose(g, 2 * Q @ x, atol=1e-6)
    # real inputs give the ordinary gradient
    y = np.array([1.0, -2.0])
    np.testing.assert_allclose(finite_difference_gradient(lambda z: z @ z, y), 2 * y, atol=1e-8)
