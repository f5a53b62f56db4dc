"""Shared numerical kernels: bisection, projections, 2-D search, quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class BisectionSpec:
    lo: float
    hi: float
    target: float
    tol: float
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty bracket [{self.lo}, {self.hi}]")


def bisect_monotone(f: Callable[[float], float], spec: BisectionSpec,
                    widths: list | None = None) -> float:
    """Solve ``f(x) = target`` for nonincreasing ``f`` on ``[lo, hi]``.

    Stops once ``|f(x) - target| <= tol`` or the bracket collapses to machine
    resolution. If ``widths`` is given, the bracket width after every halving
    is appended to it.
    """
    lo, hi = spec.lo, spec.hi
    f_lo, f_hi = f(lo), f(hi)
    if not (f_lo >= spec.target >= f_hi):
        raise BracketError(
            f"target {spec.target!r} not bracketed: f({lo!r})={f_lo!r}, f({hi!r})={f_hi!r}")
    if abs(f_lo - spec.target) <= spec.tol:
        return lo
    if abs(f_hi - spec.target) <= spec.tol:
        return hi
    x = 0.5 * (lo + hi)
    for _ in range(spec.max_iter):
        x = 0.5 * (lo + hi)
        fx = f(x)
        if abs(fx - spec.target) <= spec.tol:
            return x
        if fx > spec.target:
            lo = x
        else:
            hi = x
        if widths is not None:
            widths.append(hi - lo)
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1.0):
            break
    return x


# --------------------------------------------------------------------------
# projection onto {Tr(X X^H) <= power} ∩ {Tr(X^H U X) <= bound}


@dataclass(frozen=True)
class EllipsoidBasis:
    """Eigendecomposition of the ellipsoid matrix, computed once per problem."""

    eigvals: np.ndarray
    eigvecs: np.ndarray

    @classmethod
    def from_matrix(cls, upsilon: np.ndarray) -> "EllipsoidBasis":
        h = 0.5 * (upsilon + upsilon.conj().T)
        w, q = np.linalg.eigh(h)
        scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
        if w.min() < -1e-10 * scale:
            raise ValueError(f"ellipsoid matrix is not PSD (min eigenvalue {w.min():.3e})")
        return cls(np.clip(w, 0.0, None), q)


def _ball(Y, power):
    nrm2 = float(np.vdot(Y, Y).real)
    if nrm2 <= power:
        return Y
    return Y * math.sqrt(power / nrm2)


def _ellipsoid(Y, lam, bound):
    """Project eigenbasis coordinates ``Y`` onto ``sum_i lam_i |Y_i|^2 <= bound``."""
    rows = np.sum(np.abs(Y) ** 2, axis=1)
    value = float(lam @ rows)
    if value <= bound:
        return Y
    if bound <= 0:
        return np.where((lam > 0)[:, None], 0.0, Y)

    def excess(nu):
        return float(lam @ (rows / (1 + nu * lam) ** 2)) - bound

    hi = 1.0 / max(lam.max(), np.finfo(float).tiny)
    while excess(hi) > 0:
        hi *= 4.0
    nu = optimize.brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    Z = Y / (1 + nu * lam)[:, None]
    # brentq may stop a hair outside; pull radially inside
    value = float(lam @ np.sum(np.abs(Z) ** 2, axis=1))
    if value > bound:
        Z = Z * math.sqrt(bound / value)
    return Z


def project_intersection(X: np.ndarray, power: float, upsilon: np.ndarray | None,
                         bound: float, basis: EllipsoidBasis | None = None,
                         tol: float = 1e-13, max_iter: int = 2000) -> np.ndarray:
    """Euclidean projection onto the power ball ∩ interference ellipsoid.

    Dykstra's alternating projections run in the eigenbasis of ``upsilon``,
    where both sets are separable and each projection is a row scaling. The
    result is finally pulled towards the origin if needed so that it lies in
    both sets exactly (both sets are star-shaped around zero).
    """
    if basis is None:
        if upsilon is None:
            return _ball(X, power)
        basis = EllipsoidBasis.from_matrix(upsilon)
    if math.isinf(bound):
        return _ball(X, power)
    lam, q = basis.eigvals, basis.eigvecs
    Y = q.conj().T @ X
    if _feasible(Y, lam, power, bound):
        return X
    x = Y
    p = np.zeros_like(Y)
    r = np.zeros_like(Y)
    scale = max(float(np.linalg.norm(Y)), np.finfo(float).tiny)
    for _ in range(max_iter):
        y = _ball(x + p, power)
        p = x + p - y
        x_new = _ellipsoid(y + r, lam, bound)
        r = y + r - x_new
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step <= tol * scale and float(np.linalg.norm(x - y)) <= 1e-10 * scale:
            break
    x = _shrink_into(x, lam, power, bound)
    return q @ x


def _feasible(Y, lam, power, bound):
    rows = np.sum(np.abs(Y) ** 2, axis=1)
    return rows.sum() <= power and float(lam @ rows) <= bound


def _shrink_into(Y, lam, power, bound):
    rows = np.sum(np.abs(Y) ** 2, axis=1)
    c = 1.0
    tot = rows.sum()
    if tot > power:
        c = min(c, power / tot)
    q = float(lam @ rows)
    if q > bound:
        c = min(c, bound / q)
    return Y if c == 1.0 else Y * math.sqrt(c)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchResult:
    x: float
    y: float
    value: float
    evaluations: int
    converged: bool


def nelder_mead_2d(f: Callable[[float, float], float], start, bounds=((0.0, None), (0.0, None)),
                   budget: int = 500, xatol: float = 1e-8, fatol: float = 1e-12) -> SearchResult:
    """Bounded Nelder-Mead in two variables; returns the best evaluated point."""
    best = [math.inf, float(start[0]), float(start[1])]
    count = [0]

    def wrapped(z):
        count[0] += 1
        val = float(f(float(z[0]), float(z[1])))
        if val < best[0]:
            best[:] = [val, float(z[0]), float(z[1])]
        return val

    res = optimize.minimize(wrapped, np.asarray(start, dtype=float), method="Nelder-Mead",
                            bounds=bounds,
                            options={"maxfev": budget, "xatol": xatol, "fatol": fatol,
                                     "initial_simplex": _initial_simplex(start, bounds)})
    return SearchResult(best[1], best[2], best[0], count[0], bool(res.success))


def _initial_simplex(start, bounds):
    x0 = np.asarray(start, dtype=float)
    simplex = [x0.copy()]
    for i in range(2):
        step = 0.05 * abs(x0[i]) if x0[i] != 0 else 0.00025
        z = x0.copy()
        z[i] += step
        hi = bounds[i][1]
        if hi is not None and z[i] > hi:
            z[i] = x0[i] - step
        simplex.append(z)
    return np.array(simplex)


def polar_midpoint_nodes(radius: float, n_r: int, n_phi: int):
    """Midpoint nodes ``(r, phi)`` and weights ``r dr dphi`` on a disk."""
    dr = radius / n_r
    dphi = 2 * np.pi / n_phi
    r = (np.arange(n_r) + 0.5) * dr
    phi = (np.arange(n_phi) + 0.5) * dphi
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    return rr.ravel(), pp.ravel(), (rr * dr * dphi).ravel()


def polar_midpoint_integrate(kernel: Callable, radius: float, n_r: int, n_phi: int) -> complex:
    """Midpoint rule for ``∫_0^{2pi} ∫_0^R kernel(r, phi) r dr dphi``.

    ``kernel`` is called once with flattened node arrays.
    """
    r, phi, w = polar_midpoint_nodes(radius, n_r, n_phi)
    vals = np.broadcast_to(np.asarray(kernel(r, phi)), r.shape)
    return complex(math.fsum((vals * w).real) + 1j * math.fsum((vals * w).imag))


def finite_difference_gradient(f: Callable[[np.ndarray], float], X, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a real function.

    For complex ``X`` the result is ``df/dRe(X) + j df/dIm(X)``, which is twice
    the Wirtinger derivative ``df/dX*``.
    """
    X = np.asarray(X)
    is_complex = np.iscomplexobj(X)
    base = X.astype(complex if is_complex else float)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        directions = (1.0, 1j) if is_complex else (1.0,)
        for d in directions:
            orig = flat[idx]
            flat[idx] = orig + h * d
            fp = f(base)
            flat[idx] = orig - h * d
            fm = f(base)
            flat[idx] = orig
            gflat[idx] += d * (fp - fm) / (2 * h)
    return grad
