"""Satellite-to-terrestrial interference covariance without shared CSI.

Two constructions of ``E{H_sg H_sg^H}`` are provided: the user-distribution
integral over every terrestrial cell and the position-aided (PA) shortcut that
collapses each cell onto its base station. Both are per-user kernels weighted
by the user density and multiplied by the number of users per cell.
"""
from __future__ import annotations

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy import integrate

from .geometry import SPEED_OF_LIGHT, SystemConfig, upa_steering
from .numerics import polar_midpoint_nodes

DensityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _uniform(r, phi, area):
    return np.full(np.shape(r), 1.0 / area)


def _gaussian(r, phi, s2, mass):
    return np.exp(-np.asarray(r) ** 2 / (2 * s2)) / mass


def uniform_density(cell_radius_m: float) -> DensityFn:
    return partial(_uniform, area=math.pi * cell_radius_m ** 2)


def gaussian_density(cell_radius_m: float, sigma_ratio: float = 0.5) -> DensityFn:
    """Radially symmetric Gaussian truncated to the cell, normalised on the disk."""
    s2 = (sigma_ratio * cell_radius_m) ** 2
    mass = 2 * math.pi * s2 * -math.expm1(-cell_radius_m ** 2 / (2 * s2))
    return partial(_gaussian, s2=s2, mass=mass)


DENSITIES = {"uniform": uniform_density, "gaussian": gaussian_density}


@dataclass(frozen=True)
class TerrestrialLayout:
    """Terrestrial base stations as polar positions around the sub-satellite point."""

    stations: tuple  # ((R_n, psi_n), ...)
    cell_radius_m: float
    users_per_bs: int
    density: str = "uniform"
    density_fn: DensityFn | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        stations = tuple((float(r), float(p)) for r, p in self.stations)
        object.__setattr__(self, "stations", stations)
        if not stations:
            raise ValueError("layout needs at least one base station")
        if any(r < 0 for r, _ in stations):
            raise ValueError("station distances must be nonnegative")
        if self.users_per_bs < 1:
            raise ValueError("users_per_bs must be >= 1")
        if self.cell_radius_m < 0:
            raise ValueError("cell_radius_m must be nonnegative")
        if self.density_fn is None:
            if self.density not in DENSITIES:
                raise ValueError(f"unknown density {self.density!r}; known: {sorted(DENSITIES)}")
            if self.cell_radius_m > 0:
                object.__setattr__(self, "density_fn", DENSITIES[self.density](self.cell_radius_m))

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def total_users(self) -> int:
        return self.n_stations * self.users_per_bs

    def with_cell_radius(self, cell_radius_m: float) -> "TerrestrialLayout":
        return TerrestrialLayout(self.stations, cell_radius_m, self.users_per_bs, self.density)

    def fingerprint(self) -> str:
        text = repr((self.stations, self.cell_radius_m, self.users_per_bs, self.density))
        return hashlib.sha1(text.encode()).hexdigest()[:12]


class Provenance(enum.Enum):
    INTEGRAL = "integral"
    POSITION_AIDED = "position-aided"


@dataclass(frozen=True)
class PolarGrid:
    n_radial: int = 32
    n_angular: int = 64

    def __post_init__(self):
        if self.n_radial < 4 or self.n_angular < 4:
            raise ValueError("polar grid needs at least 4 samples per axis")

    def refined(self) -> "PolarGrid":
        return PolarGrid(2 * self.n_radial, 2 * self.n_angular)


@dataclass(frozen=True)
class InterferenceModel:
    matrix: np.ndarray
    provenance: Provenance
    layout_fingerprint: str
    grid: PolarGrid | None = None
    quadrature_error: float | None = None

    def __post_init__(self):
        _check_hermitian_psd(self.matrix)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def scaled(self, factor: float) -> "InterferenceModel":
        return InterferenceModel(self.matrix * factor, self.provenance, self.layout_fingerprint,
                                 self.grid, self.quadrature_error)


def _check_hermitian_psd(m: np.ndarray):
    scale = max(float(np.abs(np.trace(m))), np.finfo(float).tiny)
    if np.max(np.abs(m - m.conj().T)) > 1e-12 * scale:
        raise ValueError("interference matrix is not Hermitian")
    w = np.linalg.eigvalsh(m)
    if w.min() < -1e-10 * scale:
        raise ValueError(f"interference matrix is not PSD (min eigenvalue {w.min():.3e})")


def propagation_distance(h_sat, R_n, psi_n, r, phi):
    """Slant range from the satellite to a user at ``(r, phi)`` in cell ``(R_n, psi_n)``."""
    return np.sqrt(h_sat ** 2 + R_n ** 2 + r ** 2 + 2 * R_n * r * np.cos(psi_n - phi))


def _cell_points(R_n, psi_n, r, phi, config):
    x = R_n * math.cos(psi_n) + r * np.cos(phi)
    y = R_n * math.sin(psi_n) + r * np.sin(phi)
    d = propagation_distance(config.orbit_altitude_m, R_n, psi_n, r, phi)
    return x / config.coverage_radius_m, y / config.coverage_radius_m, d


def _density_weights(layout, r, phi, w):
    """Density times quadrature weight, renormalised to unit mass on the grid."""
    dens = np.asarray(layout.density_fn(r, phi), dtype=float) * w
    mass = float(dens.sum())
    if abs(mass - 1.0) > 1e-3:
        warnings.warn(f"user density integrates to {mass:.6f} over the cell; renormalising",
                      RuntimeWarning, stacklevel=3)
    return dens / mass


def _integral_matrix(layout: TerrestrialLayout, config: SystemConfig, grid: PolarGrid):
    if layout.cell_radius_m == 0:
        return _pa_matrix(layout, config)
    r, phi, w = polar_midpoint_nodes(layout.cell_radius_m, grid.n_radial, grid.n_angular)
    dens = _density_weights(layout, r, phi, w)
    m = config.n_antennas
    total = np.zeros((m, m), dtype=complex)
    for R_n, psi_n in layout.stations:  # fixed station order
        tx, ty, d = _cell_points(R_n, psi_n, r, phi, config)
        v = upa_steering(tx, ty, config.m_x, config.m_y, config.element_spacing_ratio)
        weights = config.path_gain(d) * dens
        total += (v * weights[None, :]) @ v.conj().T
    total *= layout.users_per_bs
    return 0.5 * (total + total.conj().T)


def integral_interference_matrix(layout: TerrestrialLayout, config: SystemConfig,
                                 grid: PolarGrid = PolarGrid(),
                                 estimate_error: bool = False) -> InterferenceModel:
    """Integral-form interference covariance by polar midpoint quadrature.

    Element ``(i, j)`` sums, over cells, the density-weighted kernel
    ``G_T G_R c^2 exp(j pi w) / (4 pi f d)^2`` and multiplies by the users per
    cell. With ``estimate_error`` the grid is doubled once and the relative
    Frobenius change is stored as ``quadrature_error``.
    """
    mat = _integral_matrix(layout, config, grid)
    err = None
    if estimate_error and layout.cell_radius_m > 0:
        fine = _integral_matrix(layout, config, grid.refined())
        err = float(np.linalg.norm(fine - mat) / np.linalg.norm(fine))
    return InterferenceModel(mat, Provenance.INTEGRAL, layout.fingerprint(), grid, err)


def _pa_matrix(layout, config):
    m = config.n_antennas
    total = np.zeros((m, m), dtype=complex)
    for R_n, psi_n in layout.stations:
        tx, ty, d = _cell_points(R_n, psi_n, np.zeros(1), np.zeros(1), config)
        v = upa_steering(tx, ty, config.m_x, config.m_y, config.element_spacing_ratio)
        total += config.path_gain(d)[0] * (v @ v.conj().T)
    total *= layout.users_per_bs
    return 0.5 * (total + total.conj().T)


def pa_interference_matrix(layout: TerrestrialLayout, config: SystemConfig) -> InterferenceModel:
    """Position-aided approximation: every user of a cell sits at its base station."""
    return InterferenceModel(_pa_matrix(layout, config), Provenance.POSITION_AIDED,
                             layout.fingerprint())


def average_interference_power(P: np.ndarray, interference, k_g: int) -> float:
    """``Tr{P^H U P} / K_G`` in watts."""
    mat = interference.matrix if isinstance(interference, InterferenceModel) else interference
    if mat.shape[0] != P.shape[0]:
        raise ValueError(f"dimension mismatch: precoder has {P.shape[0]} rows, "
                         f"interference matrix is {mat.shape}")
    if k_g < 1:
        raise ValueError("k_g must be >= 1")
    val = float(np.real(np.vdot(P, mat @ P)))
    return max(val, 0.0) / k_g


# --------------------------------------------------------------------------
# Bessel J0 and the PA approximation error

_J0_SERIES_MAX = 8.0
_J0_ASYMPTOTIC_MIN = 25.0


def _j0_series(x):
    q = -(x * x) / 4.0
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 60):
        term = term * q / (k * k)
        total = total + term
    return total


def _one_minus_j0_series(x):
    q = -(x * x) / 4.0
    term = -q
    total = term.copy()
    for k in range(2, 60):
        term = term * q / (k * k)
        total = total + term
    return total


def _j0_miller(x):
    """Backward recurrence normalised by ``J0 + 2 sum J_2k = 1``."""
    out = np.empty_like(x)
    for idx, xv in np.ndenumerate(x):
        n_start = 2 * (int(xv + 30 + 3 * math.sqrt(xv)) // 2)
        j_next, j_cur = 0.0, 1e-30
        norm = 0.0
        j0 = 0.0
        for k in range(n_start, 0, -1):
            j_prev = (2 * k / xv) * j_cur - j_next
            j_next, j_cur = j_cur, j_prev
            if abs(j_cur) > 1e200:
                j_next *= 1e-200
                j_cur *= 1e-200
                norm *= 1e-200
            if (k - 1) % 2 == 0 and k - 1 > 0:
                norm += 2 * j_cur
        j0 = j_cur
        norm += j0
        out[idx] = j0 / norm
    return out


def _j0_asymptotic(x):
    # Hankel expansion with P, Q series truncated at their smallest term
    chi = x - math.pi / 4
    mu = 0.0
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    z8 = 8.0 * x
    for k in range(1, 40):
        a = (mu - (2 * k - 1) ** 2) / (k * z8)
        term = term * a
        if k % 2 == 1:
            q = q + term if (k // 2) % 2 == 0 else q - term
        else:
            p = p - term if (k // 2) % 2 == 1 else p + term
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Power series below 8, Miller backward recurrence up to 25 and the Hankel
    asymptotic expansion beyond. Absolute error is below 1e-10 for
    ``|x| <= 1000``.
    """
    scalar = np.ndim(x) == 0
    ax = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
    out = np.empty_like(ax)
    small = ax < _J0_SERIES_MAX
    large = ax >= _J0_ASYMPTOTIC_MIN
    mid = ~small & ~large
    if small.any():
        out[small] = _j0_series(ax[small])
    if mid.any():
        out[mid] = _j0_miller(ax[mid])
    if large.any():
        out[large] = _j0_asymptotic(ax[large])
    return float(out[0]) if scalar else out


def one_minus_j0(x):
    """``1 - J0(x)`` without cancellation for small arguments."""
    scalar = np.ndim(x) == 0
    ax = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
    out = np.empty_like(ax)
    small = ax < _J0_SERIES_MAX
    out[small] = _one_minus_j0_series(ax[small])
    out[~small] = 1.0 - bessel_j0(ax[~small])
    return float(out[0]) if scalar else out


def approximation_error_gap(omega: float, R_bs: float, h_sat: float, R_sat: float) -> float:
    """``pi R^2 / h^2 - ∫_0^R 2 pi r J0(pi r omega / R_sat) / (h^2 + r^2) dr``.

    Evaluated as a single integral of the (nonnegative) difference integrand,
    ``2 pi r (r^2 + h^2 (1 - J0)) / (h^2 (h^2 + r^2))``, so the result keeps
    full relative precision even though both terms nearly cancel.
    """
    if R_bs <= 0:
        return 0.0
    a = math.pi * omega / R_sat
    h2 = h_sat * h_sat

    def integrand(r):
        return 2 * math.pi * r * (r * r + h2 * one_minus_j0(a * r)) / (h2 * (h2 + r * r))

    val, _ = integrate.quad(integrand, 0.0, R_bs, epsabs=0.0, epsrel=1e-10, limit=200)
    return val


def approximation_error_element(omega: float, R_bs: float, rho_tut: float, frequency_hz: float,
                                h_sat: float, R_sat: float, G_T: float, G_R: float) -> float:
    """Squared PA approximation error of one covariance element.

    Single cell at the sub-satellite point with uniformly distributed users of
    density ``rho_tut`` (users per square metre); ``omega`` is the Euclidean
    index distance between the two array elements.
    """
    eta = G_T * G_R * SPEED_OF_LIGHT ** 2 * rho_tut / (4 * math.pi * frequency_hz) ** 2
    gap = approximation_error_gap(omega, R_bs, h_sat, R_sat)
    return eta * eta * gap * gap


def approximation_error_matrix(config: SystemConfig, R_bs: float, rho_tut: float,
                               frequency_hz: float | None = None) -> np.ndarray:
    """Full ``M x M`` squared-error matrix; elements depend only on index distance."""
    f = config.carrier_frequency_hz if frequency_hz is None else frequency_hz
    a = np.repeat(np.arange(config.m_x), config.m_y)
    b = np.tile(np.arange(config.m_y), config.m_x)
    omega = np.sqrt((a[:, None] - a[None, :]) ** 2 + (b[:, None] - b[None, :]) ** 2)
    cache = {}
    out = np.empty_like(omega)
    for idx, om in np.ndenumerate(omega):
        key = round(float(om * om))
        if key not in cache:
            cache[key] = approximation_error_element(
                float(om), R_bs, rho_tut, f, config.orbit_altitude_m, config.coverage_radius_m,
                config.per_antenna_tx_gain_linear, config.rx_gain_linear)
        out[idx] = cache[key]
    return out


def approximation_mse(config: SystemConfig, R_bs: float, rho_tut: float,
                      frequency_hz: float | None = None) -> float:
    return float(approximation_error_matrix(config, R_bs, rho_tut, frequency_hz).mean())
