"""Satellite array geometry, Rician gain statistics and link-budget helpers.

Everything in this module works in linear SI units. Decibel conversions live
at the scenario-file and CLI boundary (see :mod:`itsnbf.scenario`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import constants

SPEED_OF_LIGHT = constants.c
BOLTZMANN = constants.k
T0_K = 290.0


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    if value <= 0:
        return -math.inf
    return 10.0 * math.log10(value)


@dataclass(frozen=True)
class SystemConfig:
    """Physical constants and link-budget parameters of the satellite.

    Defaults reproduce the LEO system used in the evaluation (2 GHz, 600 km
    orbit, 8x8 UPA, 25 dBW, kappa = 10 dB, 6 dBi / 0 dBi, NF 9 dB, 290 K).
    The bandwidth only enters :meth:`thermal_noise_w`; operating points are
    specified through an SNR, so it never affects beamforming.
    """

    carrier_frequency_hz: float = 2e9
    orbit_altitude_m: float = 600e3
    coverage_radius_m: float = 630e3
    m_x: int = 8
    m_y: int = 8
    tx_power_w: float = db_to_linear(25.0)
    rician_factor_linear: float = db_to_linear(10.0)
    per_antenna_tx_gain_linear: float = db_to_linear(6.0)
    rx_gain_linear: float = 1.0
    noise_figure_linear: float = db_to_linear(9.0)
    antenna_temp_k: float = 290.0
    bandwidth_hz: float = 20e6
    element_spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.m_x < 1 or self.m_y < 1:
            raise ValueError(f"array dimensions must be positive, got {self.m_x}x{self.m_y}")
        for name in ("carrier_frequency_hz", "orbit_altitude_m", "coverage_radius_m",
                     "tx_power_w", "per_antenna_tx_gain_linear", "rx_gain_linear",
                     "noise_figure_linear", "antenna_temp_k", "bandwidth_hz",
                     "element_spacing_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rician_factor_linear < 0:
            raise ValueError("rician_factor_linear must be nonnegative")

    @property
    def n_antennas(self) -> int:
        return self.m_x * self.m_y

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    def path_gain(self, distance_m):
        """Free-space power gain including array and antenna gains.

        ``M_x M_y G_T G_R c^2 / (4 pi f d)^2``; vectorised over ``distance_m``.
        """
        d = np.asarray(distance_m, dtype=float)
        return (self.n_antennas * self.per_antenna_tx_gain_linear * self.rx_gain_linear
                * (SPEED_OF_LIGHT / (4 * np.pi * self.carrier_frequency_hz * d)) ** 2)

    def element_gain(self, distance_m):
        """Per-element interference kernel ``G_T G_R c^2 / (4 pi f d)^2``."""
        return self.path_gain(distance_m) / self.n_antennas

    def thermal_noise_w(self) -> float:
        t_eff = self.antenna_temp_k + (self.noise_figure_linear - 1.0) * T0_K
        return BOLTZMANN * t_eff * self.bandwidth_hz

    def noise_power_for_snr(self, snr_db: float, k_s: int) -> float:
        """Common noise power that realises ``snr_db`` at the sub-satellite point.

        SNR = P_T / K_S * path_gain(h_sat) / sigma^2, i.e. the link budget
        ``P_T - 10log K_S + G_T + 10log M_S - PL + G_R - 10log(N)`` solved
        for the noise term.
        """
        if k_s < 1:
            raise ValueError("k_s must be >= 1")
        signal = self.tx_power_w / k_s * float(self.path_gain(self.orbit_altitude_m))
        return signal / db_to_linear(snr_db)


def free_space_path_loss_db(frequency_hz: float, distance_m: float) -> float:
    return 20.0 * math.log10(4 * math.pi * frequency_hz * distance_m / SPEED_OF_LIGHT)


@dataclass(frozen=True)
class SatUserGeometry:
    elevation_rad: float
    azimuth_rad: float
    distance_m: float

    @classmethod
    def from_ground(cls, x_m: float, y_m: float, config: SystemConfig) -> "SatUserGeometry":
        """Geometry of a ground point at offset ``(x, y)`` from the sub-satellite point.

        Direction cosines follow the ground-projection convention used for the
        terrestrial users, ``(x / R_sat, y / R_sat)``, so satellite and
        terrestrial steering vectors live in the same angular domain.
        """
        tx = x_m / config.coverage_radius_m
        ty = y_m / config.coverage_radius_m
        if tx * tx + ty * ty > 1.0 + 1e-12:
            raise ValueError("ground point lies outside the satellite coverage radius")
        ty = min(max(ty, -1.0), 1.0)
        elevation = math.acos(ty)
        s = math.sin(elevation)
        azimuth = 0.0 if s == 0.0 else math.acos(min(max(tx / s, -1.0), 1.0))
        distance = math.sqrt(config.orbit_altitude_m ** 2 + x_m ** 2 + y_m ** 2)
        return cls(elevation, azimuth, distance)


def direction_cosines(elevation_rad, azimuth_rad):
    """Return ``(sin(theta) cos(phi), cos(theta))``; broadcasts over arrays."""
    tx = np.sin(elevation_rad) * np.cos(azimuth_rad)
    ty = np.cos(elevation_rad)
    if np.ndim(tx) == 0:
        return float(tx), float(ty)
    return tx, ty


def upa_steering(tx, ty, m_x: int, m_y: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """Unit-norm UPA response ``v(tx) (x) v(ty)``.

    Scalar direction cosines give a vector of length ``m_x * m_y``; arrays of
    shape ``(n,)`` give a matrix of shape ``(m_x * m_y, n)`` with one steering
    vector per column. Element ``a * m_y + b`` carries the phase
    ``exp(-j 2 pi d/lambda (a tx + b ty))``.
    """
    if m_x < 1 or m_y < 1:
        raise ValueError(f"array dimensions must be positive, got {m_x}x{m_y}")
    scalar = np.ndim(tx) == 0 and np.ndim(ty) == 0
    tx = np.atleast_1d(np.asarray(tx, dtype=float))
    ty = np.atleast_1d(np.asarray(ty, dtype=float))
    ax = np.arange(m_x)[:, None, None]
    by = np.arange(m_y)[None, :, None]
    phase = -2j * np.pi * spacing_ratio * (ax * tx[None, None, :] + by * ty[None, None, :])
    v = np.exp(phase).reshape(m_x * m_y, -1) / math.sqrt(m_x * m_y)
    return v[:, 0] if scalar else v


def rician_mean_gain(gain_amplitude: float, kappa: float) -> complex:
    """Mean of the Rician gain, LoS phase fixed at pi/4."""
    if math.isinf(kappa):
        return gain_amplitude * math.sqrt(0.5) * (1 + 1j)
    return gain_amplitude * math.sqrt(kappa / (2 * (kappa + 1))) * (1 + 1j)


def sample_rician_gain(gain_amplitude: float, kappa: float, rng: np.random.Generator,
                       size=None):
    """Draw complex Rician gains with power ``gain_amplitude**2``.

    Real and imaginary parts are i.i.d. Gaussian with mean
    ``gamma sqrt(kappa / (2 (kappa + 1)))`` and variance ``gamma^2 / (2 (kappa + 1))``.
    """
    mean = rician_mean_gain(gain_amplitude, kappa)
    sd = 0.0 if math.isinf(kappa) else gain_amplitude / math.sqrt(2 * (kappa + 1))
    shape = (2,) if size is None else (2, *np.atleast_1d(size))
    z = rng.standard_normal(shape)
    draw = mean + sd * (z[0] + 1j * z[1])
    return complex(draw) if size is None else draw


@dataclass(frozen=True)
class SatUserStats:
    """Statistical CSI of one satellite user."""

    steering: np.ndarray
    gain_power: float
    mean_gain: complex
    noise_power_w: float
    weight: float = 1.0

    def __post_init__(self):
        nrm = np.linalg.norm(self.steering)
        if abs(nrm - 1.0) > 1e-9:
            raise ValueError(f"steering vector must have unit norm, got {nrm}")
        if abs(self.mean_gain) ** 2 > self.gain_power * (1 + 1e-12) + 1e-300:
            raise ValueError("|mean_gain|^2 exceeds gain_power")
        if self.noise_power_w <= 0:
            raise ValueError("noise power must be positive")


def build_sat_user_stats(geometry: SatUserGeometry, config: SystemConfig, snr_db: float,
                         k_s: int = 1, noise_power_w: float | None = None,
                         weight: float = 1.0) -> SatUserStats:
    """Statistical CSI of one user.

    The noise power is shared by all users and fixed by ``snr_db`` through the
    link budget at the sub-satellite distance (``k_s`` users share the power);
    pass ``noise_power_w`` to override it.
    """
    if geometry.distance_m <= 0:
        raise ValueError("distance_m must be positive")
    tx, ty = direction_cosines(geometry.elevation_rad, geometry.azimuth_rad)
    v = upa_steering(tx, ty, config.m_x, config.m_y, config.element_spacing_ratio)
    gain_power = float(config.path_gain(geometry.distance_m))
    mean = rician_mean_gain(math.sqrt(gain_power), config.rician_factor_linear)
    if noise_power_w is None:
        noise_power_w = config.noise_power_for_snr(snr_db, k_s)
    return SatUserStats(v, gain_power, mean, noise_power_w, weight)


@dataclass(frozen=True)
class UserSet:
    """Column-stacked statistics of all satellite users.

    ``steering`` is ``M x K``; the per-user arrays have length ``K``.
    """

    steering: np.ndarray
    gain_power: np.ndarray
    mean_gain: np.ndarray
    noise_power: np.ndarray
    weight: np.ndarray = field(default=None)

    def __post_init__(self):
        k = self.steering.shape[1]
        if self.weight is None:
            object.__setattr__(self, "weight", np.ones(k))
        for name in ("gain_power", "mean_gain", "noise_power", "weight"):
            if np.shape(getattr(self, name)) != (k,):
                raise ValueError(f"{name} must have length {k}")

    @property
    def n_antennas(self) -> int:
        return self.steering.shape[0]

    @property
    def n_users(self) -> int:
        return self.steering.shape[1]

    @property
    def mean_channel(self) -> np.ndarray:
        return self.steering * self.mean_gain[None, :]

    @property
    def upsilon(self) -> np.ndarray:
        v = self.steering
        return (v * self.gain_power[None, :]) @ v.conj().T

    def scaled(self, channel_scale: float, noise_scale: float) -> "UserSet":
        return UserSet(self.steering, self.gain_power * channel_scale,
                       self.mean_gain * math.sqrt(channel_scale),
                       self.noise_power * noise_scale, self.weight)

    def with_phases(self, phases) -> "UserSet":
        rot = np.exp(1j * np.asarray(phases, dtype=float))
        return UserSet(self.steering, self.gain_power, self.mean_gain * rot,
                       self.noise_power, self.weight)


def as_user_set(stats) -> UserSet:
    if isinstance(stats, UserSet):
        return stats
    stats = list(stats)
    if not stats:
        raise ValueError("at least one satellite user is required")
    m = stats[0].steering.shape[0]
    if any(s.steering.shape != (m,) for s in stats):
        raise ValueError("inconsistent steering-vector lengths")
    return UserSet(
        np.stack([s.steering for s in stats], axis=1),
        np.array([s.gain_power for s in stats], dtype=float),
        np.array([s.mean_gain for s in stats], dtype=complex),
        np.array([s.noise_power_w for s in stats], dtype=float),
        np.array([s.weight for s in stats], dtype=float),
    )


def aggregate_ss_stats(stats: Sequence[SatUserStats] | UserSet):
    """Mean channel matrix and spatial covariance ``E{H H^H}``."""
    users = as_user_set(stats)
    return users.mean_channel, users.upsilon


@dataclass(frozen=True)
class ChannelRealization:
    B: np.ndarray


def sample_gains(users: UserSet, rng: np.random.Generator, n_draws: int) -> np.ndarray:
    """``n_draws x K`` complex Rician gains, one column per user."""
    scatter = np.sqrt(np.maximum(users.gain_power - np.abs(users.mean_gain) ** 2, 0.0) / 2)
    z = rng.standard_normal((2, n_draws, users.n_users))
    return users.mean_gain[None, :] + scatter[None, :] * (z[0] + 1j * z[1])


def sample_channel_matrix(stats, rng: np.random.Generator) -> ChannelRealization:
    users = as_user_set(stats)
    g = sample_gains(users, rng, 1)[0]
    return ChannelRealization(users.steering * g[None, :])


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; ``seed`` may be an int or SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(n)]
