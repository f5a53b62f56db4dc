"""Problem container, precoder result record and the rate/interference metrics
shared by every beamforming algorithm."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import UserSet, as_user_set
from .interference import InterferenceModel, average_interference_power
from .numerics import EllipsoidBasis


@dataclass(frozen=True)
class RobustProblem:
    """Weighted sum-rate problem under power and average-interference limits.

    ``interference`` is the covariance the algorithm designs against. When it
    is a position-aided approximation, ``audit`` holds the integral model used
    to report the true interference of the returned precoder.
    """

    users: UserSet
    interference: InterferenceModel
    i_thr_w: float
    p_t_w: float
    k_g: int
    tol: float = 1e-4
    iter_max: int = 100
    audit: InterferenceModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", as_user_set(self.users))
        if not self.i_thr_w > 0:
            raise ValueError("i_thr_w must be positive")
        if not self.p_t_w > 0:
            raise ValueError("p_t_w must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.k_g < 1:
            raise ValueError("k_g must be >= 1")
        if self.iter_max < 1:
            raise ValueError("iter_max must be >= 1")
        if self.interference.matrix.shape[0] != self.users.n_antennas:
            raise ValueError("interference matrix and steering vectors disagree on M_S")

    @property
    def upsilon_sg(self) -> np.ndarray:
        return self.interference.matrix

    @property
    def constrained(self) -> bool:
        return math.isfinite(self.i_thr_w)

    @property
    def common_noise(self) -> float:
        return float(np.mean(self.users.noise_power))

    @cached_property
    def basis(self) -> EllipsoidBasis:
        return EllipsoidBasis.from_matrix(self.upsilon_sg)

    def interference_w(self, P: np.ndarray) -> float:
        return average_interference_power(P, self.interference, self.k_g)

    def audit_interference_w(self, P: np.ndarray) -> float:
        model = self.audit if self.audit is not None else self.interference
        return average_interference_power(P, model, self.k_g)

    def feasible(self, P: np.ndarray, rtol: float = 1e-9) -> bool:
        power = float(np.vdot(P, P).real)
        return (power <= self.p_t_w * (1 + rtol)
                and self.interference_w(P) <= self.i_thr_w * (1 + rtol))

    def replace(self, **changes) -> "RobustProblem":
        fields = dict(users=self.users, interference=self.interference, i_thr_w=self.i_thr_w,
                      p_t_w=self.p_t_w, k_g=self.k_g, tol=self.tol, iter_max=self.iter_max,
                      audit=self.audit)
        fields.update(changes)
        return RobustProblem(**fields)

    def normalized(self) -> tuple["RobustProblem", "Scaling"]:
        """Equivalent problem with unit power budget and unit mean noise.

        Channel powers are multiplied by ``P_T / sigma^2`` so SINRs, rates
        and the interference-to-threshold ratio are unchanged.
        """
        sigma2 = self.common_noise
        ch = self.p_t_w / sigma2
        users = self.users.scaled(ch, 1.0 / sigma2)
        audit = None if self.audit is None else self.audit.scaled(ch)
        prob = RobustProblem(users, self.interference.scaled(ch), self.i_thr_w / sigma2, 1.0,
                             self.k_g, self.tol, self.iter_max, audit)
        return prob, Scaling(self.p_t_w, sigma2)


@dataclass(frozen=True)
class Scaling:
    power: float
    noise: float

    def precoder(self, P_normalized: np.ndarray) -> np.ndarray:
        return P_normalized * math.sqrt(self.power)

    def interference(self, value_normalized: float) -> float:
        return value_normalized * self.noise


@dataclass
class PrecoderResult:
    P: np.ndarray
    algorithm: str
    beta: float | None = None
    multipliers: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)  # (iteration, objective, avg_interference_w)
    converged: bool = True
    iterations: int = 0
    flags: tuple = ()
    avg_interference_w: float | None = None
    avg_interference_true_w: float | None = None

    @property
    def power_w(self) -> float:
        return float(np.vdot(self.P, self.P).real)


def _signal_terms(P: np.ndarray, users: UserSet):
    """``S[k, i] = v_k^H p_i`` and its squared magnitude."""
    S = users.steering.conj().T @ P
    return S, np.abs(S) ** 2


def lower_bound_sinr(P: np.ndarray, stats) -> np.ndarray:
    """Per-user SINR of the Jensen lower bound on the ergodic rate."""
    users = as_user_set(stats)
    _, S2 = _signal_terms(P, users)
    sig = np.abs(users.mean_gain) ** 2 * np.diag(S2)
    total = users.gain_power * S2.sum(axis=1)
    return sig / (total - sig + users.noise_power)


def lower_bound_rate(P: np.ndarray, stats) -> float:
    """Closed-form Jensen lower bound ``sum_k a_k log2(1 + SINR_k)`` in bit/s/Hz."""
    users = as_user_set(stats)
    return float(np.sum(users.weight * np.log2(1.0 + lower_bound_sinr(P, users))))
