"""Interference-aware robust beamforming.

* :func:`wqtia`  - weighted sum rate via the multidimensional complex quadratic
  transform, alternating a closed-form auxiliary update with a convex
  precoder subproblem.
* :func:`wweia`  - the equivalent weighted-MMSE iteration with closed-form
  precoders parameterised by the two Lagrange multipliers.
* :func:`mmse_ia` - closed-form MMSE precoder with an interference penalty
  tuned by bisection.

Algorithms run on a normalised copy of the problem (unit power budget, unit
noise) and map the result back to watts.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize

from .baselines import regularized_mmse
from .geometry import UserSet, as_user_set
from .numerics import BisectionSpec, bisect_monotone, nelder_mead_2d, project_intersection
from .problem import PrecoderResult, RobustProblem, Scaling, lower_bound_rate

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


# --------------------------------------------------------------------------
# MCQT surrogate


@dataclass
class McqtState:
    xi: np.ndarray
    P: np.ndarray


def _mcqt_terms(P, users: UserSet):
    S = users.steering.conj().T @ P
    S2 = np.abs(S) ** 2
    diag = np.diag(S)
    g2 = np.abs(users.mean_gain) ** 2
    denom = users.gain_power * S2.sum(axis=1) - g2 * np.abs(diag) ** 2 + users.noise_power
    lin = users.mean_gain.conj() * diag  # h_k^H p_k
    return S, diag, denom, lin


def mcqt_update_xi(P: np.ndarray, stats) -> np.ndarray:
    """Optimal auxiliary variables for fixed ``P``: ``h_k^H p_k / D_k``."""
    users = as_user_set(stats)
    _, _, denom, lin = _mcqt_terms(P, users)
    return lin / denom


def _mcqt_arguments(xi, P, users):
    S, diag, denom, lin = _mcqt_terms(P, users)
    arg = 1.0 + 2.0 * np.real(xi.conj() * lin) - np.abs(xi) ** 2 * denom
    return arg, S, diag


def mcqt_objective(xi: np.ndarray, P: np.ndarray, stats) -> float:
    """Quadratic-transform surrogate ``f(xi, P)`` in bit/s/Hz."""
    users = as_user_set(stats)
    arg, _, _ = _mcqt_arguments(xi, P, users)
    if np.any(arg <= 0):
        raise ValueError("log argument is nonpositive: xi is infeasible for this P")
    return float(np.sum(users.weight * np.log2(arg)))


def _mcqt_value_grad(xi, P, users):
    """Objective and real gradient ``2 df/dP*``; ``-inf`` outside the log domain."""
    arg, S, diag = _mcqt_arguments(xi, P, users)
    if np.any(arg <= 0):
        return -math.inf, None
    c = users.weight / (arg * LN2)
    a2 = np.abs(xi) ** 2
    V = users.steering
    G = users.mean_channel * (c * xi)[None, :]
    G -= V @ ((c * a2 * users.gain_power)[:, None] * S)
    G += V * (c * a2 * np.abs(users.mean_gain) ** 2 * diag)[None, :]
    return float(np.sum(users.weight * np.log2(arg))), 2.0 * G


@dataclass
class SubproblemInfo:
    iterations: int
    stationarity: float
    line_search_failed: bool


def solve_wsr_subproblem(xi: np.ndarray, problem: RobustProblem, P_init: np.ndarray,
                         max_iter: int = 300, tol: float = 1e-10, eps: float = 1e-7,
                         info: list | None = None) -> np.ndarray:
    """Maximise ``f(xi, .)`` over the power ball ∩ interference ellipsoid.

    Projected gradient ascent with backtracking. Stops when the objective gain
    of a step drops below ``tol`` (relative) or the projected-gradient norm
    falls below ``eps`` times its initial value. Returns the best feasible
    iterate, never worse than ``P_init`` after projection.
    """
    users = problem.users
    bound = problem.k_g * problem.i_thr_w

    def proj(X):
        if not problem.constrained:
            return project_intersection(X, problem.p_t_w, None, math.inf)
        return project_intersection(X, problem.p_t_w, None, bound, basis=problem.basis)

    P = proj(P_init)
    F, g = _mcqt_value_grad(xi, P, users)
    if g is None:
        raise ValueError("initial precoder lies outside the surrogate's domain")
    c_est = float(np.max(np.abs(xi) ** 2 * users.gain_power * users.weight)) / LN2
    t = 1.0 / max(2.0 * c_est, 1e-300)
    g0 = None
    failed = False
    it = 0
    stat = math.inf
    for it in range(1, max_iter + 1):
        for _ in range(60):
            Pn = proj(P + t * g)
            D = Pn - P
            Fn, gn = _mcqt_value_grad(xi, Pn, users)
            quad = float(np.real(np.vdot(g, D))) - float(np.vdot(D, D).real) / (2 * t)
            if gn is not None and Fn >= F + quad - 1e-15 * abs(F):
                break
            t *= 0.5
        else:
            failed = True
            log.warning("line search failed in the precoder subproblem")
            break
        stat = float(np.linalg.norm(D)) / t
        if g0 is None:
            g0 = max(stat, 1e-300)
        gain = Fn - F
        P, F, g = Pn, Fn, gn
        t *= 2.0
        if gain <= tol * max(abs(F), 1.0) or stat <= eps * g0:
            break
    if info is not None:
        info.append(SubproblemInfo(it, stat, failed))
    return P


def _normalized_result(P_n, scaling: Scaling, problem: RobustProblem, algorithm: str,
                       **kwargs) -> PrecoderResult:
    P = scaling.precoder(P_n)
    res = PrecoderResult(P, algorithm, **kwargs)
    res.avg_interference_w = problem.interference_w(P)
    if problem.audit is not None:
        res.avg_interference_true_w = problem.audit_interference_w(P)
    res.trace = [(n, obj, scaling.interference(i_n)) for n, obj, i_n in res.trace]
    return res


def _feasible_start(problem_n: RobustProblem) -> np.ndarray:
    """Feasible starting precoder: the MMSE-IA solution of the same problem."""
    P, _, _, _ = _mmse_ia_core(problem_n)
    return P


def wqtia(problem: RobustProblem, P_init: np.ndarray | None = None) -> PrecoderResult:
    """Alternating MCQT beamforming; the objective trace is the rate lower bound."""
    prob, scaling = problem.normalized()
    users = prob.users
    P = _feasible_start(prob) if P_init is None else P_init / math.sqrt(scaling.power)
    f_prev = lower_bound_rate(P, users)
    trace = [(0, f_prev, prob.interference_w(P))]
    converged = False
    flags = []
    n = 0
    for n in range(1, prob.iter_max + 1):
        xi = mcqt_update_xi(P, users)
        info = []
        P = solve_wsr_subproblem(xi, prob, P, info=info)
        if info and info[0].line_search_failed:
            flags.append(f"line-search-failed@{n}")
        f = lower_bound_rate(P, users)
        i_avg = prob.interference_w(P)
        trace.append((n, f, i_avg))
        if abs(f - f_prev) < prob.tol and i_avg <= prob.i_thr_w * (1 + 1e-9):
            converged = True
            break
        f_prev = f
    if not converged:
        flags.append("iter-max")
    return _normalized_result(P, scaling, problem, "wqtia", trace=trace, converged=converged,
                              iterations=n, flags=tuple(flags),
                              multipliers={"xi": mcqt_update_xi(P, users)})


# --------------------------------------------------------------------------
# WMMSE equivalence


@dataclass
class WmmseState:
    u: np.ndarray
    w: np.ndarray
    P: np.ndarray
    lam: float = 0.0
    mu: float = 0.0


def wmmse_update_u(P: np.ndarray, stats) -> np.ndarray:
    """MMSE receive scalars ``u_k = p_k^H h_k / (sum_i p_i^H U_k p_i + sigma_k^2)``."""
    users = as_user_set(stats)
    S = users.steering.conj().T @ P
    denom = users.gain_power * np.sum(np.abs(S) ** 2, axis=1) + users.noise_power
    return np.conj(users.mean_gain.conj() * np.diag(S)) / denom


def wmmse_mse(P: np.ndarray, u: np.ndarray, stats) -> np.ndarray:
    """Per-user MSE for arbitrary receive scalars ``u``."""
    users = as_user_set(stats)
    S = users.steering.conj().T @ P
    total = users.gain_power * np.sum(np.abs(S) ** 2, axis=1) + users.noise_power
    lin = users.mean_gain.conj() * np.diag(S)  # h_k^H p_k
    e = np.abs(u) ** 2 * total - 2.0 * np.real(u * lin) + 1.0
    return e


def wmmse_update_w(e: np.ndarray, weights: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if np.any(e <= 0):
        raise ValueError("MSE values must be positive")
    return np.asarray(weights, dtype=float) / e


def _wmmse_parts(u, w, users: UserSet):
    """Weighted covariance ``sum |u_k|^2 w_k gamma_k^2 v v^H`` and ``H diag(w u*)``."""
    V = users.steering
    coef = np.abs(u) ** 2 * w * users.gain_power
    U_hat = (V * coef[None, :]) @ V.conj().T
    C = users.mean_channel * (w * u.conj())[None, :]
    return U_hat, C


def precoder_from_multipliers(lam: float, mu: float, state: WmmseState,
                              problem: RobustProblem) -> np.ndarray:
    """Stationary point ``(U_hat + lam I + mu/K_G U_sg)^-1 H diag(w u*)``."""
    U_hat, C = _wmmse_parts(state.u, state.w, problem.users)
    A = U_hat + lam * np.eye(U_hat.shape[0])
    if mu:
        A = A + (mu / problem.k_g) * problem.upsilon_sg
    if lam <= 0 and np.linalg.cond(A) > 1e14:
        raise np.linalg.LinAlgError("singular precoder system; raise the power multiplier floor")
    return np.linalg.solve(A, C)


def weighted_mse(P, u, w, stats) -> float:
    users = as_user_set(stats)
    return float(np.sum(w * wmmse_mse(P, u, users)))


def wmmse_objective(P, u, w, stats) -> float:
    """Block-descent objective ``sum_k (w_k e_k - a_k ln w_k)``."""
    users = as_user_set(stats)
    return float(np.sum(w * wmmse_mse(P, u, users) - users.weight * np.log(w)))


class Multipliers(NamedTuple):
    lam: float
    mu: float
    exhausted: bool = False


class _MultiplierOracle:
    """Power and interference of ``P(lam, mu)`` for fixed ``(u, w)``."""

    def __init__(self, state: WmmseState, problem: RobustProblem):
        self.problem = problem
        self.U_hat, self.C = _wmmse_parts(state.u, state.w, problem.users)
        self.scale = max(float(np.trace(self.U_hat).real), 1e-300) / self.U_hat.shape[0]
        self.lam_floor = 1e-10 * self.scale
        self._cache = {}

    def decompose(self, mu):
        if mu not in self._cache:
            B = self.U_hat + (mu / self.problem.k_g) * self.problem.upsilon_sg if mu else self.U_hat
            d, Q = np.linalg.eigh(0.5 * (B + B.conj().T))
            d = np.clip(d, 0.0, None)
            Ct = Q.conj().T @ self.C
            self._cache[mu] = (d, Q, Ct, np.sum(np.abs(Ct) ** 2, axis=1))
        return self._cache[mu]

    def power(self, lam, mu):
        d, _, _, rows = self.decompose(mu)
        return float(np.sum(rows / (d + lam) ** 2))

    def best_lambda(self, mu):
        """Smallest ``lam >= floor`` meeting the power budget."""
        p_t = self.problem.p_t_w
        lo = self.lam_floor
        if self.power(lo, mu) <= p_t:
            return lo
        hi = max(self.scale, lo)
        while self.power(hi, mu) > p_t:
            hi *= 4.0
        return optimize.brentq(lambda x: self.power(x, mu) - p_t, lo, hi, xtol=1e-300,
                               rtol=1e-14)

    def precoder(self, lam, mu):
        d, Q, Ct, _ = self.decompose(mu)
        return Q @ (Ct / (d + lam)[:, None])

    def interference(self, lam, mu):
        return self.problem.interference_w(self.precoder(lam, mu))


def solve_multipliers(state: WmmseState, problem: RobustProblem,
                      method: str = "dual", budget: int = 400) -> Multipliers:
    """Lagrange multipliers of the weighted-MSE precoder step.

    ``method="dual"`` exploits concavity of the dual function: for each
    ``mu`` the power multiplier is the smallest one meeting the budget, and
    the interference of the resulting precoder is nonincreasing in ``mu``,
    so ``mu`` is found by a bracketed root search. ``method="nelder-mead"``
    runs a log-grid scan followed by a bounded simplex search on an
    exact-penalty objective.
    """
    oracle = _MultiplierOracle(state, problem)
    if method == "nelder-mead":
        return _multipliers_nelder_mead(oracle, state, problem, budget)
    if method != "dual":
        raise ValueError(f"unknown multiplier method {method!r}")
    lam0 = oracle.best_lambda(0.0)
    if not problem.constrained or oracle.interference(lam0, 0.0) <= problem.i_thr_w:
        return Multipliers(lam0, 0.0)
    thr = problem.i_thr_w

    def excess(log_mu):
        mu = math.exp(log_mu)
        return math.log(oracle.interference(oracle.best_lambda(mu), mu) / thr)

    trace_sg = float(np.trace(problem.upsilon_sg).real)
    mu_hi = problem.k_g * oracle.scale * oracle.U_hat.shape[0] / max(trace_sg, 1e-300)
    mu_lo = None
    for _ in range(400):
        if excess(math.log(mu_hi)) <= 0:
            break
        mu_lo = mu_hi
        mu_hi *= 8.0
    else:
        lam = oracle.best_lambda(mu_hi)
        return Multipliers(lam, mu_hi, True)
    if mu_lo is None:
        mu_lo = mu_hi
        while excess(math.log(mu_lo)) <= 0 and mu_lo > 1e-300:
            mu_lo /= 8.0
        if excess(math.log(mu_lo)) <= 0:
            return Multipliers(oracle.best_lambda(mu_lo), mu_lo)
    lo, hi = math.log(mu_lo), math.log(mu_hi)
    log_mu = optimize.brentq(excess, lo, hi, xtol=1e-13, rtol=1e-14)
    if excess(log_mu) > 0:
        # keep the feasible end of the bracket
        lo = log_mu
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if excess(mid) <= 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-14 * max(1.0, abs(hi)):
                break
        log_mu = hi
    mu = math.exp(log_mu)
    return Multipliers(oracle.best_lambda(mu), mu)


def _multipliers_nelder_mead(oracle, state, problem, budget, restarts=4):
    """Grid scan plus simplex search on the weighted MSE of the pulled-in precoder.

    Each candidate ``P(lam, mu)`` is scaled towards the origin until both
    constraints hold, which keeps the cost finite and continuous; at the
    optimum the scaling is one. The simplex restarts from the best few grid
    points because the cost is flat where both multipliers are negligible.
    """
    users = problem.users

    def shrink(P):
        c = min(1.0, problem.p_t_w / max(float(np.vdot(P, P).real), 1e-300))
        if problem.constrained:
            c = min(c, problem.i_thr_w / max(problem.interference_w(P), 1e-300))
        return c

    def cost(lam, mu):
        P = oracle.precoder(max(lam, oracle.lam_floor), max(mu, 0.0))
        return weighted_mse(math.sqrt(shrink(P)) * P, state.u, state.w, users)

    scale = oracle.scale
    grid = scale * np.logspace(-8, 4, 16)
    mu_grid = np.concatenate([[0.0], grid[:-1]]) if problem.constrained else np.array([0.0])
    scored = []
    for lam in grid:  # stable sort keeps lexicographic order among ties
        for mu in mu_grid:
            scored.append((cost(lam, mu), lam, mu))
    scored.sort(key=lambda t: t[0])
    # the simplex works on log-multipliers, so it stays inside the open quadrant
    floor = math.log(oracle.lam_floor)
    mu_floor = math.log(1e-14 * scale)
    best = None
    for _, lam0, mu0 in scored[:restarts]:
        res = nelder_mead_2d(lambda a, b: cost(math.exp(a), math.exp(b)),
                             (math.log(lam0), math.log(max(mu0, 1e-14 * scale))),
                             bounds=((floor, None), (mu_floor, None)),
                             budget=budget // restarts, xatol=1e-10, fatol=1e-14)
        if best is None or res.value < best.value:
            best = res
    lam = math.exp(best.x)
    mu = 0.0 if best.y <= mu_floor else math.exp(best.y)
    return Multipliers(lam, mu, not best.converged)


def _pull_inside(P, problem: RobustProblem):
    """Radially scale ``P`` into both constraint sets (a no-op for exact multipliers)."""
    c = min(1.0, problem.p_t_w / max(float(np.vdot(P, P).real), 1e-300))
    if problem.constrained:
        c = min(c, problem.i_thr_w / max(problem.interference_w(P), 1e-300))
    return P if c >= 1.0 else P * math.sqrt(c)


def wweia(problem: RobustProblem, P_init: np.ndarray | None = None,
          pin_mu_zero: bool = False, algorithm: str = "wweia",
          multiplier_method: str = "dual") -> PrecoderResult:
    """WMMSE-equivalent iteration; the trace holds ``sum_k (w_k e_k - a_k ln w_k)``."""
    prob, scaling = problem.normalized()
    users = prob.users
    if pin_mu_zero:
        prob = prob.replace(i_thr_w=math.inf)
    P = _feasible_start(prob) if P_init is None else P_init / math.sqrt(scaling.power)
    u = wmmse_update_u(P, users)
    e = wmmse_mse(P, u, users)
    w = wmmse_update_w(e, users.weight)
    eps_prev = wmmse_objective(P, u, w, users)
    trace = [(0, eps_prev, prob.interference_w(P))]
    converged = False
    flags = []
    mult = Multipliers(0.0, 0.0)
    n = 0
    for n in range(1, prob.iter_max + 1):
        u = wmmse_update_u(P, users)
        w = wmmse_update_w(wmmse_mse(P, u, users), users.weight)
        state = WmmseState(u, w, P)
        mult = solve_multipliers(state, prob, method=multiplier_method)
        if mult.exhausted:
            flags.append(f"multiplier-search-exhausted@{n}")
        P = _pull_inside(precoder_from_multipliers(mult.lam, mult.mu, state, prob), prob)
        eps = wmmse_objective(P, u, w, users)
        i_avg = prob.interference_w(P)
        trace.append((n, eps, i_avg))
        if abs(eps - eps_prev) < prob.tol and i_avg <= prob.i_thr_w * (1 + 1e-6):
            converged = True
            break
        eps_prev = eps
    if not converged:
        flags.append("iter-max")
    # multipliers and the (u, w) of the last precoder step, in physical units
    return _normalized_result(
        P, scaling, problem, algorithm, trace=trace, converged=converged, iterations=n,
        flags=tuple(flags),
        multipliers={"lambda": mult.lam / scaling.power, "mu": mult.mu / scaling.noise,
                     "u": u / math.sqrt(scaling.noise), "w": w})


# --------------------------------------------------------------------------
# MMSE with interference penalty


def mmse_ia_closed_form(varsigma: float, problem: RobustProblem) -> tuple[np.ndarray, float]:
    """``beta (U_ss + s U_sg + K sigma^2/P_T I)^-1 H`` at full power."""
    if varsigma < 0:
        raise ValueError("penalty factor must be nonnegative")
    return regularized_mmse(problem.users, problem.p_t_w, problem.upsilon_sg, varsigma)


def _mmse_ia_core(problem: RobustProblem, tol_db: float = 0.01):
    """Returns ``(P, beta, varsigma, flags)`` for a (normalised) problem."""

    def interference(s):
        P, _ = mmse_ia_closed_form(s, problem)
        return problem.interference_w(P)

    P0, beta0 = mmse_ia_closed_form(0.0, problem)
    if not problem.constrained or problem.interference_w(P0) <= problem.i_thr_w:
        return P0, beta0, 0.0, ()
    s_hi = float(np.trace(problem.users.upsilon).real) / max(
        float(np.trace(problem.upsilon_sg).real), 1e-300)
    s_lo = None
    for _ in range(60):
        if interference(s_hi) <= problem.i_thr_w:
            break
        s_lo = s_hi
        s_hi *= 2.0
    else:
        P, beta = mmse_ia_closed_form(s_hi, problem)
        return P, beta, s_hi, ("bracket-failed",)
    if s_lo is None:
        s_lo = s_hi
        while interference(s_lo) <= problem.i_thr_w and s_lo > 1e-300:
            s_lo *= 0.5
    target = 10 * math.log10(problem.i_thr_w) - tol_db / 2

    def level(log_s):
        return 10 * math.log10(max(interference(math.exp(log_s)), 1e-320))

    log_s = bisect_monotone(level, BisectionSpec(math.log(s_lo), math.log(s_hi), target,
                                                 tol_db / 2, max_iter=200))
    s = math.exp(log_s)
    P, beta = mmse_ia_closed_form(s, problem)
    return P, beta, s, ()


def mmse_ia(problem: RobustProblem) -> PrecoderResult:
    """Closed-form MMSE precoder whose penalty factor meets the threshold to 0.01 dB.

    Runs in physical units: the penalty factor is scale invariant, and at
    ``varsigma = 0`` the result is the MMSE baseline bit for bit.
    """
    P, beta, s, flags = _mmse_ia_core(problem)
    res = PrecoderResult(P, "mmseia", beta=beta, converged=not flags, flags=flags,
                         multipliers={"varsigma": s})
    res.avg_interference_w = problem.interference_w(P)
    if problem.audit is not None:
        res.avg_interference_true_w = problem.audit_interference_w(P)
    return res


# --------------------------------------------------------------------------


ALGORITHMS: dict[str, Callable[[RobustProblem], PrecoderResult]] = {
    "wqtia": wqtia,
    "wweia": wweia,
    "mmseia": mmse_ia,
}


def pa_variant(algorithm, problem: RobustProblem) -> PrecoderResult:
    """Run ``algorithm`` on a problem built from the position-aided covariance.

    The returned record carries the interference under the design model and,
    when the problem has an ``audit`` model, the true integral interference.
    """
    fn = ALGORITHMS[algorithm] if isinstance(algorithm, str) else algorithm
    res = fn(problem)
    res.algorithm = f"{res.algorithm}-pa"
    if problem.audit is not None:
        res.avg_interference_true_w = problem.audit_interference_w(res.P)
    return res
