"""Online bandit policies over finite action rounds.

All policies share one sufficient-statistics state (design matrix, reward
vector, and the projected-side statistics used by the subspace-accelerated
policies). The accelerated policies play inside the offline-estimated
subspace while a per-step test says the projected confidence set is still
tighter than the full-dimensional one, then fall back to plain LinUCB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .errors import NumericalError, ValidationError

STYLES = ("theory", "practical", "theory_ambient")
PRACTICAL_SCALE = 0.33


@dataclass(frozen=True)
class BonusSchedule:
    """Run-level constants for the exploration bonuses."""

    reward_bound: float
    horizon: int
    d_a: int
    d_k: int
    mu: float = 1.0
    c_mult: float = 1.0
    delta: float = 0.05
    tau: float = 1.0
    tau_prime: float = 0.0
    style: str = "practical"

    def __post_init__(self):
        if min(self.reward_bound, self.mu, self.c_mult, self.delta) <= 0:
            raise ValidationError("reward_bound, mu, c_mult, delta must be positive")
        if self.horizon < 1 or self.d_a < 1 or not 1 <= self.d_k <= self.d_a:
            raise ValidationError("horizon and dimensions must be positive, d_k <= d_a")
        if self.tau < 0 or self.tau_prime < 0:
            raise ValidationError("tau and tau_prime must be nonnegative")
        if self.style not in STYLES:
            raise ValidationError(f"style must be one of {STYLES}")


@dataclass
class OnlineLearnerState:
    """Sufficient statistics for every online policy.

    ``v_inv``, ``u_gram`` and ``gram_cc`` are caches maintained alongside
    the primary fields; ``u_gram`` tracks u_hat' v u_hat and ``gram_cc``
    tracks c c'.
    """

    v: np.ndarray
    b: np.ndarray
    c: np.ndarray | None
    kappa: float
    t: int
    switched: bool
    kappa_sq_sum: float
    v_inv: np.ndarray = field(repr=False, default=None)
    u_gram: np.ndarray | None = field(repr=False, default=None)
    gram_cc: np.ndarray | None = field(repr=False, default=None)

    @classmethod
    def fresh(cls, d_a, u_hat=None):
        state = cls(
            v=np.eye(d_a),
            b=np.zeros(d_a),
            c=None,
            kappa=0.0,
            t=1,
            switched=False,
            kappa_sq_sum=0.0,
            v_inv=np.eye(d_a),
        )
        if u_hat is not None:
            u_hat = np.asarray(u_hat, dtype=np.float64)
            d_k = u_hat.shape[1]
            state.c = np.zeros((d_k, d_a))
            state.u_gram = np.ascontiguousarray(u_hat.T @ u_hat)
            state.gram_cc = np.zeros((d_k, d_k))
        return state


@dataclass(frozen=True)
class ArmChoice:
    index: int
    ucb_value: float
    branch: str                   # "projected" | "fullrank"


def alpha1(schedule, t, kappa, delta_off, style=None):
    """Projected-branch bonus at step t."""
    style = schedule.style if style is None else style
    r, mu, c = schedule.reward_bound, schedule.mu, schedule.c_mult
    if style == "practical":
        return PRACTICAL_SCALE * math.sqrt(
            schedule.d_k * math.log(1.0 + 10.0 * schedule.horizon / schedule.d_k)
        )
    if style == "theory":
        dim_term = c * r * math.sqrt(schedule.d_k * math.log(schedule.horizon / schedule.delta))
    elif style == "theory_ambient":
        # Conservative variant: ambient dimension and the running step
        # instead of the latent dimension and the horizon.
        dim_term = c * r * math.sqrt(schedule.d_a * math.log(max(t, 2) / schedule.delta))
    else:
        raise ValidationError(f"style must be one of {STYLES}")
    leak = 0.0
    if schedule.tau_prime > 0.0 and kappa > 0.0 and math.isfinite(delta_off):
        leak = schedule.tau_prime * r * delta_off * kappa
    return r * math.sqrt(mu) + leak + dim_term


def alpha2(schedule, t, style=None):
    """Full-dimensional bonus at step t."""
    style = schedule.style if style is None else style
    r, mu, c = schedule.reward_bound, schedule.mu, schedule.c_mult
    if style == "practical":
        return PRACTICAL_SCALE * math.sqrt(
            schedule.d_a * math.log(1.0 + 10.0 * schedule.horizon / schedule.d_a)
        )
    if style in ("theory", "theory_ambient"):
        return r * math.sqrt(mu) + c * r * math.sqrt(
            schedule.d_a * math.log(schedule.horizon / schedule.delta)
        )
    raise ValidationError(f"style must be one of {STYLES}")


def switch_test(state, estimate, schedule):
    """True while the projected confidence set is worth using."""
    delta_off = estimate.delta_off
    if not math.isfinite(delta_off):
        return False
    lhs = delta_off * schedule.tau * math.sqrt(state.t)
    if schedule.tau_prime > 0.0:
        lhs += delta_off * schedule.tau_prime * math.sqrt(
            estimate.d_k * state.kappa_sq_sum / state.t
        )
    return lhs <= estimate.d_a


def linucb_select(state, action_round, alpha2_value):
    """Optimistic full-dimensional selection; lowest index wins ties."""
    if action_round.k < 1:
        raise ValidationError("round must contain at least one arm")
    beta2 = state.v_inv @ state.b
    scores = kernels.ucb_scores(action_round.features, beta2, state.v_inv, alpha2_value)
    idx = int(np.argmax(scores))
    return ArmChoice(index=idx, ucb_value=float(scores[idx]), branch="fullrank")


def _projected_mean(state):
    """Solve (u_hat' V u_hat) theta = u_hat' b through its Cholesky factor."""
    factor = scipy.linalg.cho_factor(state.u_gram, lower=True, check_finite=False)
    return factor


def _projected_scores(state, estimate, feats, alpha1_value):
    factor = _projected_mean(state)
    theta_bar = scipy.linalg.cho_solve(
        factor, estimate.u_hat.T @ state.b, check_finite=False
    )
    psi = feats @ estimate.u_hat
    solved = scipy.linalg.cho_solve(factor, psi.T, check_finite=False)
    bonus = np.sqrt(np.maximum(np.einsum("kd,dk->k", psi, solved), 0.0))
    return feats @ (estimate.u_hat @ theta_bar) + alpha1_value * bonus


def proball_select(state, estimate, action_round, schedule):
    """Projected optimism while the switch test holds, LinUCB afterwards."""
    if estimate.d_k > estimate.d_a:
        raise ValidationError("estimate dimensions are inconsistent")
    if not switch_test(state, estimate, schedule):
        return linucb_select(state, action_round, alpha2(schedule, state.t))
    a1 = alpha1(schedule, state.t, state.kappa, estimate.delta_off)
    scores = _projected_scores(state, estimate, action_round.features, a1)
    idx = int(np.argmax(scores))
    return ArmChoice(index=idx, ucb_value=float(scores[idx]), branch="projected")


def _sample_fullrank(state, alpha2_value, rng):
    beta_bar = state.v_inv @ state.b
    try:
        chol = np.linalg.cholesky(state.v)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("design matrix lost positive definiteness") from exc
    z = rng.standard_normal(state.b.shape[0])
    return beta_bar + alpha2_value * scipy.linalg.solve_triangular(
        chol.T, z, lower=False, check_finite=False
    )


def lints_select(state, action_round, alpha2_value, rng):
    """Posterior-sampling baseline in the full feature space."""
    beta_sample = _sample_fullrank(state, alpha2_value, rng)
    scores = action_round.features @ beta_sample
    idx = int(np.argmax(scores))
    return ArmChoice(index=idx, ucb_value=float(scores[idx]), branch="fullrank")


def proball_ts_select(state, estimate, action_round, schedule, rng):
    """Thompson-sampling counterpart: sampling replaces the bonuses."""
    if not switch_test(state, estimate, schedule):
        return lints_select(state, action_round, alpha2(schedule, state.t), rng)
    a1 = alpha1(schedule, state.t, state.kappa, estimate.delta_off)
    factor = _projected_mean(state)
    theta_bar = scipy.linalg.cho_solve(
        factor, estimate.u_hat.T @ state.b, check_finite=False
    )
    try:
        chol = np.linalg.cholesky(state.u_gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("projected design matrix lost positive definiteness") from exc
    z = rng.standard_normal(estimate.d_k)
    theta_sample = theta_bar + a1 * scipy.linalg.solve_triangular(
        chol.T, z, lower=False, check_finite=False
    )
    scores = action_round.features @ (estimate.u_hat @ theta_sample)
    idx = int(np.argmax(scores))
    return ArmChoice(index=idx, ucb_value=float(scores[idx]), branch="projected")


def _orth(a):
    q, _ = np.linalg.qr(a)
    return q[:, : a.shape[1]]


def _boundary_candidate(u_hat, direction, c_bound, max_doublings=60, bisect_iters=40):
    """Orthonormal perturbation of u_hat whose overlap hits the bound."""

    def overlap(s):
        return np.linalg.norm(u_hat.T @ _orth(u_hat + s * direction))

    lo, hi = 0.0, 1.0
    for _ in range(max_doublings):
        if overlap(hi) < c_bound:
            break
        lo, hi = hi, hi * 2.0
    else:
        return _orth(u_hat + hi * direction)
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        if overlap(mid) >= c_bound:
            lo = mid
        else:
            hi = mid
    return _orth(u_hat + lo * direction)


def local_ucb_select(state, estimate, action_round, schedule, solver_budget, rng):
    """Sharpened optimism over the intersection of both confidence sets.

    APPROXIMATE solver: the subspace-overlap constraint is nonconvex, so
    the subspace is searched over ``solver_budget`` random orthonormal
    perturbations of the estimate sitting on the constraint boundary, plus
    the estimate itself. For each fixed subspace the per-arm value is the
    minimum of the projected and full-dimensional bounds, which never
    exceeds the plain LinUCB bound. Intended for desk-scale dimensions.
    """
    if solver_budget < 1:
        raise ValidationError("solver_budget must be at least 1")
    u_hat = estimate.u_hat
    d_k = estimate.d_k
    a1, a2 = _local_alphas(schedule)
    feats = action_round.features

    beta2 = state.v_inv @ state.b
    online_scores = kernels.ucb_scores(feats, beta2, state.v_inv, a2)

    c_bound_sq = d_k - 0.5 * min(estimate.delta_off, math.sqrt(2.0 * d_k)) ** 2
    candidates = [u_hat]
    if estimate.delta_off > 1e-12 and math.isfinite(estimate.delta_off):
        if c_bound_sq <= 1e-12:
            # Constraint is vacuous: any subspace qualifies.
            for _ in range(solver_budget):
                candidates.append(_orth(rng.standard_normal((estimate.d_a, d_k))))
        else:
            c_bound = math.sqrt(c_bound_sq)
            for _ in range(solver_budget):
                direction = rng.standard_normal((estimate.d_a, d_k))
                candidates.append(_boundary_candidate(u_hat, direction, c_bound))
    elif not math.isfinite(estimate.delta_off):
        for _ in range(solver_budget):
            candidates.append(_orth(rng.standard_normal((estimate.d_a, d_k))))

    best = np.full(feats.shape[0], -np.inf)
    for u in candidates:
        gram = u.T @ state.v @ u
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        theta_bar = scipy.linalg.cho_solve(factor, u.T @ state.b, check_finite=False)
        psi = feats @ u
        solved = scipy.linalg.cho_solve(factor, psi.T, check_finite=False)
        bonus = np.sqrt(np.maximum(np.einsum("kd,dk->k", psi, solved), 0.0))
        proj_scores = feats @ (u @ theta_bar) + a1 * bonus
        np.maximum(best, np.minimum(proj_scores, online_scores), out=best)

    idx = int(np.argmax(best))
    branch = "projected" if best[idx] < online_scores[idx] - 1e-15 else "fullrank"
    return ArmChoice(index=idx, ucb_value=float(best[idx]), branch=branch)


def _local_alphas(schedule):
    """Bonuses for the intersection solver (its own log(2T/delta) scaling)."""
    r, mu, c = schedule.reward_bound, schedule.mu, schedule.c_mult
    log_term = math.log(2.0 * schedule.horizon / schedule.delta)
    return (
        r * math.sqrt(mu) + c * r * math.sqrt(schedule.d_k * log_term),
        r * math.sqrt(mu) + c * r * math.sqrt(schedule.d_a * log_term),
    )


def update_state(state, phi, reward, estimate):
    """Fold one observation into the state (in place) and return it."""
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if phi.shape != state.b.shape:
        raise ValidationError("feature dimension does not match the state")
    kernels.rank_one_update(state.v, phi)
    kernels.sherman_morrison_update(state.v_inv, phi)
    state.b += phi * float(reward)
    if estimate is not None:
        if state.c is None:
            raise ValidationError("state was created without projected statistics")
        psi = np.ascontiguousarray(estimate.u_hat.T @ phi)
        kernels.rank_one_update(state.u_gram, psi)
        kernels.projected_stats_update(state.c, state.gram_cc, psi, phi)
        state.kappa = math.sqrt(max(_largest_generalized_eig(state.gram_cc, state.u_gram), 0.0))
        state.kappa_sq_sum += state.kappa**2
    state.t += 1
    return state


def _largest_generalized_eig(g, a):
    """Largest eigenvalue of a^{-1} g for symmetric g and SPD a."""
    chol = np.linalg.cholesky(a)
    y = scipy.linalg.solve_triangular(chol, g, lower=True, check_finite=False)
    z = scipy.linalg.solve_triangular(chol, y.T, lower=True, check_finite=False)
    return float(np.linalg.eigvalsh(0.5 * (z + z.T))[-1])
