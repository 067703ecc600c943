"""Latent-subspace estimation from logged trajectories.

The estimator splits every trajectory into odd and even halves, ridge- or
pseudoinverse-estimates a reward parameter from each half, averages the
symmetrized cross outer products, corrects for the estimation distortion
with the averaged correction matrices, and eigendecomposes. Alongside the
basis it produces a data-dependent spectral-norm bound on the projector
error, assembled from concentration bounds on the two moment matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateGapError,
    NearSingularCorrectionError,
    NotApplicableError,
    SingularMatrixError,
    ValidationError,
    VacuousBoundError,
)

SYM_TOL = 1e-10
GAP_TOL = 1e-12
SINGULAR_TOL = 1e-12

BOUND_KINDS = ("hoeffding", "empirical_bernstein", "external")
VARIANTS = ("regularized", "pseudoinverse")


@dataclass
class RidgeAccumulator:
    """Sufficient statistics mu*I + sum(phi phi') and sum(phi r)."""

    v: np.ndarray
    b: np.ndarray
    mu: float
    count: int

    @classmethod
    def empty(cls, d_a, mu):
        return cls(v=mu * np.eye(d_a), b=np.zeros(d_a), mu=float(mu), count=0)

    @classmethod
    def from_steps(cls, features, rewards, mu):
        features = np.asarray(features, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        acc = cls(
            v=mu * np.eye(features.shape[1]) + features.T @ features,
            b=features.T @ rewards,
            mu=float(mu),
            count=features.shape[0],
        )
        acc.v = 0.5 * (acc.v + acc.v.T)
        return acc

    def add(self, phi, reward):
        phi = np.asarray(phi, dtype=np.float64)
        self.v += np.outer(phi, phi)
        self.b += phi * float(reward)
        self.count += 1

    def validate(self):
        if np.max(np.abs(self.v - self.v.T)) > SYM_TOL:
            raise ValidationError("accumulator matrix lost symmetry")
        if np.linalg.eigvalsh(self.v)[0] < self.mu - SYM_TOL:
            raise ValidationError("accumulator matrix dropped below mu*I")


@dataclass(frozen=True)
class MomentSummary:
    """Averaged cross-moment and correction matrices over a dataset."""

    m_bar: np.ndarray             # (d_a, d_a), symmetric
    d_bar_1: np.ndarray           # (d_a, d_a)
    d_bar_2: np.ndarray           # (d_a, d_a)
    m_list_sq_norm: float         # spectral norm of sum of squared per-trajectory moments
    n: int
    variant: str
    m_max_norm: float             # max per-trajectory moment spectral norm

    @property
    def d_a(self):
        return self.m_bar.shape[0]


@dataclass(frozen=True)
class BoundInputs:
    delta_m: float
    delta_d: float
    b_d: float
    lambda_hat: float
    r: float


@dataclass(frozen=True)
class SubspaceEstimate:
    """Everything the offline phase hands to the online phase."""

    u_hat: np.ndarray             # (d_a, d_k), orthonormal columns
    delta_off: float              # projector-error bound; inf when vacuous
    eigenvalues: np.ndarray       # corrected-estimator spectrum, descending
    bound_inputs: BoundInputs
    vacuous: bool = False

    @property
    def d_a(self):
        return self.u_hat.shape[0]

    @property
    def d_k(self):
        return self.u_hat.shape[1]

    def projector(self):
        return self.u_hat @ self.u_hat.T


def split_odd_even(traj):
    """Halve a trajectory into its odd and even steps (1-based positions).

    With odd length the extra step goes to the first half.
    """
    if traj.h < 2:
        raise ValidationError("splitting requires at least 2 steps")
    f, r = traj.features, traj.rewards
    return (f[0::2], r[0::2]), (f[1::2], r[1::2])


def ridge_solve(acc):
    """Solve v beta = b through a symmetric positive-definite factorization."""
    try:
        factor = scipy.linalg.cho_factor(acc.v, lower=True, check_finite=False)
        beta = scipy.linalg.cho_solve(factor, acc.b, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "design matrix is singular; use mu > 0 or the pseudoinverse variant"
        ) from exc
    b_norm = np.linalg.norm(acc.b)
    residual = np.linalg.norm(acc.v @ beta - acc.b)
    if residual > 1e-8 * max(b_norm, 1e-300):
        raise SingularMatrixError(
            f"ridge solve residual {residual:.3e} exceeds tolerance"
        )
    return beta


def pinv_estimate(steps):
    """Least-norm estimate from possibly rank-deficient steps.

    Returns the pseudoinverse solution of (sum phi phi') beta = sum(phi r)
    and the orthogonal projector onto the span of the observed features.
    """
    features, rewards = steps
    features = np.asarray(features, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValidationError("pinv_estimate needs at least one step")
    u, s, vt = np.linalg.svd(features, full_matrices=False)
    cutoff = max(features.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    keep = s > cutoff
    coeff = np.where(keep, (u.T @ rewards) / np.where(keep, s, 1.0), 0.0)
    beta_hat = vt.T @ coeff
    w = vt[keep]
    projector = w.T @ w
    return beta_hat, projector


def build_moments(dataset, mu, variant):
    """Per-trajectory half estimates aggregated into moment averages.

    Trajectories are grouped by half lengths and processed with batched
    linear algebra; sums reduce in trajectory order within each group and
    groups combine in first-appearance order, so results are reproducible.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}")
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("dataset must contain at least one trajectory")
    d_a = dataset[0].d_a
    if any(t.d_a != d_a for t in dataset):
        raise ValidationError("all trajectories must share the feature dimension")
    if variant == "regularized" and mu <= 0:
        raise ValidationError("the regularized variant needs mu > 0")

    groups = {}
    for traj in dataset:
        h1 = (traj.h + 1) // 2
        groups.setdefault((h1, traj.h - h1), []).append(traj)

    n = len(dataset)
    m_sum = np.zeros((d_a, d_a))
    msq_sum = np.zeros((d_a, d_a))
    d1_sum = np.zeros((d_a, d_a))
    d2_sum = np.zeros((d_a, d_a))
    m_max = 0.0

    for (h1, h2), trajs in groups.items():
        x1 = np.stack([t.features[0::2] for t in trajs])
        r1 = np.stack([t.rewards[0::2] for t in trajs])
        x2 = np.stack([t.features[1::2] for t in trajs])
        r2 = np.stack([t.rewards[1::2] for t in trajs])
        if variant == "regularized":
            beta1, dsum1 = _regularized_half(x1, r1, mu)
            beta2, dsum2 = _regularized_half(x2, r2, mu)
        else:
            beta1, dsum1 = _pseudoinverse_half(x1, r1)
            beta2, dsum2 = _pseudoinverse_half(x2, r2)
        d1_sum += dsum1
        d2_sum += dsum2

        cross = np.einsum("gd,ge->de", beta1, beta2)
        m_sum += 0.5 * (cross + cross.T)

        # Each per-trajectory moment is rank <= 2, so its square expands in
        # outer products of the two half estimates.
        dots = np.einsum("gd,gd->g", beta1, beta2)
        sq1 = np.einsum("gd,gd->g", beta1, beta1)
        sq2 = np.einsum("gd,gd->g", beta2, beta2)
        t_ab = np.einsum("g,gd,ge->de", dots, beta1, beta2)
        msq_sum += 0.25 * (
            t_ab
            + t_ab.T
            + np.einsum("g,gd,ge->de", sq2, beta1, beta1)
            + np.einsum("g,gd,ge->de", sq1, beta2, beta2)
        )
        norms = 0.5 * (np.abs(dots) + np.sqrt(sq1 * sq2))
        if norms.size:
            m_max = max(m_max, float(norms.max()))

    msq_sum = 0.5 * (msq_sum + msq_sum.T)
    return MomentSummary(
        m_bar=m_sum / n,
        d_bar_1=d1_sum / n,
        d_bar_2=d2_sum / n,
        m_list_sq_norm=float(np.linalg.eigvalsh(msq_sum)[-1]),
        n=n,
        variant=variant,
        m_max_norm=m_max,
    )


def _regularized_half(x, r, mu):
    """Batched ridge estimates and sum of I - mu*V^{-1} over one half."""
    d_a = x.shape[2]
    eye = np.eye(d_a)
    v = mu * eye + np.einsum("ghd,ghe->gde", x, x)
    b = np.einsum("ghd,gh->gd", x, r)
    beta = np.linalg.solve(v, b[..., None])[..., 0]
    v_inv = np.linalg.inv(v)
    dsum = x.shape[0] * eye - mu * v_inv.sum(axis=0)
    return beta, dsum


def _pseudoinverse_half(x, r):
    """Batched pseudoinverse estimates and summed span projectors."""
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    cutoff = (
        max(x.shape[1], x.shape[2])
        * np.finfo(np.float64).eps
        * s.max(axis=1, keepdims=True)
    )
    keep = s > cutoff
    up = np.einsum("ghm,gh->gm", u, r)
    coeff = np.where(keep, up / np.where(keep, s, 1.0), 0.0)
    beta = np.einsum("gmd,gm->gd", vt, coeff)
    dsum = np.einsum("gm,gmd,gme->de", keep.astype(np.float64), vt, vt)
    return beta, dsum


def bound_delta_d(n, d_a, delta):
    """Hoeffding-style deviation bound for the averaged correction matrix."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    return math.sqrt(8.0 * math.log(4.0 * d_a / delta) / n)


def bound_delta_m(summary, delta, r, h, mu):
    """Empirical-Bernstein deviation bound for the averaged cross moment.

    Three terms: the variance term driven by the accumulated squared
    moments, plus two boundedness corrections carrying the ridge factor
    (2 + h/(2 mu)). Only defined for the regularized variant.
    """
    if summary.variant != "regularized":
        raise NotApplicableError(
            "the moment deviation bound assumes ridge regularization; "
            "the pseudoinverse variant has no h/(2 mu) boundedness factor"
        )
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    if mu <= 0:
        raise ValidationError("mu must be positive")
    log_term = math.log(4.0 * summary.d_a / delta)
    n = summary.n
    bound_m = r * r * (2.0 + h / (2.0 * mu))
    term1 = math.sqrt(2.0 * summary.m_list_sq_norm * log_term / n)
    term2 = 2.0 * bound_m * (2.0 * log_term / n) ** 0.75
    term3 = 4.0 * bound_m * log_term / (3.0 * n)
    return term1 + term2 + term3


def compute_delta_off(delta_m, delta_d, b_d, lambda_hat, d_k, r):
    """Projector-error bound assembled from the two moment deviations."""
    if lambda_hat <= 0.0:
        raise DegenerateGapError("eigenvalue gap must be positive")
    shrink = b_d * delta_d
    if shrink >= 1.0:
        raise VacuousBoundError(
            f"b_d * delta_d = {shrink:.4g} >= 1 makes the bound vacuous"
        )
    lead = 2.0 * math.sqrt(2.0 * d_k) / lambda_hat
    term_d = (b_d**3 * (2.0 - shrink)) / (1.0 - shrink) ** 2 * (r * r + delta_m) * delta_d
    term_m = (b_d / (1.0 - shrink)) ** 2 * delta_m
    return lead * (term_d + term_m)


def sold(
    dataset,
    d_k,
    mu=1.0,
    delta=0.05,
    bound_kind="empirical_bernstein",
    variant="regularized",
    reward_bound=1.0,
    external_bounds=None,
    simplified=False,
):
    """Estimate the latent subspace and its error bound from a dataset.

    ``reward_bound`` is the effective bound fed to the formulas (callers
    add three noise standard deviations for truncated-gaussian rewards).
    ``simplified`` zeroes the correction-matrix deviation inside the final
    bound, the usual practical shortcut. A vacuous or degenerate bound is
    reported as ``delta_off = inf`` with the ``vacuous`` flag rather than
    raised, so downstream policies fall back to full-dimensional behavior.
    """
    if bound_kind not in BOUND_KINDS:
        raise ValidationError(f"bound_kind must be one of {BOUND_KINDS}")
    if bound_kind == "external" and external_bounds is None:
        raise ValidationError("bound_kind='external' needs external_bounds=(delta_m, delta_d)")
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("dataset must contain at least one trajectory")
    d_a = dataset[0].d_a
    if not 1 <= d_k <= d_a:
        raise ValidationError(f"need 1 <= d_k <= d_a, got d_a={d_a}, d_k={d_k}")

    summary = build_moments(dataset, mu, variant)
    h_max = max(t.h for t in dataset)

    w1 = np.linalg.eigvalsh(summary.d_bar_1)
    w2 = np.linalg.eigvalsh(summary.d_bar_2)
    min_eig = min(w1[0], w2[0])
    if min_eig <= SINGULAR_TOL:
        hint = (
            "consider the pseudoinverse variant"
            if variant == "regularized"
            else "the offline data does not cover all feature directions"
        )
        raise NearSingularCorrectionError(
            f"correction matrix is near singular (min eigenvalue {min_eig:.3e}); {hint}"
        )
    b_d = 1.0 / min_eig

    target = np.linalg.solve(summary.d_bar_1, summary.m_bar)
    target = np.linalg.solve(summary.d_bar_2, target.T).T
    target = 0.5 * (target + target.T)
    eigvals, eigvecs = np.linalg.eigh(target)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    u_hat = np.array(
        [v if v[np.argmax(np.abs(v))] >= 0 else -v for v in eigvecs[:, :d_k].T]
    ).T
    u_hat = np.ascontiguousarray(u_hat)

    m_spec = np.sort(np.linalg.eigvalsh(summary.m_bar))[::-1]
    lambda_hat = float(m_spec[d_k - 1] - (m_spec[d_k] if d_k < d_a else 0.0))

    delta_m, delta_d = _deviation_bounds(
        summary, bound_kind, delta, reward_bound, h_max, mu, external_bounds
    )

    vacuous = False
    if lambda_hat <= GAP_TOL:
        delta_off = math.inf
        vacuous = True
    else:
        try:
            delta_off = compute_delta_off(
                delta_m, 0.0 if simplified else delta_d, b_d, lambda_hat, d_k, reward_bound
            )
        except (VacuousBoundError, DegenerateGapError):
            delta_off = math.inf
            vacuous = True

    return SubspaceEstimate(
        u_hat=u_hat,
        delta_off=float(delta_off),
        eigenvalues=eigvals,
        bound_inputs=BoundInputs(
            delta_m=float(delta_m),
            delta_d=float(delta_d),
            b_d=float(b_d),
            lambda_hat=lambda_hat,
            r=float(reward_bound),
        ),
        vacuous=vacuous,
    )


def _deviation_bounds(summary, bound_kind, delta, r, h, mu, external_bounds):
    if bound_kind == "external":
        delta_m, delta_d = external_bounds
        return float(delta_m), float(delta_d)
    delta_d = bound_delta_d(summary.n, summary.d_a, delta)
    if bound_kind == "empirical_bernstein":
        if summary.variant == "regularized":
            delta_m = bound_delta_m(summary, delta, r, h, mu)
        else:
            # No boundedness factor is available without regularization;
            # keep the variance term of the Bernstein bound alone.
            log_term = math.log(4.0 * summary.d_a / delta)
            delta_m = math.sqrt(2.0 * summary.m_list_sq_norm * log_term / summary.n)
    else:
        bound_m = (
            r * r * (2.0 + h / (2.0 * mu))
            if summary.variant == "regularized"
            else summary.m_max_norm
        )
        delta_m = bound_m * math.sqrt(8.0 * math.log(4.0 * summary.d_a / delta) / summary.n)
    return float(delta_m), delta_d


def estimate_rank(eigenvalues, rel_threshold):
    """Count the eigenvalues that are significant relative to the largest."""
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    if eigenvalues.size == 0:
        raise ValidationError("eigenvalue list must be nonempty")
    if np.any(np.diff(eigenvalues) > 0):
        raise ValidationError("eigenvalues must be sorted descending")
    if not 0.0 < rel_threshold < 1.0:
        raise ValidationError("rel_threshold must lie in (0, 1)")
    top = eigenvalues[0]
    if top <= 0.0:
        return 0
    return int(np.sum(eigenvalues >= rel_threshold * top))


def estimate_to_dict(estimate):
    return {
        "d_a": estimate.d_a,
        "d_k": estimate.d_k,
        "u_hat": estimate.u_hat.reshape(-1).tolist(),
        "delta_off": estimate.delta_off,
        "eigenvalues": estimate.eigenvalues.tolist(),
        "bound_inputs": {
            "delta_m": estimate.bound_inputs.delta_m,
            "delta_d": estimate.bound_inputs.delta_d,
            "b_d": estimate.bound_inputs.b_d,
            "lambda_hat": estimate.bound_inputs.lambda_hat,
            "r": estimate.bound_inputs.r,
        },
        "vacuous": estimate.vacuous,
    }


def estimate_from_dict(doc):
    d_a, d_k = int(doc["d_a"]), int(doc["d_k"])
    bi = doc["bound_inputs"]
    return SubspaceEstimate(
        u_hat=np.asarray(doc["u_hat"], dtype=np.float64).reshape(d_a, d_k),
        delta_off=float(doc["delta_off"]),
        eigenvalues=np.asarray(doc["eigenvalues"], dtype=np.float64),
        bound_inputs=BoundInputs(
            delta_m=float(bi["delta_m"]),
            delta_d=float(bi["delta_d"]),
            b_d=float(bi["b_d"]),
            lambda_hat=float(bi["lambda_hat"]),
            r=float(bi["r"]),
        ),
        vacuous=bool(doc.get("vacuous", False)),
    )


def save_estimate(estimate, path):
    # json emits the +inf sentinel as the (python-readable) token Infinity.
    with open(path, "w", newline="\n") as fh:
        json.dump(estimate_to_dict(estimate), fh, indent=2)
        fh.write("\n")


def load_estimate(path):
    with open(path) as fh:
        return estimate_from_dict(json.load(fh))
