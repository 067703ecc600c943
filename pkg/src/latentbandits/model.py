"""Linear latent contextual bandit environments and trajectory sampling.

A model holds an orthonormal map ``u_star`` from a low-dimensional latent
state to the reward parameter, the latent distribution, the noise level,
and a feature universe. Offline logging and online interaction both draw
from the same primitives here; estimators never see the hidden latent
state (it is carried on trajectories for diagnostics only).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ValidationError

ORTHO_TOL = 1e-10
UNIT_TOL = 1e-12

# SeedSequence stream ids, fixed so adding one consumer never shifts another.
STREAM_MODEL = 0
STREAM_THETA = 1
STREAM_ROUNDS = 2
STREAM_NOISE = 3
STREAM_POLICY = 4
STREAM_OFFLINE = 5


def stream_rng(seed, stream, *extra):
    """Independent generator for one purpose within one seeded run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), *map(int, extra)]))


def truncated_gaussian(rng, sigma, size):
    """Mean-zero gaussian draws truncated to [-3*sigma, 3*sigma].

    Inverse-cdf sampling, so exactly one uniform is consumed per draw.
    """
    if sigma == 0.0:
        return np.zeros(size)
    lo, hi = ndtr(-3.0), ndtr(3.0)
    u = rng.random(size)
    return sigma * ndtri(lo + u * (hi - lo))


class FeatureUniverse:
    """Finite set of unit-norm feature vectors, or a fresh-draw generator.

    ``gaussian`` draws standard normal vectors normalized to unit norm,
    fresh at every step; ``finite`` samples from an explicit list.
    """

    def __init__(self, d_a, vectors=None):
        self.d_a = int(d_a)
        if vectors is None:
            self.vectors = None
        else:
            vectors = np.asarray(vectors, dtype=np.float64)
            if vectors.ndim != 2 or vectors.shape[1] != self.d_a:
                raise ValidationError("universe vectors must be (m, d_a)")
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(norms > 1.0 + UNIT_TOL):
                raise ValidationError("universe vectors must lie in the unit ball")
            self.vectors = vectors

    @property
    def kind(self):
        return "finite" if self.vectors is not None else "gaussian"

    def draw(self, rng, size):
        """(size, d_a) features drawn i.i.d. from the universe."""
        if self.vectors is not None:
            idx = rng.integers(self.vectors.shape[0], size=size)
            return self.vectors[idx].copy()
        raw = rng.standard_normal((size, self.d_a))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return raw / norms

    def draw_weighted(self, rng, size, weights):
        if self.vectors is None:
            raise ValidationError("weighted draws need a finite universe")
        idx = rng.choice(self.vectors.shape[0], size=size, p=weights)
        return self.vectors[idx].copy()


class UniformPolicy:
    """Logging policy: uniform over the universe. Takes no latent state."""

    def draw_features(self, universe, rng, size):
        return universe.draw(rng, size)


class FixedDistributionPolicy:
    """Logging policy with fixed per-vector weights over a finite universe."""

    def __init__(self, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
            raise ValidationError("weights must be a probability vector")
        self.weights = weights

    def draw_features(self, universe, rng, size):
        return universe.draw_weighted(rng, size, self.weights)


@dataclass(frozen=True)
class LatentLinearBandit:
    """Ground-truth environment for one experiment."""

    u_star: np.ndarray            # (d_a, d_k), orthonormal columns
    theta_mean: np.ndarray        # (d_k,)
    theta_cov: np.ndarray         # (d_k, d_k), PSD
    noise_std: float
    reward_bound: float
    feature_universe: FeatureUniverse
    seed: int | None = None

    def __post_init__(self):
        u = np.ascontiguousarray(self.u_star, dtype=np.float64)
        object.__setattr__(self, "u_star", u)
        object.__setattr__(self, "theta_mean", np.asarray(self.theta_mean, dtype=np.float64))
        object.__setattr__(self, "theta_cov", np.asarray(self.theta_cov, dtype=np.float64))
        d_a, d_k = u.shape
        if not 1 <= d_k <= d_a:
            raise ValidationError(f"need 1 <= d_k <= d_a, got d_a={d_a}, d_k={d_k}")
        gram = u.T @ u
        if np.max(np.abs(gram - np.eye(d_k))) > ORTHO_TOL:
            raise ValidationError("u_star columns are not orthonormal")
        if self.theta_mean.shape != (d_k,) or self.theta_cov.shape != (d_k, d_k):
            raise ValidationError("latent distribution dims do not match d_k")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be nonnegative")
        if self.reward_bound <= 0:
            raise ValidationError("reward_bound must be positive")
        if self.noise_std > self.reward_bound:
            raise ValidationError("noise_std must not exceed reward_bound")
        if self.feature_universe.d_a != d_a:
            raise ValidationError("feature universe dimension mismatch")

    @property
    def d_a(self):
        return self.u_star.shape[0]

    @property
    def d_k(self):
        return self.u_star.shape[1]

    def beta(self, theta):
        """Reward parameter for a latent state."""
        return self.u_star @ np.asarray(theta, dtype=np.float64)


@dataclass(frozen=True)
class Trajectory:
    """One logged episode: H (feature, reward) pairs under one hidden state.

    ``hidden_theta`` is diagnostics-only; estimator code never reads it.
    """

    features: np.ndarray          # (h, d_a)
    rewards: np.ndarray           # (h,)
    hidden_theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", np.ascontiguousarray(self.features, dtype=np.float64))
        object.__setattr__(self, "rewards", np.ascontiguousarray(self.rewards, dtype=np.float64))
        if self.features.ndim != 2 or self.rewards.shape != (self.features.shape[0],):
            raise ValidationError("trajectory arrays are inconsistent")
        if self.h < 2:
            raise ValidationError("trajectories must have at least 2 steps")

    @property
    def h(self):
        return self.features.shape[0]

    @property
    def d_a(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class ActionRound:
    """The arms available at one online step."""

    features: np.ndarray          # (k, d_a)

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValidationError("a round needs at least one arm")
        norms = np.linalg.norm(feats, axis=1)
        if np.any(norms > 1.0 + UNIT_TOL):
            raise ValidationError("arm features must lie in the unit ball")

    @property
    def k(self):
        return self.features.shape[0]


def synth_model(d_a, d_k, noise_std, seed, reward_bound=1.0):
    """Synthetic instance: uniform-entry map orthonormalized by QR.

    Entries are drawn Unif(0, 2.5/(d_k*d_a)), columns orthonormalized with
    the sign of each column fixed so its first nonzero entry is positive.
    The latent distribution is N(0, I/d_k); features come from the
    fresh-gaussian universe. Same seed gives a bit-identical model.
    """
    if not (isinstance(d_a, (int, np.integer)) and isinstance(d_k, (int, np.integer))):
        raise ValidationError("d_a and d_k must be integers")
    if not 1 <= d_k <= d_a:
        raise ValidationError(f"need 1 <= d_k <= d_a, got d_a={d_a}, d_k={d_k}")
    if noise_std < 0:
        raise ValidationError("noise_std must be nonnegative")
    rng = stream_rng(seed, STREAM_MODEL)
    raw = rng.uniform(0.0, 2.5 / (d_k * d_a), size=(d_a, d_k))
    q, _ = np.linalg.qr(raw)
    u_star = fix_column_signs(q[:, :d_k])
    return LatentLinearBandit(
        u_star=u_star,
        theta_mean=np.zeros(d_k),
        theta_cov=np.eye(d_k) / d_k,
        noise_std=float(noise_std),
        reward_bound=float(reward_bound),
        feature_universe=FeatureUniverse(d_a),
        seed=int(seed),
    )


def fix_column_signs(u, tol=1e-12):
    """Flip columns so each one's first entry above tol is positive."""
    u = np.array(u, dtype=np.float64)
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.nonzero(np.abs(col) > tol)[0]
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
    return u


def psd_sqrt(mat):
    """Symmetric square root of a PSD matrix (eigh, negatives clipped)."""
    w, v = np.linalg.eigh(np.asarray(mat, dtype=np.float64))
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sample_theta(model, rng):
    """One latent-state draw from N(theta_mean, theta_cov)."""
    z = rng.standard_normal(model.d_k)
    return model.theta_mean + psd_sqrt(model.theta_cov) @ z


def sample_trajectory(model, theta, policy, h, rng):
    """Log one episode of length h under a behavior policy.

    Rewards are phi' (u_star theta) plus gaussian noise truncated at three
    standard deviations. The policy draws features without seeing theta.
    """
    if h < 2:
        raise ValidationError("h must be at least 2 (odd/even splitting needs two halves)")
    theta = np.asarray(theta, dtype=np.float64)
    beta = model.beta(theta)
    features = policy.draw_features(model.feature_universe, rng, h)
    noise = truncated_gaussian(rng, model.noise_std, h)
    rewards = features @ beta + noise
    return Trajectory(features=features, rewards=rewards, hidden_theta=theta.copy())


def best_arm_value(beta, action_round):
    """Index and value of the best arm; lowest index wins ties."""
    values = action_round.features @ np.asarray(beta, dtype=np.float64)
    idx = int(np.argmax(values))
    return idx, float(values[idx])


def model_to_dict(model):
    return {
        "d_a": model.d_a,
        "d_k": model.d_k,
        "noise_std": model.noise_std,
        "reward_bound": model.reward_bound,
        "seed": model.seed,
        "u_star": model.u_star.reshape(-1).tolist(),
    }


def model_from_dict(doc):
    d_a, d_k = int(doc["d_a"]), int(doc["d_k"])
    u_star = np.asarray(doc["u_star"], dtype=np.float64).reshape(d_a, d_k)
    return LatentLinearBandit(
        u_star=u_star,
        theta_mean=np.zeros(d_k),
        theta_cov=np.eye(d_k) / d_k,
        noise_std=float(doc["noise_std"]),
        reward_bound=float(doc["reward_bound"]),
        feature_universe=FeatureUniverse(d_a),
        seed=None if doc.get("seed") is None else int(doc["seed"]),
    )


def save_model(model, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
