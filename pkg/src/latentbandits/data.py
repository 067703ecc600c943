"""Ratings ingest and factorization for the recommendation experiment.

Reads a `UserID::MovieID::Rating::Timestamp` ratings file, filters users
and items below a rating-count threshold, factorizes the observed entries
with L2-regularized alternating least squares, and exposes the factors in
the same JSON layout as the synthetic model so the experiment harness
treats both scenarios uniformly. A seeded synthetic ratings generator
stands in when the real corpus is absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EmptyFilterError, FormatError, NumericalError, ValidationError
from .model import fix_column_signs

RATING_MIN, RATING_MAX = 0.5, 5.0
MALFORMED_LIMIT = 0.01


@dataclass(frozen=True)
class RatingsTable:
    """Deduplicated (user, item, rating) triples with dense ids."""

    user_ids: np.ndarray          # (n_ratings,) int
    item_ids: np.ndarray          # (n_ratings,) int
    ratings: np.ndarray           # (n_ratings,) float
    user_count: int
    item_count: int

    def __post_init__(self):
        if not (len(self.user_ids) == len(self.item_ids) == len(self.ratings)):
            raise ValidationError("ratings columns must have equal length")
        if len(self.user_ids):
            if self.user_ids.max() >= self.user_count or self.item_ids.max() >= self.item_count:
                raise ValidationError("ids are not dense")
            if np.any(self.ratings < RATING_MIN) or np.any(self.ratings > RATING_MAX):
                raise ValidationError(f"ratings must lie in [{RATING_MIN}, {RATING_MAX}]")

    def __len__(self):
        return len(self.ratings)


@dataclass(frozen=True)
class FactorModel:
    """User and item parameters fitted to the rating matrix."""

    user_factors: np.ndarray      # (n_users, d_a)
    item_factors: np.ndarray      # (d_a, n_items)
    rank_used: int
    singular_values: np.ndarray   # of user_factors, descending
    synthetic_fallback: bool = False

    def __post_init__(self):
        col_norms = np.linalg.norm(self.item_factors, axis=0)
        if col_norms.size and col_norms.max() > 1.0 + 1e-9:
            raise ValidationError("item columns must be normalized into the unit ball")

    @property
    def d_a(self):
        return self.user_factors.shape[1]

    @property
    def n_users(self):
        return self.user_factors.shape[0]

    @property
    def n_items(self):
        return self.item_factors.shape[1]

    @property
    def reward_bound(self):
        return float(np.linalg.norm(self.user_factors, axis=1).max())

    def latent_basis(self, d_k):
        """Top right-singular basis of the user rows: the latent subspace."""
        _, _, vt = np.linalg.svd(self.user_factors, full_matrices=False)
        return fix_column_signs(vt[:d_k].T)


def _build_table(users, items, ratings):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    uniq_users, dense_users = np.unique(users, return_inverse=True)
    uniq_items, dense_items = np.unique(items, return_inverse=True)
    return RatingsTable(
        user_ids=dense_users,
        item_ids=dense_items,
        ratings=ratings,
        user_count=len(uniq_users),
        item_count=len(uniq_items),
    )


def load_ratings(path):
    """Parse a double-colon delimited ratings file.

    Malformed lines (wrong field count, non-numeric fields, out-of-range
    ratings, duplicate user/item pairs) are skipped and counted; more than
    1% of them fails the whole file.
    """
    users, items, ratings = [], [], []
    seen = set()
    malformed = 0
    total = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            total += 1
            parts = line.split("::")
            if len(parts) != 4:
                malformed += 1
                continue
            try:
                user = int(parts[0])
                item = int(parts[1])
                rating = float(parts[2])
            except ValueError:
                malformed += 1
                continue
            if not RATING_MIN <= rating <= RATING_MAX or (user, item) in seen:
                malformed += 1
                continue
            seen.add((user, item))
            users.append(user)
            items.append(item)
            ratings.append(rating)
    if total == 0:
        raise FormatError(f"{path}: no rating lines found")
    if malformed > MALFORMED_LIMIT * total:
        raise FormatError(
            f"{path}: {malformed}/{total} malformed lines exceeds the 1% limit"
        )
    return _build_table(users, items, ratings)


def filter_min_counts(table, min_per_movie, min_per_user):
    """Drop under-threshold users and items until a fixpoint, then reindex."""
    if min_per_movie < 0 or min_per_user < 0:
        raise ValidationError("thresholds must be nonnegative")
    users, items, ratings = table.user_ids, table.item_ids, table.ratings
    while True:
        if len(ratings) == 0:
            raise EmptyFilterError("filtering removed every rating")
        item_counts = np.bincount(items)
        user_counts = np.bincount(users)
        keep = (item_counts[items] >= min_per_movie) & (user_counts[users] >= min_per_user)
        if keep.all():
            break
        users, items, ratings = users[keep], items[keep], ratings[keep]
    return _build_table(users, items, ratings)


def als_factorize(table, rank, reg, sweeps, seed):
    """Alternating ridge solves on the observed entries.

    One sweep refits all user rows against the current item columns, then
    all item columns against the users. The observed-entry RMSE must not
    increase between sweeps. Item columns are scaled into the unit ball at
    the end, with user rows rescaled inversely so predictions are intact.
    """
    if rank > min(table.user_count, table.item_count):
        raise ValidationError("rank exceeds the rating matrix dimensions")
    if sweeps < 1:
        raise ValidationError("need at least one sweep")
    if reg < 0:
        raise ValidationError("reg must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 97]))
    n_users, n_items = table.user_count, table.item_count
    item_factors = rng.standard_normal((rank, n_items)) / np.sqrt(rank)
    user_factors = np.zeros((n_users, rank))

    by_user = _group_indices(table.user_ids, n_users)
    by_item = _group_indices(table.item_ids, n_items)
    eye = np.eye(rank)

    last_rmse = np.inf
    for _ in range(sweeps):
        for i in range(n_users):
            idx = by_user[i]
            if idx.size == 0:
                continue
            phi = item_factors[:, table.item_ids[idx]]
            a = phi @ phi.T + reg * eye
            user_factors[i] = scipy.linalg.solve(
                a, phi @ table.ratings[idx], assume_a="pos", check_finite=False
            )
        for j in range(n_items):
            idx = by_item[j]
            if idx.size == 0:
                continue
            beta = user_factors[table.user_ids[idx]]
            a = beta.T @ beta + reg * eye
            item_factors[:, j] = scipy.linalg.solve(
                a, beta.T @ table.ratings[idx], assume_a="pos", check_finite=False
            )
        if not (np.isfinite(user_factors).all() and np.isfinite(item_factors).all()):
            raise NumericalError("factorization produced non-finite entries")
        pred = np.einsum(
            "nd,dn->n", user_factors[table.user_ids], item_factors[:, table.item_ids]
        )
        rmse = float(np.sqrt(np.mean((pred - table.ratings) ** 2)))
        if rmse > last_rmse + 1e-9:
            raise NumericalError(
                f"observed-entry RMSE increased {last_rmse:.6g} -> {rmse:.6g}"
            )
        last_rmse = rmse

    scale = np.linalg.norm(item_factors, axis=0).max()
    if scale > 0:
        item_factors = item_factors / scale
        user_factors = user_factors * scale
    singular = np.linalg.svd(user_factors, compute_uv=False)
    return FactorModel(
        user_factors=user_factors,
        item_factors=item_factors,
        rank_used=rank,
        singular_values=singular,
    )


def _group_indices(ids, count):
    order = np.argsort(ids, kind="stable")
    boundaries = np.searchsorted(ids[order], np.arange(count + 1))
    return [order[boundaries[i]:boundaries[i + 1]] for i in range(count)]


def build_rounds(factors, k, t_rounds, seed):
    """Per-round arm sets: k distinct item columns sampled uniformly."""
    from .model import ActionRound

    if k > factors.n_items:
        raise ValidationError("k exceeds the catalog size")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 131]))
    rounds = []
    for _ in range(t_rounds):
        idx = rng.choice(factors.n_items, size=k, replace=False)
        rounds.append(ActionRound(features=factors.item_factors[:, idx].T))
    return rounds


def synthetic_ratings(n_users=300, n_items=240, true_rank=4, ratings_per_user=40,
                      noise_std=0.25, seed=0):
    """Low-rank-plus-noise stand-in corpus with MovieLens-like sparsity."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 151]))
    user_latent = rng.standard_normal((n_users, true_rank))
    item_latent = rng.standard_normal((true_rank, n_items)) / np.sqrt(true_rank)
    users, items, values = [], [], []
    for i in range(n_users):
        idx = rng.choice(n_items, size=min(ratings_per_user, n_items), replace=False)
        raw = 3.0 + user_latent[i] @ item_latent[:, idx] + noise_std * rng.standard_normal(idx.size)
        users.extend([i] * idx.size)
        items.extend(idx.tolist())
        values.extend(np.clip(raw, RATING_MIN, RATING_MAX).tolist())
    return _build_table(users, items, values)


def factors_to_dict(factors, d_k, noise_std, seed):
    """Serialize with the synthetic-model field names plus the factor data."""
    u_star = factors.latent_basis(d_k)
    return {
        "d_a": factors.d_a,
        "d_k": int(d_k),
        "noise_std": float(noise_std),
        "reward_bound": factors.reward_bound,
        "seed": None if seed is None else int(seed),
        "u_star": u_star.reshape(-1).tolist(),
        "user_factors": factors.user_factors.reshape(-1).tolist(),
        "item_factors": factors.item_factors.reshape(-1).tolist(),
        "n_users": factors.n_users,
        "n_items": factors.n_items,
        "rank_used": factors.rank_used,
        "singular_values": factors.singular_values.tolist(),
        "synthetic_fallback": factors.synthetic_fallback,
    }


def factors_from_dict(doc):
    n_users, n_items = int(doc["n_users"]), int(doc["n_items"])
    d_a = int(doc["d_a"])
    factors = FactorModel(
        user_factors=np.asarray(doc["user_factors"], dtype=np.float64).reshape(n_users, d_a),
        item_factors=np.asarray(doc["item_factors"], dtype=np.float64).reshape(d_a, n_items),
        rank_used=int(doc["rank_used"]),
        singular_values=np.asarray(doc["singular_values"], dtype=np.float64),
        synthetic_fallback=bool(doc.get("synthetic_fallback", False)),
    )
    meta = {
        "d_k": int(doc["d_k"]),
        "noise_std": float(doc["noise_std"]),
        "reward_bound": float(doc["reward_bound"]),
        "u_star": np.asarray(doc["u_star"], dtype=np.float64).reshape(d_a, int(doc["d_k"])),
        "seed": doc.get("seed"),
    }
    return factors, meta


def save_factors(factors, path, d_k, noise_std, seed=None):
    with open(path, "w", newline="\n") as fh:
        json.dump(factors_to_dict(factors, d_k, noise_std, seed), fh)
        fh.write("\n")


def load_factors(path):
    with open(path) as fh:
        return factors_from_dict(json.load(fh))
