"""Numpy reference implementation of the per-step hot kernels.

Mirrors ``_speedups.pyx`` function for function; the selector in
``__init__`` falls back to this module when the compiled core is absent.
All matrices are float64, C-contiguous, and updated in place.
"""

import numpy as np

BACKEND = "python"


def rank_one_update(a, x):
    """a += x xᵀ for symmetric a, in place."""
    a += np.outer(x, x)


def sherman_morrison_update(a_inv, x):
    """Update a_inv in place to track a += x xᵀ."""
    u = a_inv @ x
    denom = 1.0 + float(x @ u)
    a_inv -= np.outer(u, u) / denom


def quad_forms(a, xs):
    """Return xs[i] @ a @ xs[i] for each row of xs."""
    return np.einsum("ij,jk,ik->i", xs, a, xs)


def ucb_scores(xs, beta, a_inv, alpha):
    """Return xs @ beta + alpha * sqrt(max(xs[i] @ a_inv @ xs[i], 0))."""
    bonus = np.sqrt(np.maximum(quad_forms(a_inv, xs), 0.0))
    return xs @ beta + alpha * bonus


def projected_stats_update(c, gram_cc, psi, phi):
    """Track c += psi phiᵀ and keep gram_cc = c cᵀ, both in place."""
    w = c @ phi
    gram_cc += np.outer(psi, w) + np.outer(w, psi)
    gram_cc += float(phi @ phi) * np.outer(psi, psi)
    c += np.outer(psi, phi)
