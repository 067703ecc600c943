"""Hot-kernel backend selection.

The compiled Cython core is preferred when it imported cleanly; the numpy
reference in ``pyref`` is the fallback. ``LATENTBANDITS_BACKEND=python``
forces the fallback, ``=compiled`` insists on the extension.
"""

import os

from . import pyref

try:
    from . import _speedups
except ImportError:
    _speedups = None

_BACKENDS = {"python": pyref}
if _speedups is not None:
    _BACKENDS["compiled"] = _speedups

_active = None


def available_backends():
    """Names of importable backends, fallback first."""
    return list(_BACKENDS)


def use_backend(name):
    """Switch the active backend; returns the backend module."""
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown or unavailable backend {name!r}; have {list(_BACKENDS)}"
        ) from None
    return _active


def active_backend():
    """Name of the backend currently in use."""
    return _active.BACKEND


_requested = os.environ.get("LATENTBANDITS_BACKEND")
if _requested:
    use_backend(_requested)
else:
    use_backend("compiled" if _speedups is not None else "python")


def rank_one_update(a, x):
    _active.rank_one_update(a, x)


def sherman_morrison_update(a_inv, x):
    _active.sherman_morrison_update(a_inv, x)


def quad_forms(a, xs):
    return _active.quad_forms(a, xs)


def ucb_scores(xs, beta, a_inv, alpha):
    return _active.ucb_scores(xs, beta, a_inv, alpha)


def projected_stats_update(c, gram_cc, psi, phi):
    _active.projected_stats_update(c, gram_cc, psi, phi)
