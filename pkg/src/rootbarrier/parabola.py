"""Closed-form stopping apparatus for a parabolic barrier.

For Brownian motion stopped at the barrier R(x) = -lam (x + alpha)(x - beta)
on (-alpha, beta) (zero outside), with the convex payoff F(t) = t^2 / 2 of
the stopping time, every ingredient of the subhedge construction has an
explicit formula.  These functions are the golden reference that the
numerical pipeline is validated against; the default parameters are
alpha = 2, beta = 3, lam = 1/2.

Paths land on the boundary, so tau = R(X_tau) pathwise; optional stopping
then gives E tau = lam * alpha * beta / (1 + lam), an identity the tests
lean on.
"""

from __future__ import annotations

import numpy as np

DEFAULT_ALPHA = 2.0
DEFAULT_BETA = 3.0
DEFAULT_LAM = 0.5

__all__ = [
    "barrier_fn", "M_exact", "Z_exact", "G_exact", "H_exact",
    "gap_exact", "mean_stop_time",
]


def barrier_fn(x, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    """R(x) = -lam (x+alpha)(x-beta) inside (-alpha, beta), else 0."""
    x = np.asarray(x, dtype=float)
    r = -lam * (x + alpha) * (x - beta)
    return np.where((x > -alpha) & (x < beta), r, 0.0)


def M_exact(x, t, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    """Expected stopping payoff derivative E^{(x,t)} tau for f(s) = s."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r = barrier_fn(x, alpha, beta, lam)
    free = lam / (1.0 + lam) * (t - (x + alpha) * (x - beta))
    return np.where(t < r, free, t)


def Z_exact(x, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    """Convex second antiderivative of 2 M(.,0); zero slope and value at 0."""
    x = np.asarray(x, dtype=float)
    c = lam / (6.0 * (1.0 + lam))
    mid = -x**4 - 2.0 * (alpha - beta) * x**3 + 6.0 * alpha * beta * x**2
    hi = -beta**4 - 2.0 * alpha * beta**3 + (2.0 * beta**3 + 6.0 * alpha * beta**2) * x
    lo = -alpha**4 - 2.0 * alpha**3 * beta - (2.0 * alpha**3 + 6.0 * alpha**2 * beta) * x
    out = np.where(x >= beta, hi, np.where(x <= -alpha, lo, mid))
    return c * out


def G_exact(x, t, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r = barrier_fn(x, alpha, beta, lam)
    z = Z_exact(x, alpha, beta, lam)
    free = lam / (1.0 + lam) * (0.5 * t**2 - t * (x + alpha) * (x - beta)) - z
    hit = r**2 / (2.0 * (1.0 + lam)) + 0.5 * t**2 - z
    return np.where(t < r, free, hit)


def H_exact(x, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    x = np.asarray(x, dtype=float)
    r = barrier_fn(x, alpha, beta, lam)
    return -(r**2) / (2.0 * (1.0 + lam)) + Z_exact(x, alpha, beta, lam)


def gap_exact(x, t, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    """G + H - F: equals -[R(x)-t]^2 / (2(1+lam)) before the barrier, 0 after."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r = barrier_fn(x, alpha, beta, lam)
    return np.where(t < r, -((r - t) ** 2) / (2.0 * (1.0 + lam)), 0.0)


def mean_stop_time(alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, lam=DEFAULT_LAM):
    """E tau = lam alpha beta / (1 + lam) by optional stopping."""
    return lam * alpha * beta / (1.0 + lam)
