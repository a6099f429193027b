"""Correlation lower bounds for comonotone functions and an absolute-difference
lower bound from the second and fourth central moments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InputError

MAX_EXACT_SUPPORT = 10_000


@dataclass(frozen=True)
class DiscreteJoint:
    """A finite random variable ``X`` with two functions evaluated on it."""

    support: Sequence
    probs: Sequence[float]
    f: Callable
    g: Callable

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) != len(self.support) or len(p) == 0:
            raise InputError("probs must match the support")
        if np.any(p < 0):
            raise InputError("probabilities must be nonnegative")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise InputError(f"probabilities sum to {math.fsum(p)!r}, not 1")

    def values(self):
        fv = np.array([float(self.f(x)) for x in self.support])
        gv = np.array([float(self.g(x)) for x in self.support])
        return np.asarray(self.probs, dtype=float), fv, gv


def check_comonotone(fv, gv, tol: float = 0.0):
    """Return ``None`` or the first index pair ``(i, j)`` where f and g move apart."""
    prod = np.subtract.outer(fv, fv) * np.subtract.outer(gv, gv)
    bad = np.argwhere(prod < -tol)
    return None if len(bad) == 0 else (int(bad[0, 0]), int(bad[0, 1]))


def _next_level(p, h):
    """``h_next(x) = E_y[(h(x) - h(y)) 1{h(y) < h(x)}]`` on a finite support."""
    diff = np.subtract.outer(h, h)
    return np.sum(np.where(diff > 0, diff, 0.0) * p[None, :], axis=1)


def chebyshev_lower_bound(dist: DiscreteJoint, K: int):
    """Exact ``E[f g]`` and its ``K``-term lower bound ``sum_i E[f_i] E[g_i]``.

    Returns ``(lhs, bound, terms)`` with ``terms[i-1] = E[f_i] E[g_i]``.
    """
    if K < 1:
        raise InputError("K must be at least 1")
    p, f, g = dist.values()
    if len(p) > MAX_EXACT_SUPPORT:
        raise InputError(f"exact path supports at most {MAX_EXACT_SUPPORT} points")
    pair = check_comonotone(f, g)
    if pair is not None:
        i, j = pair
        raise InputError(
            "f and g are not non-negatively correlated: "
            f"points {dist.support[i]!r} and {dist.support[j]!r} give "
            f"f=({f[i]!r}, {f[j]!r}), g=({g[i]!r}, {g[j]!r})"
        )
    lhs = float(np.dot(p, f * g))
    terms = []
    fi, gi = f, g
    for _ in range(K):
        terms.append(float(np.dot(p, fi)) * float(np.dot(p, gi)))
        fi, gi = _next_level(p, fi), _next_level(p, gi)
    return lhs, math.fsum(terms), terms


def chebyshev_bound_mc(f: Callable, g: Callable, sampler: Callable, n: int, seed: int):
    """Two-term bound ``E f E g + E|f(X)-f(Y)| E|g(X)-g(Y)| / 4`` by paired sampling.

    ``sampler(rng, n)`` returns ``n`` draws of ``X``. Returns ``(bound, std_error)``;
    the error comes from the delta method on the four sample means.
    """
    from .algorithms import trial_rng

    rng = trial_rng(seed)
    x = sampler(rng, n)
    y = sampler(rng, n)
    fx, fy, gx, gy = f(x), f(y), g(x), g(y)
    cols = np.stack([fx, gx, np.abs(fx - fy), np.abs(gx - gy)])
    m = cols.mean(axis=1)
    cov = np.cov(cols) / n
    bound = m[0] * m[1] + 0.25 * m[2] * m[3]
    grad = np.array([m[1], m[0], 0.25 * m[3], 0.25 * m[2]])
    return float(bound), float(math.sqrt(max(grad @ cov @ grad, 0.0)))


@dataclass(frozen=True)
class MomentSummary:
    mu1: float
    mu2: float
    mu4: float

    def __post_init__(self):
        if self.mu2 < 0:
            raise InputError("variance must be nonnegative")
        # plug-in moments satisfy mu4 >= mu2^2 only up to rounding
        if self.mu4 < self.mu2**2 * (1 - 1e-12) - 1e-300:
            raise InputError(f"need mu4 >= mu2^2, got mu2={self.mu2}, mu4={self.mu4}")


def fourth_moment_lower_bound(m: MomentSummary) -> float:
    """Lower bound ``2 sqrt(mu2^3 / (mu4 + 3 mu2^2))`` on ``E|Y - Y'|`` for iid copies."""
    if m.mu2 == 0:
        return 0.0
    return 2.0 * math.sqrt(m.mu2**3 / (m.mu4 + 3.0 * m.mu2**2))


def estimate_moments(samples) -> MomentSummary:
    """Mean, variance with the ``n - 1`` divisor, and plug-in fourth central moment."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise InputError("need at least two samples")
    mu1 = float(x.mean())
    c = x - mu1
    mu2 = float(np.dot(c, c) / (x.size - 1))
    mu4 = float(np.mean(c**4))
    # the unbiased variance can exceed the plug-in one; keep the Jensen invariant
    mu4 = max(mu4, mu2**2) if mu2 > 0 else mu4
    return MomentSummary(mu1, mu2, mu4)
