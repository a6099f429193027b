"""Rank-based weights and the utility functions they induce.

Candidates are ranked by objective value (minimization). A candidate with
``k`` strictly better competitors and ``l`` tied competitors receives the
average of the base weights ``w[k], ..., w[k+l]`` (zero-based), so ties split
their block of weights evenly and the total always equals ``sum(w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class WeightScheme:
    """Population size and nonincreasing base weights ``w_1 >= ... >= w_lambda``."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) < 2:
            raise InputError("a weight scheme needs at least two weights")
        if any(not math.isfinite(x) for x in w):
            raise InputError("weights must be finite")
        if any(a < b for a, b in zip(w, w[1:])):
            raise InputError(f"weights must be nonincreasing, got {w}")

    @property
    def lam(self) -> int:
        return len(self.weights)

    @property
    def total(self) -> float:
        return math.fsum(self.weights)

    @property
    def is_strict(self) -> bool:
        """True when ``w_1 > w_lambda``; required for a nonconstant utility."""
        return self.weights[0] > self.weights[-1]

    @property
    def nonnegative(self) -> bool:
        return self.weights[-1] >= 0.0

    def max_alpha(self) -> float:
        """Supremum of step sizes for which the iterates provably stay in the domain."""
        if not self.nonnegative:
            raise InputError("domain-stay bound only holds for nonnegative weights")
        return 1.0 / self.total

    @classmethod
    def truncation(cls, lam: int, mu: int) -> "WeightScheme":
        """Equal weights ``1/mu`` on the ``mu`` best candidates, zero elsewhere."""
        if not 1 <= mu <= lam:
            raise InputError("need 1 <= mu <= lam")
        return cls(tuple([1.0 / mu] * mu + [0.0] * (lam - mu)))

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "weights": list(self.weights)}


def assign_weights(fvalues, scheme: WeightScheme) -> np.ndarray:
    """Weight assigned to each candidate given its objective value.

    ``fvalues`` may carry leading batch axes; the last axis must have length
    ``scheme.lam``. Ties are detected by exact equality.
    """
    f = np.asarray(fvalues, dtype=float)
    if f.ndim == 0 or f.shape[-1] != scheme.lam:
        raise InputError(
            f"expected {scheme.lam} objective values on the last axis, got shape {f.shape}"
        )
    if np.isnan(f).any():
        raise InputError("objective values must not be NaN")
    fi = f[..., :, None]
    fj = f[..., None, :]
    k = np.count_nonzero(fj < fi, axis=-1)
    l = np.count_nonzero(fj == fi, axis=-1) - 1
    cum = np.concatenate(([0.0], np.cumsum(scheme.weights)))
    return (cum[k + l + 1] - cum[k]) / (l + 1)


def _tie_average(scheme: WeightScheme, k: int, l: int) -> float:
    return math.fsum(scheme.weights[k : k + l + 1]) / (l + 1)


def utility_tri(p: float, q: float, scheme: WeightScheme, tol: float = 1e-12) -> float:
    """Expected weight (times lambda) of a point that is beaten with probability
    ``p`` and tied with probability ``q`` by each independent competitor."""
    p = float(p)
    q = float(q)
    if p < 0 or q < 0 or p + q > 1 + tol:
        raise InputError(f"need p, q >= 0 and p + q <= 1, got p={p}, q={q}")
    r = max(0.0, 1.0 - p - q)
    n = scheme.lam - 1
    total = 0.0
    for k in range(n + 1):
        for l in range(n - k + 1):
            # math.comb is exact for the population sizes used here
            mass = math.comb(n, k) * math.comb(n - k, l) * p**k * q**l * r ** (n - k - l)
            if mass:
                total += _tie_average(scheme, k, l) * mass
    return scheme.lam * total


def utility_bin(p, scheme: WeightScheme):
    """Tie-free utility ``u(p) = sum_k w_{k+1} lambda P_B(lambda-1, k, p)``.

    Accepts a scalar or an array of probabilities.
    """
    parr = np.asarray(p, dtype=float)
    if np.any(parr < 0) or np.any(parr > 1) or np.isnan(parr).any():
        raise InputError("p must lie in [0, 1]")
    n = scheme.lam - 1
    out = np.zeros_like(parr)
    q = 1.0 - parr
    for k, wk in enumerate(scheme.weights):
        if wk:
            out = out + wk * math.comb(n, k) * parr**k * q ** (n - k)
    out = scheme.lam * out
    return float(out) if np.ndim(p) == 0 else out
