"""Mean field ``F(theta) = E[F_n | theta_n = theta]``: Monte Carlo, exact special
cases, and the sphere constants of the fixed-mean ES."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats as sps

from .algorithms import ES_FIXED, AlgorithmSpec, _draw, _noise_shape, initial_state, trial_rng, update_direction
from .errors import CertificateFailure, InputError
from .ranking import WeightScheme, assign_weights, utility_bin

BATCH = 1 << 15


@dataclass(frozen=True)
class MeanFieldEstimate:
    value: np.ndarray
    std_error: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class EsConstants:
    """Contraction constant ``L`` and normalized second moment ``S`` of the
    fixed-mean ES variance update on a sphere, with Monte-Carlo errors."""

    L: float
    S: float
    L_se: float
    S_se: float
    d: int
    scheme: WeightScheme
    n_samples: int

    @property
    def L_margin(self) -> float:
        """Number of standard errors separating ``L`` from zero."""
        return self.L / self.L_se if self.L_se > 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "S": self.S,
            "L_se": self.L_se,
            "S_se": self.S_se,
            "d": self.d,
            "scheme": self.scheme.to_dict(),
            "n_samples": self.n_samples,
        }


def _batched(n_samples, seed, draw):
    """Yield per-batch arrays from independent per-batch streams, in batch order."""
    for b, start in enumerate(range(0, n_samples, BATCH)):
        size = min(BATCH, n_samples - start)
        yield draw(trial_rng(seed, b), size)


def meanfield_mc(spec: AlgorithmSpec, theta, n_samples: int, seed: int) -> MeanFieldEstimate:
    """Sample mean of ``F_n`` over independent draws at a fixed parameter."""
    if n_samples < 2:
        raise InputError("need at least two samples")
    state = initial_state(spec, theta)
    shape = _noise_shape(spec)
    parts = list(
        _batched(n_samples, seed, lambda g, k: update_direction(spec, state, _draw(g, spec, (k,) + shape)))
    )
    samples = np.concatenate(parts, axis=0)
    value = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return MeanFieldEstimate(value, se, n_samples)


def pbil1_meanfield_exact(theta: float) -> float:
    """Mean field of 1-D PBIL on OneMax with ``lambda=2, w=(1, 0)``."""
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise InputError(f"theta must lie in (0, 1), got {theta}")
    return (1.0 - theta) * theta


def _chi2_cdf(r, d):
    # regularized lower incomplete gamma, accurate to ~1e-15 relative
    return special.gammainc(d / 2.0, r / 2.0)


def es_sphere_constants(d: int, scheme: WeightScheme, n_samples: int, seed: int) -> EsConstants:
    """Monte-Carlo estimates of ``L`` and ``S`` for the fixed-mean ES on a sphere.

    ``L = -E[u(P[|N|^2 < |z|^2]) (|z|^2/d - 1)]`` with ``z ~ N(0, I_d)`` and
    ``S^2 = E[|sum_i W_i (|N_i|^2/d - 1)|^2]`` over ``lambda`` iid normals.
    Raises :class:`CertificateFailure` when ``L`` is negative beyond three
    standard errors.
    """
    if d < 1 or n_samples < 2:
        raise InputError("need d >= 1 and n_samples >= 2")
    lam = scheme.lam

    def draw_l(g, k):
        r = g.chisquare(d, size=k)
        return utility_bin(_chi2_cdf(r, d), scheme) * (r / d - 1.0)

    def draw_s(g, k):
        r = g.chisquare(d, size=(k, lam))
        w = assign_weights(r, scheme)
        return np.sum(w * (r / d - 1.0), axis=-1) ** 2

    lsamp = -np.concatenate(list(_batched(n_samples, 2 * seed, draw_l)))
    ssamp = np.concatenate(list(_batched(n_samples, 2 * seed + 1, draw_s)))
    L = float(lsamp.mean())
    L_se = float(lsamp.std(ddof=1) / math.sqrt(n_samples))
    s2 = float(ssamp.mean())
    s2_se = float(ssamp.std(ddof=1) / math.sqrt(n_samples))
    S = math.sqrt(s2)
    S_se = s2_se / (2.0 * S) if S > 0 else math.inf
    if L < -3.0 * L_se:
        raise CertificateFailure(
            f"estimated L = {L:.6g} is negative ({L / L_se:.1f} standard errors); "
            "the variance mean field does not contract"
        )
    return EsConstants(L, S, L_se, S_se, d, scheme, n_samples)


def es_sphere_L_quadrature(d: int, scheme: WeightScheme) -> float:
    """``L`` by one-dimensional quadrature over the chi-square law of ``|z|^2``.

    Independent of the Monte-Carlo route; used as a cross-check.
    """
    dist = sps.chi2(d)

    def integrand(r):
        return utility_bin(float(_chi2_cdf(r, d)), scheme) * (r / d - 1.0) * dist.pdf(r)

    hi = dist.ppf(1.0 - 1e-14)
    mid = float(d)
    a, _ = integrate.quad(integrand, 0.0, mid, limit=200, epsabs=1e-13, epsrel=1e-11)
    b, _ = integrate.quad(integrand, mid, hi, limit=200, epsabs=1e-13, epsrel=1e-11)
    return -(a + b)


def es_meanfield_exact(v: float, L: float) -> float:
    """Variance mean field ``F(v) = -L v`` of the fixed-mean ES on a sphere."""
    if v <= 0:
        raise InputError("v must be positive")
    return -L * v


def default_meanfield(spec: AlgorithmSpec, L: float = None):
    """Exact mean field as a vector function, where one is known."""
    if spec.kind == "pbil-1d" and spec.scheme.weights == (1.0, 0.0):
        return lambda th: np.asarray(th, dtype=float) * (1.0 - np.asarray(th, dtype=float))
    if spec.kind == ES_FIXED and L is not None:
        return lambda v: -L * np.asarray(v, dtype=float)
    raise InputError(f"no closed-form mean field for {spec.kind} with {spec.scheme.weights}")


@dataclass(frozen=True)
class PositivityCertificate:
    """Two-term lower bound on ``L`` for a comonotone pair ``(u(F(r)), 1 - r/d)``."""

    bound: float
    utility_spread: float  # E|u(U) - u(U')| for independent uniforms
    chi2_spread_lower: float  # fourth-moment lower bound on E|r/d - r'/d|

    @property
    def positive(self) -> bool:
        return self.bound > 0


def es_L_positivity_certificate(d: int, scheme: WeightScheme) -> PositivityCertificate:
    """Lower bound ``L >= E|u(U)-u(U')| E|Y-Y'| / 4`` with ``Y = r/d``.

    ``u(F(r))`` and ``1 - r/d`` are both nonincreasing in ``r`` and the second
    has mean zero, so only the second Chebyshev term survives. ``F(r)`` is
    uniform, which gives the first factor by quadrature; the second is bounded
    below through the moments ``mu2 = 2/d`` and ``mu4 = 12(d+4)/d^3``.
    """
    from .stats import MomentSummary, fourth_moment_lower_bound

    # for nonincreasing u: E|u(U) - u(U')| = 2 int_0^1 u(a)(1 - 2a) da
    spread, _ = integrate.quad(lambda a: utility_bin(a, scheme) * (1.0 - 2.0 * a), 0.0, 1.0, epsabs=1e-14)
    spread *= 2.0
    m = MomentSummary(1.0, 2.0 / d, 12.0 * (d + 4) / d**3)
    y_spread = fourth_moment_lower_bound(m)
    return PositivityCertificate(0.25 * spread * y_spread, spread, y_spread)
