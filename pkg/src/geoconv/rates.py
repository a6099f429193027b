"""Certified rates, admissible step sizes, anytime and hitting-time bounds, and
the probabilistic statements for local convergence."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CertificateFailure, InputError

ADMISSIBLE = "admissible"
NOT_ADMISSIBLE = "not_admissible"
INCONCLUSIVE = "inconclusive"

TIE_RTOL = 1e-12
CHUNK = 8192
FLAT_RUN = 1000


def default_n_max(alpha: float) -> int:
    """Search horizon long enough to cover ``N alpha`` up to 100 time units."""
    return int(min(10**6, max(1000, math.ceil(100.0 / alpha))))


def _eval(fn, *args, shape):
    return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape)


def _horizon_sums(delta1, delta2, alpha, N):
    T = N * alpha
    a1 = _eval(delta1, T, shape=N.shape)
    a2 = _eval(delta2, np.full(N.shape, alpha), T, shape=N.shape)
    return a1, a2


@dataclass
class RateResult:
    gamma: float
    n_star: int
    gamma_bar: float
    status: str
    n_searched: int
    exact: bool  # True when the search proves no larger N can do better


def convergence_rate(delta1: Callable, delta2: Callable, alpha: float, n_max: Optional[int] = None) -> RateResult:
    """``gamma = min_N (delta1(N a) + delta2(a, N a))^(1/N)`` over ``1 <= N <= n_max``.

    ``n_star`` is the smallest minimizer (values within a relative ``1e-12``
    count as ties). The search stops early when ``delta2(a, N a) >= 1``,
    since both envelopes are monotone and no later ``N`` can reach below 1,
    or when ``delta1 < 1e-16`` and ``h`` has not decreased for 1000 steps.
    """
    if not alpha > 0:
        raise InputError("alpha must be positive")
    n_max = default_n_max(alpha) if n_max is None else int(n_max)
    if n_max < 1:
        raise InputError("n_max must be at least 1")
    sums = []
    logh_all = []
    best = math.inf
    last_improve = 0
    stop_reason = None
    for start in range(1, n_max + 1, CHUNK):
        N = np.arange(start, min(start + CHUNK, n_max + 1), dtype=float)
        a1, a2 = _horizon_sums(delta1, delta2, alpha, N)
        s = a1 + a2
        with np.errstate(divide="ignore"):
            logh = np.log(s) / N
        prev = np.concatenate(([best], np.minimum.accumulate(logh)[:-1]))
        prev = np.minimum(prev, best)
        improved = logh < prev - TIE_RTOL * np.abs(np.where(np.isfinite(prev), prev, 0.0))
        idx = N.astype(np.int64)
        last = np.maximum.accumulate(np.where(improved, idx, last_improve))
        flat = (a1 < 1e-16) & (idx - last >= FLAT_RUN)
        stops = np.flatnonzero((a2 >= 1.0) | flat)
        cut = len(N)
        if len(stops):
            cut = int(stops[0]) + 1
            stop_reason = "delta2" if a2[stops[0]] >= 1.0 else "flat"
        sums.append(s[:cut])
        logh_all.append(logh[:cut])
        best = min(best, float(np.min(logh[:cut])))
        last_improve = int(last[cut - 1])
        if stop_reason:
            break
    s = np.concatenate(sums)
    logh = np.concatenate(logh_all)
    lmin = float(np.min(logh))
    tol = TIE_RTOL * max(abs(lmin), 1e-300)
    idx = int(np.flatnonzero(logh <= lmin + tol)[0])
    n_star = idx + 1
    gamma = math.exp(lmin)
    gamma_bar = 1.0 if n_star == 1 else float(np.max(s[:idx]))
    exact = stop_reason == "delta2"
    if gamma < 1.0:
        status = ADMISSIBLE
    elif exact:
        status = NOT_ADMISSIBLE
    else:
        status = INCONCLUSIVE
    return RateResult(gamma, n_star, gamma_bar, status, len(s), exact)


def lower_rate(deltaB1: Callable, deltaB2: Callable, alpha: float, n_max: Optional[int] = None) -> RateResult:
    """``sup_N (deltaB1(N a) - deltaB2(a, N a))^(1/N)`` over positive differences.

    The difference is nonincreasing in ``N``, so the search ends at its first
    nonpositive value. ``gamma_bar`` is the smallest difference before
    ``n_star`` (1 when ``n_star == 1``).
    """
    if not alpha > 0:
        raise InputError("alpha must be positive")
    n_max = default_n_max(alpha) if n_max is None else int(n_max)
    diffs = []
    ended = False
    for start in range(1, n_max + 1, CHUNK):
        N = np.arange(start, min(start + CHUNK, n_max + 1), dtype=float)
        b1, b2 = _horizon_sums(deltaB1, deltaB2, alpha, N)
        d = b1 - b2
        nonpos = np.flatnonzero(~(d > 0))
        if len(nonpos):
            diffs.append(d[: nonpos[0]])
            ended = True
            break
        diffs.append(d)
    d = np.concatenate(diffs) if diffs else np.array([])
    if len(d) == 0:
        return RateResult(0.0, 1, 1.0, NOT_ADMISSIBLE, 1, True)
    N = np.arange(1, len(d) + 1)
    logg = np.log(d) / N
    lmax = float(np.max(logg))
    tol = TIE_RTOL * max(abs(lmax), 1e-300)
    idx = int(np.flatnonzero(logg >= lmax - tol)[0])
    gamma_bar = 1.0 if idx == 0 else float(np.min(d[:idx]))
    return RateResult(math.exp(lmax), idx + 1, gamma_bar, ADMISSIBLE, len(d), ended)


@dataclass
class AlphaBar:
    alpha_bar: float
    T: float
    n_bar: int
    status: str


def _first_true_int(pred, lo: int, cap: int):
    """Smallest integer ``n >= lo`` with ``pred(n)``, assuming monotone ``pred``."""
    hi = lo
    while not pred(hi):
        lo = hi + 1
        hi *= 2
        if hi > cap:
            return None
    while lo < hi:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid + 1
    return hi


def admissible_alpha(delta1: Callable, delta2: Callable, alpha_hi: float, t_cap: float = 1e6, n_cap: int = 1 << 62) -> AlphaBar:
    """Step-size threshold below which every ``alpha`` is certified.

    ``T`` is the first time (to a relative ``1e-9``) with ``delta1(T) < 1/2``;
    ``n_bar`` is the smallest ``N`` with ``delta2(2T/N, 2T) < 1/2``; the result
    is ``min(2T / n_bar, alpha_hi)``.
    """
    if not alpha_hi > 0:
        raise InputError("alpha_hi must be positive")

    def below(t):
        return float(np.asarray(delta1(t))) < 0.5

    hi = 1e-6
    while not below(hi):
        hi *= 2.0
        if hi > t_cap:
            return AlphaBar(0.0, math.inf, 0, "no_certificate")
    lo = hi / 2.0 if hi > 1e-6 else 0.0
    while hi - lo > 1e-9 * hi:
        mid = 0.5 * (lo + hi)
        if below(mid):
            hi = mid
        else:
            lo = mid
    T = hi
    n_bar = _first_true_int(lambda n: float(np.asarray(delta2(2 * T / n, 2 * T))) < 0.5, 1, n_cap)
    if n_bar is None:
        return AlphaBar(0.0, T, 0, "no_certificate")
    return AlphaBar(min(2 * T / n_bar, alpha_hi), T, n_bar, ADMISSIBLE)


def _require_rate(gamma):
    if not 0.0 < gamma < 1.0:
        raise CertificateFailure(f"rate {gamma!r} is not in (0, 1); nothing is certified")


def prefactor(gamma: float, gamma_bar: float, n_star: int) -> float:
    return gamma_bar / gamma ** (n_star - 1)


def anytime_bound(gamma, gamma_bar, n_star, psi0, n):
    """``gamma^n (gamma_bar / gamma^(N*-1)) psi0``; ``n`` may be an array."""
    _require_rate(gamma)
    n = np.asarray(n, dtype=float)
    out = np.power(gamma, n) * prefactor(gamma, gamma_bar, n_star) * psi0
    return float(out) if out.ndim == 0 else out


def hitting_time_bound(eps, delta, C, gamma, gamma_bar, n_star, psi0) -> int:
    """Iterations after which the optimum's ``eps``-ball is hit with probability ``>= 1 - delta``."""
    _require_rate(gamma)
    if not (eps > 0 and 0 < delta < 1 and C > 0 and psi0 > 0):
        raise InputError("need eps > 0, 0 < delta < 1, C > 0, psi0 > 0")
    lg = math.log(1.0 / gamma)
    val = math.log(1.0 / (eps * delta)) / lg + math.log(C * prefactor(gamma, gamma_bar, n_star) * psi0) / lg
    return 1 + max(0, math.ceil(val))


@dataclass(frozen=True)
class LocalConfig:
    """Sublevel threshold ``zeta`` with ``{Psi < zeta}`` inside the basin ``U``."""

    zeta: float
    psi0: float
    in_U: Optional[Callable] = None

    def __post_init__(self):
        if not self.zeta > 0:
            raise InputError("zeta must be positive")
        if self.psi0 < 0:
            raise InputError("psi0 must be nonnegative")

    def check_sublevel(self, psi: Callable, samples) -> list:
        """Sample points with ``Psi < zeta`` that fall outside ``U``."""
        if self.in_U is None:
            return []
        return [x for x in samples if psi(x) < self.zeta and not self.in_U(x)]


@dataclass
class LocalProbabilities:
    pr_omega_k: float
    pr_omega_inf: float
    raw_k: float
    raw_inf: float


def local_probabilities(gamma, n_star, local: LocalConfig, k: int) -> LocalProbabilities:
    """Lower bounds on staying in the basin for ``k`` subsampled steps and forever."""
    g = gamma**n_star
    if not 0 <= g < 1:
        raise CertificateFailure("need gamma^N* < 1")
    r = local.psi0 / local.zeta
    raw_k = 1.0 - r * (g - g ** (k + 1)) / (1.0 - g)
    raw_inf = 1.0 - r * g / (1.0 - g)
    clamp = lambda x: min(1.0, max(0.0, x))  # noqa: E731
    return LocalProbabilities(clamp(raw_k), clamp(raw_inf), raw_k, raw_inf)


def local_hitting_time_bound(eps, delta, C, gamma, gamma_bar, n_star, psi0, pr_omega_inf) -> int:
    """Hitting-time bound valid with probability ``>= (1 - delta) Pr[Omega_inf]``."""
    _require_rate(gamma)
    if not 0 < pr_omega_inf <= 1:
        raise CertificateFailure("pr_omega_inf must lie in (0, 1]")
    if not (eps > 0 and 0 < delta < 1 and C > 0 and psi0 > 0):
        raise InputError("need eps > 0, 0 < delta < 1, C > 0, psi0 > 0")
    lg = math.log(1.0 / gamma)
    val = (
        2.0 * math.log(1.0 / (eps * (1.0 - math.sqrt(1.0 - delta)))) / lg
        + math.log(1.0 / pr_omega_inf) / lg
        + math.log(C * psi0 * prefactor(gamma, gamma_bar, n_star)) / lg
    )
    return 1 + max(0, math.ceil(val))


def check_liminf_precondition(gamma: float, epsilons) -> bool:
    """Numerical proxy for ``gamma^n / eps_n -> 0`` on the supplied horizon:
    the ratio is nonincreasing over the second half and halves from mid to end."""
    eps = np.asarray(epsilons, dtype=float)
    H = len(eps)
    if H < 4 or np.any(eps <= 0):
        return False
    n = np.arange(1, H + 1)
    logr = n * math.log(gamma) - np.log(eps)
    tail = logr[H // 2 - 1 :]
    nonincreasing = bool(np.all(np.diff(tail) <= 1e-12 * np.maximum(1.0, np.abs(tail[1:]))))
    return nonincreasing and logr[-1] <= logr[H // 2 - 1] - math.log(2.0) + 1e-12


def liminf_statements(gamma: float, epsilons, psi_paths=None, pr_floor: Optional[float] = None, burn_in: int = 0) -> dict:
    """Empirical counterparts of the almost-sure statements for local convergence.

    ``psi_paths`` has shape ``(trials, n + 1)`` with ``Psi`` at iterations 0..n.
    Reports the fraction of trials with ``min_{m} (1/m) ln Psi_m <= ln gamma``
    over ``burn_in < m <= n`` and the fraction with ``Psi_n < eps_n`` at the
    horizon, next to the certified floor.
    """
    if not 0 < gamma < 1:
        raise InputError("gamma must lie in (0, 1)")
    if not check_liminf_precondition(gamma, epsilons):
        raise InputError("epsilon sequence does not dominate gamma^n on the supplied horizon")
    out = {"gamma": gamma, "precondition": True, "certified_floor": pr_floor}
    if psi_paths is not None:
        P = np.asarray(psi_paths, dtype=float)
        m = np.arange(1, P.shape[1])
        with np.errstate(divide="ignore"):
            rates = np.log(P[:, 1:]) / m
        rates = rates[:, burn_in:]
        out["fraction_rate"] = float(np.mean(np.min(rates, axis=1) <= math.log(gamma)))
        eps = np.asarray(epsilons, dtype=float)
        h = min(len(eps), P.shape[1] - 1)
        out["fraction_eps"] = float(np.mean(P[:, h] < eps[h - 1]))
        out["horizon"] = int(h)
    return out


@dataclass
class RateReport:
    alpha: float
    gamma: float
    n_star: int
    gamma_bar: float
    status: str
    gamma_lower: Optional[float]
    n_star_lower: Optional[int]
    gamma_bar_lower: Optional[float]
    lower_status: Optional[str]
    alpha_bar: Optional[float]
    search_n_max: int
    n_searched: int
    n_star_provisional: bool
    certificate: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def rate_report(cert, alpha: float, n_max: Optional[int] = None, alpha_bar: Optional[float] = None) -> RateReport:
    """Upper and lower certified rates of a certificate bundle at one step size."""
    n_max = default_n_max(alpha) if n_max is None else n_max
    up = convergence_rate(cert.delta_A1, cert.delta_A2, alpha, n_max)
    lo = lower_rate(cert.delta_B1, cert.delta_B2, alpha, n_max)
    return RateReport(
        alpha=alpha,
        gamma=up.gamma,
        n_star=up.n_star,
        gamma_bar=up.gamma_bar,
        status=up.status,
        gamma_lower=lo.gamma if lo.status == ADMISSIBLE else None,
        n_star_lower=lo.n_star if lo.status == ADMISSIBLE else None,
        gamma_bar_lower=lo.gamma_bar if lo.status == ADMISSIBLE else None,
        lower_status=lo.status,
        alpha_bar=alpha_bar,
        search_n_max=n_max,
        n_searched=up.n_searched,
        n_star_provisional=not up.exact,
        certificate=cert.name,
    )
