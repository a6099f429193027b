"""Lyapunov-like potentials and the constants that certify geometric decay.

A certificate bundles a potential ``Psi``, its decay envelopes along the mean
ODE (``delta_A1`` from above, ``delta_B1`` from below) and the deviation
envelopes ``delta_A2 = delta_B2`` assembled from a Lipschitz bound
``delta_L``, moment constants ``K1, K2`` and a relative bound ``delta_R``.
All envelope objects are plain callables that also serialize to a formula id
plus their constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CertificateFailure, InputError
from .meanfield import EsConstants

DINI_STEPS = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True)
class PsiFunction:
    """Nonnegative potential on the parameter domain.

    For one-parameter domains (``n_params == 1``) inputs are treated
    elementwise; otherwise the last axis indexes parameters.
    ``complement`` optionally evaluates the potential from ``(theta, 1 - theta)``
    for full precision near the upper boundary.
    """

    name: str
    func: Callable
    grad: Optional[Callable] = None
    n_params: int = 1
    complement: Optional[Callable] = None

    def _prep(self, theta):
        th = np.asarray(theta, dtype=float)
        return th[..., None] if self.n_params == 1 else th

    def __call__(self, theta):
        out = self.func(self._prep(theta))
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, theta, h: float = 1e-6):
        """Analytic gradient when available, else central differences."""
        th = self._prep(theta)
        if self.grad is not None:
            g = self.grad(th)
        else:
            g = np.empty(th.shape)
            for j in range(th.shape[-1]):
                e = np.zeros(th.shape[-1])
                step = h * np.maximum(1.0, np.abs(th[..., j]))
                e_mat = np.multiply.outer(step, e)
                e_mat[..., j] = step
                g[..., j] = (self.func(th + e_mat) - self.func(th - e_mat)) / (2 * step)
        if self.n_params == 1:
            g = g[..., 0]
            return float(g) if np.ndim(g) == 0 else g
        return g

    def on_states(self, states, comps=None):
        """Evaluate along recorded states of shape ``(..., n_params)``."""
        if comps is not None and self.complement is not None:
            return self.complement(states, comps)
        return self.func(states)


def _pbil_psi(th):
    t = th[..., 0]
    return (1.0 - t) / np.sqrt(t)


def _pbil_psi_grad(th):
    t = th[..., 0]
    return (-(1.0 + t) / (2.0 * t**1.5))[..., None]


def _pbil_psi_comp(th, comp):
    return comp[..., 0] / np.sqrt(th[..., 0])


def _es_psi(th):
    return np.sqrt(th[..., -1])


def _es_psi_grad(th):
    g = np.zeros(th.shape)
    g[..., -1] = 0.5 / np.sqrt(th[..., -1])
    return g


PBIL_PSI = PsiFunction("pbil_one_minus_theta_over_sqrt_theta", _pbil_psi, _pbil_psi_grad, 1, _pbil_psi_comp)
ES_PSI = PsiFunction("es_sqrt_variance", _es_psi, _es_psi_grad, 1)


# ----------------------------------------------------------------- envelopes

@dataclass(frozen=True)
class ExpDecay:
    """``t -> exp(-rate * t)``."""

    rate: float
    formula: str = "exp_decay"

    def __call__(self, t):
        out = np.exp(-self.rate * np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"formula": self.formula, "rate": self.rate}


@dataclass(frozen=True)
class ConstantLipschitz:
    """``(x, y) -> L``."""

    L: float
    formula: str = "constant"

    def __call__(self, x, y):
        out = np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.L))
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"formula": self.formula, "L": self.L}


def _log_step_decay(x, y):
    """``log((1 - x)^(y/x))`` with the ``x -> 0`` limit ``-y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(x > 0, np.log1p(-np.minimum(x, 1.0)) / np.where(x > 0, x, 1.0), -1.0)
    return ratio * y


@dataclass(frozen=True)
class PbilBeta:
    """Worst-case multiplicative shrink ``(1 - x)^(y/x)`` of PBIL iterates."""

    formula: str = "pbil_beta"

    def log(self, x, y):
        return _log_step_decay(x, y)

    def __call__(self, x, y):
        out = np.exp(self.log(x, y))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"formula": self.formula}


@dataclass(frozen=True)
class EsBeta:
    """``min(exp(-L y), (1 - x)^(y/x))``."""

    L: float
    formula: str = "es_beta"

    def log(self, x, y):
        return np.minimum(-self.L * np.asarray(y, dtype=float), _log_step_decay(x, y))

    def __call__(self, x, y):
        out = np.exp(self.log(x, y))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"formula": self.formula, "L": self.L}


@dataclass(frozen=True)
class PbilDeltaR:
    """``(2 (1 - x)^(y/x))^(-1/2)``."""

    formula: str = "pbil_delta_R"

    def log(self, x, y):
        return -0.5 * (math.log(2.0) + _log_step_decay(x, y))

    def __call__(self, x, y):
        out = np.exp(self.log(x, y))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"formula": self.formula}


@dataclass(frozen=True)
class EsDeltaR:
    """``S/2 * min(exp(-L y), (1 - x)^(y/x))^(-1/2)``."""

    S: float
    L: float
    formula: str = "es_delta_R"

    def log(self, x, y):
        return math.log(0.5 * self.S) - 0.5 * EsBeta(self.L).log(x, y)

    def __call__(self, x, y):
        out = np.exp(self.log(x, y))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"formula": self.formula, "S": self.S, "L": self.L}


@dataclass(frozen=True)
class Delta2:
    """Deviation envelope
    ``(dL xy + K2 sqrt(xy)) * exp((dL + K1) y) * dR`` evaluated in log space."""

    delta_L: Callable
    K1: float
    K2: float
    delta_R: Callable
    formula: str = "ode_deviation"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dl = np.asarray(self.delta_L(x, y), dtype=float)
        xy = x * y
        lead = dl * xy + self.K2 * np.sqrt(xy)
        if hasattr(self.delta_R, "log"):
            log_r = self.delta_R.log(x, y)
        else:
            with np.errstate(divide="ignore"):
                log_r = np.log(np.asarray(self.delta_R(x, y), dtype=float))
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.where(lead > 0, np.exp(np.log(np.where(lead > 0, lead, 1.0)) + (dl + self.K1) * y + log_r), 0.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {
            "formula": self.formula,
            "K1": self.K1,
            "K2": self.K2,
            "delta_L": _describe(self.delta_L),
            "delta_R": _describe(self.delta_R),
        }


def _describe(fn):
    return fn.to_dict() if hasattr(fn, "to_dict") else {"formula": "opaque"}


def build_delta1(C: float) -> ExpDecay:
    """Envelope ``t -> exp(-C t)`` certified by a Dini bound with constant ``C``."""
    if not C > 0:
        raise InputError("decay constant must be positive")
    return ExpDecay(float(C))


def build_delta2(delta_L, K1: float, K2: float, delta_R) -> Delta2:
    if K1 < 0 or K2 < 0:
        raise InputError("K1 and K2 must be nonnegative")
    return Delta2(delta_L, float(K1), float(K2), delta_R)


# ----------------------------------------------------------------- Dini check

@dataclass
class DiniResult:
    C_upper: float
    C_lower: float
    values: np.ndarray
    grid: np.ndarray
    worst_upper: np.ndarray
    worst_lower: np.ndarray
    method: str
    consistent: bool = True
    heuristic: bool = True


def dini_derivative(psi: PsiFunction, theta, direction, hs=DINI_STEPS):
    """One-sided difference estimate of the directional derivative of ``psi``.

    Returns ``(estimate, consistent)``: a Richardson extrapolation of the last
    two step sizes and whether the two extrapolations available agree.
    """
    th = np.asarray(theta, dtype=float)
    dv = np.asarray(direction, dtype=float)
    base = psi(th)
    q = [(psi(th + h * dv) - base) / h for h in hs]
    rich = [q[i + 1] + (q[i + 1] - q[i]) * hs[i + 1] / (hs[i] - hs[i + 1]) for i in range(len(hs) - 1)]
    est = rich[-1]
    scale = np.maximum(np.abs(est), 1e-12)
    consistent = bool(np.all(np.abs(rich[-1] - rich[0]) <= 1e-3 * scale + 1e-9))
    return est, consistent


def dini_check(psi: PsiFunction, F: Callable, grid, method: str = "auto") -> DiniResult:
    """Decay constants of ``psi`` along ``F`` certified on a grid.

    Evaluates ``grad(log psi) . F`` at each grid point and returns
    ``C_upper = -max`` (rate usable for ``delta_A1``) and ``C_lower = -min``
    (rate usable for ``delta_B1``). A grid cannot witness a supremum over a
    continuum, so the result is flagged heuristic.
    """
    pts = np.asarray(grid, dtype=float)
    vals_psi = np.asarray(psi(pts), dtype=float)
    if np.any(~(vals_psi > 0)):
        raise InputError("psi must be positive at every grid point")
    fvals = np.asarray(F(pts), dtype=float)
    if method == "auto":
        method = "analytic" if psi.grad is not None else "dini"
    consistent = True
    if method == "analytic":
        g = np.asarray(psi.gradient(pts))
        deriv = g * fvals if psi.n_params == 1 else np.sum(g * fvals, axis=-1)
    elif method == "dini":
        deriv, consistent = dini_derivative(psi, pts, fvals)
    else:
        raise InputError(f"unknown method {method!r}")
    values = np.asarray(deriv) / vals_psi
    bad = values >= 0
    if np.any(bad):
        raise CertificateFailure(
            f"log-derivative of {psi.name} along F is nonnegative at {int(bad.sum())} grid points",
            witnesses=pts[bad].tolist(),
        )
    hi = int(np.argmax(values))
    lo = int(np.argmin(values))
    return DiniResult(
        C_upper=float(-values[hi]),
        C_lower=float(-values[lo]),
        values=values,
        grid=pts,
        worst_upper=pts[hi],
        worst_lower=pts[lo],
        method=method,
        consistent=consistent,
    )


# ------------------------------------------------------------- certificates

@dataclass(frozen=True)
class CertificateBundle:
    """Everything needed to turn a potential into a certified rate."""

    name: str
    psi: PsiFunction
    C_upper: float
    C_lower: float
    delta_A1: ExpDecay
    delta_B1: ExpDecay
    delta_L: Callable
    K1: float
    K2: float
    delta_R: Callable
    delta_A2: Delta2
    beta: Callable
    distance_constant: float
    constants: dict = field(default_factory=dict)

    @property
    def delta_B2(self) -> Delta2:
        return self.delta_A2

    # problem-specific pieces, dispatched on name
    def meanfield(self, theta):
        th = np.asarray(theta, dtype=float)
        if self.name == "pbil-1d":
            return th * (1.0 - th)
        return -self.constants["L"] * th

    def flow(self, t, theta0):
        """Closed-form solution of the mean ODE."""
        from .flow import es_flow_exact, pbil1_flow_exact

        if self.name == "pbil-1d":
            return pbil1_flow_exact(theta0, t)
        return es_flow_exact(theta0, t, self.constants["L"])

    def q_scale(self, alpha, N, theta_n):
        """Scalar metric making ``grad(Psi)^2 / Q <= 1`` on the visited region."""
        return 1.0 / (4.0 * self.beta(alpha, N * alpha) * theta_n)

    def R(self, theta, theta_n, alpha, N):
        """Second-moment bound of ``F_n`` in the ``Q`` metric."""
        q = self.q_scale(alpha, N, theta_n)
        th = np.asarray(theta, dtype=float)
        if self.name == "pbil-1d":
            return np.sqrt(2.0 * q) * np.abs(1.0 - th)
        return self.constants["S"] * np.sqrt(q) * np.abs(th)

    def region(self, theta_n, alpha, N):
        """``(lower, upper)`` bounds of iterates and of the flow over ``N`` steps."""
        lo = theta_n * self.beta(alpha, N * alpha)
        if self.name == "pbil-1d":
            return lo, 1.0
        return lo, math.inf

    def to_dict(self) -> dict:
        return {
            "psi_name": self.psi.name,
            "certificate": self.name,
            "C_upper": self.C_upper,
            "C_lower": self.C_lower,
            "L": self.constants.get("L"),
            "S": self.constants.get("S"),
            "K1": self.K1,
            "K2": self.K2,
            "distance_constant": self.distance_constant,
            "formula_ids": {
                "delta_A1": self.delta_A1.to_dict(),
                "delta_B1": self.delta_B1.to_dict(),
                "delta_A2": self.delta_A2.to_dict(),
                "delta_B2": self.delta_A2.to_dict(),
                "beta": self.beta.to_dict(),
            },
        }


def pbil_certificate() -> CertificateBundle:
    """Certificate for 1-D PBIL on OneMax with ``lambda=2, w=(1, 0)``."""
    dL = ConstantLipschitz(1.0)
    dR = PbilDeltaR()
    return CertificateBundle(
        name="pbil-1d",
        psi=PBIL_PSI,
        C_upper=0.5,
        C_lower=1.0,
        delta_A1=build_delta1(0.5),
        delta_B1=build_delta1(1.0),
        delta_L=dL,
        K1=2.0,
        K2=math.sqrt(2.0),
        delta_R=dR,
        delta_A2=build_delta2(dL, 2.0, math.sqrt(2.0), dR),
        beta=PbilBeta(),
        distance_constant=1.0,
        constants={"L": 1.0},
    )


def es_certificate(constants, d: Optional[int] = None) -> CertificateBundle:
    """Certificate for the fixed-mean ES on a sphere.

    ``constants`` is an :class:`EsConstants` or a mapping with ``L`` and ``S``
    (and optionally ``d``).
    """
    if isinstance(constants, EsConstants):
        L, S, d = constants.L, constants.S, constants.d
        if constants.L_se > 0 and constants.L_margin < 5.0:
            raise CertificateFailure(
                f"L = {L:.6g} is only {constants.L_margin:.1f} standard errors above zero"
            )
    else:
        L, S = float(constants["L"]), float(constants["S"])
        d = int(constants.get("d", d or 1))
    if not (L > 0 and S > 0):
        raise CertificateFailure(f"need L > 0 and S > 0, got L={L}, S={S}")
    dL = ConstantLipschitz(L)
    dR = EsDeltaR(S, L)
    K1 = math.sqrt(2.0) * S
    K2 = math.sqrt(2.0)
    return CertificateBundle(
        name="es-fixed-mean-sphere",
        psi=ES_PSI,
        C_upper=L / 2.0,
        C_lower=L / 2.0,
        delta_A1=build_delta1(L / 2.0),
        delta_B1=build_delta1(L / 2.0),
        delta_L=dL,
        K1=K1,
        K2=K2,
        delta_R=dR,
        delta_A2=build_delta2(dL, K1, K2, dR),
        beta=EsBeta(L),
        distance_constant=math.sqrt(d),
        constants={"L": L, "S": S, "d": d},
    )


def certificate_from_dict(data: dict) -> CertificateBundle:
    """Rebuild a built-in certificate from its serialized constants."""
    name = data.get("certificate")
    if name == "pbil-1d":
        return pbil_certificate()
    if name == "es-fixed-mean-sphere":
        return es_certificate({"L": data["L"], "S": data["S"], "d": int(round(data["distance_constant"] ** 2))})
    raise InputError(f"unknown certificate {name!r}")


# ------------------------------------------------------- practical conditions

def verify_p1(cert: CertificateBundle, theta_n: float, alpha: float, N: int, n_grid: int = 2001) -> float:
    """Largest ``grad(Psi)^2 / Q`` over a dense grid of the visited region.

    The condition holds when the returned value is at most 1.
    """
    lo, hi = cert.region(theta_n, alpha, N)
    if math.isinf(hi):
        grid = np.geomspace(lo, theta_n * 1e6, n_grid)
    else:
        grid = np.linspace(lo, hi, n_grid + 1)[:-1]
    g = np.asarray(cert.psi.gradient(grid))
    return float(np.max(g**2 / cert.q_scale(alpha, N, theta_n)))


def verify_p4(cert: CertificateBundle, theta_n: float, alpha: float, N: int, n_pairs: int = 10_000, seed: int = 0) -> float:
    """Largest ratio ``R(a)^2 / (K1^2 |a-b|_Q^2 + K2^2 R(b)^2)`` over random pairs."""
    from .algorithms import trial_rng

    lo, hi = cert.region(theta_n, alpha, N)
    hi = min(hi, theta_n * 1e3)
    g = trial_rng(seed)
    a, b = g.uniform(lo, hi, size=(2, n_pairs))
    q = cert.q_scale(alpha, N, theta_n)
    ra = cert.R(a, theta_n, alpha, N)
    rb = cert.R(b, theta_n, alpha, N)
    denom = cert.K1**2 * q * (a - b) ** 2 + cert.K2**2 * rb**2
    return float(np.max(ra**2 / denom))
