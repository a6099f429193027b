"""Solutions of the mean ODE and the iterate-vs-flow deviation experiments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .algorithms import ES_FIXED, PBIL_1D, AlgorithmSpec, run_ensemble
from .errors import ConfigurationError, DomainExitError, InputError

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``alpha_0, alpha_1, ...`` with their partial sums."""

    alphas: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        if any(not (x > 0 and math.isfinite(x)) for x in a):
            raise InputError("step sizes must be positive and finite")
        object.__setattr__(self, "alphas", a)

    @classmethod
    def constant(cls, alpha: float, n: int) -> "StepSchedule":
        return cls((float(alpha),) * n)

    def __len__(self):
        return len(self.alphas)

    def t(self, n: int, k: int) -> float:
        """Elapsed ODE time ``alpha_n + ... + alpha_{n+k-1}``."""
        return math.fsum(self.alphas[n : n + k])

    def eps(self, n: int, k: int) -> float:
        """Accumulated squared steps ``alpha_n^2 + ... + alpha_{n+k-1}^2``."""
        return math.fsum(a * a for a in self.alphas[n : n + k])

    def times(self, n: int = 0, k: Optional[int] = None) -> np.ndarray:
        k = len(self) - n if k is None else k
        return np.concatenate(([0.0], np.cumsum(self.alphas[n : n + k])))


@dataclass
class FlowPath:
    times: np.ndarray
    points: np.ndarray
    method: str

    def to_csv(self, path) -> None:
        pts = self.points.reshape(len(self.times), -1)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"component_{j}" for j in range(pts.shape[1])])
            for t, row in zip(self.times, pts):
                w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])


def integrate_flow(F: Callable, theta0, T: float, dt: float, in_domain: Optional[Callable] = None) -> FlowPath:
    """Classical fixed-step RK4; the last step is shortened to land on ``T``.

    ``in_domain(theta) -> bool`` is checked after every step.
    """
    if not dt > 0 or T < 0:
        raise InputError("need dt > 0 and T >= 0")
    y = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    n_full = int(math.floor(T / dt + 1e-9))
    steps = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-12 * max(1.0, T):
        steps.append(rest)
    times = [0.0]
    points = [y.copy()]
    t = 0.0
    for h in steps:
        k1 = F(y)
        k2 = F(y + 0.5 * h * k1)
        k3 = F(y + 0.5 * h * k2)
        k4 = F(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if not np.all(np.isfinite(y)) or (in_domain is not None and not in_domain(y)):
            raise DomainExitError(f"flow left the domain at t={t:.6g}", iteration=len(times), state=y)
        times.append(t)
        points.append(y.copy())
    times_arr = np.array(times)
    if steps:
        times_arr[-1] = T
    return FlowPath(times_arr, np.array(points), "rk4")


def pbil1_flow_exact(theta0, t):
    """Logistic solution ``theta0 e^t / (1 - theta0 + theta0 e^t)``."""
    th = np.asarray(theta0, dtype=float)
    tt = np.asarray(t, dtype=float)
    if np.any((th <= 0) | (th >= 1)) or np.any(tt < 0):
        raise InputError("need theta0 in (0, 1) and t >= 0")
    # written with e^{-t} to stay finite for large t
    out = th / (th + (1.0 - th) * np.exp(-tt))
    return float(out) if out.ndim == 0 else out


def pbil1_flow_complement(theta0, t):
    """``1 - phi(t)`` without cancellation."""
    th = np.asarray(theta0, dtype=float)
    e = np.exp(-np.asarray(t, dtype=float))
    out = (1.0 - th) * e / (th + (1.0 - th) * e)
    return float(out) if out.ndim == 0 else out


def es_flow_exact(v0, t, L: float):
    """``v0 e^{-L t}``."""
    v = np.asarray(v0, dtype=float)
    tt = np.asarray(t, dtype=float)
    if np.any(v <= 0) or not L > 0 or np.any(tt < 0):
        raise InputError("need v0 > 0, L > 0 and t >= 0")
    out = v * np.exp(-L * tt)
    return float(out) if out.ndim == 0 else out


def closed_form_flow(spec: AlgorithmSpec, L: Optional[float] = None) -> Callable:
    """``(theta0, times) -> points`` for the problems with a known flow."""
    if spec.kind == PBIL_1D and spec.scheme.weights == (1.0, 0.0):
        return pbil1_flow_exact
    if spec.kind == ES_FIXED and L is not None:
        return lambda v0, t: es_flow_exact(v0, t, L)
    raise ConfigurationError(f"no closed-form flow for {spec.kind} with weights {spec.scheme.weights}")


def pbil1_second_moment_bound(lo: float) -> float:
    """``sup_{theta in [lo, 1)} (2 theta (1-theta)^2)^{1/2}``; the peak is at 1/3."""
    th = min(max(lo, 0.0), 1.0)
    th = 1.0 / 3.0 if th <= 1.0 / 3.0 else th
    return math.sqrt(2.0 * th * (1.0 - th) ** 2)


@dataclass
class DeviationResult:
    empirical: float
    bound: float
    per_step: np.ndarray  # root mean squared deviation at k = 0..N

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound


def euler_ode_deviation(
    spec: AlgorithmSpec,
    theta0,
    schedule: StepSchedule,
    N: int,
    trials: int,
    seed: int,
    *,
    L: Optional[float] = None,
    K: Optional[float] = None,
    meanfield: Optional[Callable] = None,
    noiseless: bool = False,
    jobs: int = 1,
) -> DeviationResult:
    """Worst root-mean-square gap between iterates and the flow over ``N`` steps,
    against ``((L K / 2) eps + K sqrt(eps)) exp(L t)``.

    For 1-D PBIL with ``w = (1, 0)``, ``L = 1`` and ``K`` is the largest
    root second moment of ``F_n`` over the region iterates can reach.
    Other problems need ``L`` and ``K`` from the caller.
    With ``noiseless=True`` the iterates follow ``theta + alpha F(theta)``
    exactly (requires ``meanfield`` or a closed form).
    """
    if N < 0 or N > len(schedule):
        raise InputError("N must lie between 0 and the schedule length")
    alphas = np.array(schedule.alphas[:N])
    pbil1 = spec.kind == PBIL_1D and spec.scheme.weights == (1.0, 0.0)
    th0 = float(np.atleast_1d(theta0)[0])
    if pbil1:
        L = 1.0 if L is None else L
        if K is None:
            K = pbil1_second_moment_bound(th0 * float(np.prod(1.0 - alphas)))
    if L is None or K is None:
        raise ConfigurationError("L and K must be supplied for this problem")
    flow = closed_form_flow(spec, L if spec.kind == ES_FIXED else None)
    times = schedule.times(0, N)
    phi = np.atleast_1d(flow(th0, times))

    if noiseless:
        if meanfield is None:
            from .meanfield import default_meanfield

            meanfield = default_meanfield(spec, L if spec.kind == ES_FIXED else None)
        path = np.empty(N + 1)
        path[0] = th0
        for i, a in enumerate(alphas):
            path[i + 1] = path[i] + a * float(meanfield(path[i]))
        dev = np.abs(path - phi)
    else:
        ens = run_ensemble(spec, theta0, N, trials, seed, alphas=alphas, jobs=jobs)
        x = ens.states[:, :, -1]
        dev = np.sqrt(np.mean((x - phi[None, :]) ** 2, axis=0))
    eps = schedule.eps(0, N)
    t = schedule.t(0, N)
    bound = ((L * K / 2.0) * eps + K * math.sqrt(eps)) * math.exp(L * t)
    return DeviationResult(float(np.max(dev)), bound, dev)


def psi_deviation_bound(cert, theta0: float, alpha: float, N: int) -> float:
    """``(C1 + C2) exp((dL + K1) N alpha)`` with ``C1``, ``C2`` integrated along the flow."""
    if N == 0:
        return 0.0
    dl = float(cert.delta_L(alpha, N * alpha))

    def R(t):
        return cert.R(cert.flow(t, theta0), theta0, alpha, N)

    i = np.arange(N)
    left = i * alpha
    # Gauss-Legendre on each [i alpha, (i+1) alpha]
    nodes = left[:, None] + 0.5 * alpha * (GL_NODES[None, :] + 1.0)
    vals = ((left + alpha)[:, None] - nodes) * R(nodes)
    c1 = dl * 0.5 * alpha * float(np.sum(vals @ GL_WEIGHTS))
    c2 = math.sqrt(cert.K2**2 * alpha**2 * float(np.sum(R(left) ** 2)))
    return (c1 + c2) * math.exp((dl + cert.K1) * N * alpha)


def psi_deviation(spec: AlgorithmSpec, cert, theta0, alpha: float, N: int, trials: int, seed: int, jobs: int = 1) -> DeviationResult:
    """Worst root-mean-square gap of ``Psi`` between iterates and the flow."""
    if cert is None:
        raise ConfigurationError("psi_deviation needs a certificate")
    th0 = float(np.atleast_1d(theta0)[0])
    spec = spec.with_alpha(alpha)
    times = alpha * np.arange(N + 1)
    psi_flow = _psi_along_flow(cert, th0, times)
    ens = run_ensemble(spec, theta0, N, trials, seed, psi=cert.psi, jobs=jobs)
    dev = np.sqrt(np.mean((ens.psi - psi_flow[None, :]) ** 2, axis=0))
    return DeviationResult(float(np.max(dev)), psi_deviation_bound(cert, th0, alpha, N), dev)


def _psi_along_flow(cert, theta0, times):
    if cert.name == "pbil-1d":
        phi = pbil1_flow_exact(theta0, times)
        return pbil1_flow_complement(theta0, times) / np.sqrt(phi)
    return np.asarray(cert.psi(cert.flow(times, theta0)))
