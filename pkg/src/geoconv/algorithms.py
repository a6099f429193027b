"""Stochastic recursions ``theta_{n+1} = theta_n + alpha F_n`` for the step-size
adaptive ES and PBIL, plus a seeded ensemble runner.

Every trial owns an independent random stream derived from ``(seed, trial)``,
so results do not depend on how trials are batched or scheduled. Within a
batch the recursion is vectorized across trials; the random numbers of one
trial are drawn in chunks from that trial's own generator.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainExitError, InputError
from .ranking import WeightScheme, assign_weights

logger = logging.getLogger(__name__)

ES_FIXED = "es-fixed-mean-sphere"
ES_FULL = "es-full"
PBIL_1D = "pbil-1d"
PBIL = "pbil"
KINDS = (ES_FIXED, ES_FULL, PBIL_1D, PBIL)


def sphere(x):
    return np.sum(np.square(x), axis=-1)


def onemax(x):
    """Number of incorrect (zero) bits; minimized at the all-ones string."""
    return x.shape[-1] - np.sum(x, axis=-1)


def euclidean_to_origin(x):
    return np.sqrt(np.sum(np.square(x), axis=-1))


def hamming_to_ones(x):
    return np.sum(1.0 - x, axis=-1)


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Independent generator for one trial of an ensemble."""
    if seed < 0 or trial < 0:
        raise InputError("seed and trial index must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(trial),)))


@dataclass(frozen=True)
class AlgorithmSpec:
    """One concrete rank-based algorithm on one objective.

    ``objective`` and ``distance`` must be vectorized over leading axes: they
    receive arrays of shape ``(..., dim)`` and return shape ``(...)``.
    """

    kind: str
    scheme: WeightScheme
    alpha: float
    kappa: float = 1.0
    dim: int = 1
    objective: Optional[Callable] = None
    distance: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown algorithm kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise InputError("dimension must be positive")
        if self.kind == PBIL_1D and self.dim != 1:
            raise InputError("pbil-1d requires dim == 1")
        if not self.alpha >= 0:
            raise InputError("alpha must be nonnegative")
        if self.kappa <= 0:
            raise InputError("kappa must be positive")
        if self.scheme.nonnegative and self.alpha >= self.scheme.max_alpha():
            raise InputError(
                f"alpha={self.alpha} violates the domain-stay condition alpha < 1/sum(w) "
                f"= {self.scheme.max_alpha()}"
            )
        if self.objective is None:
            object.__setattr__(self, "objective", onemax if self.is_pbil else sphere)
        if self.distance is None:
            object.__setattr__(
                self, "distance", hamming_to_ones if self.is_pbil else euclidean_to_origin
            )

    @property
    def is_pbil(self) -> bool:
        return self.kind in (PBIL, PBIL_1D)

    @property
    def n_params(self) -> int:
        if self.kind == ES_FIXED:
            return 1
        if self.kind == ES_FULL:
            return self.dim + 1
        return self.dim

    def with_alpha(self, alpha: float) -> "AlgorithmSpec":
        return AlgorithmSpec(
            self.kind, self.scheme, alpha, self.kappa, self.dim, self.objective, self.distance
        )


@dataclass
class EsState:
    m: np.ndarray
    v: float

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.v = float(self.v)
        if not (self.v > 0 and np.isfinite(self.v)):
            raise InputError(f"ES variance must be positive and finite, got {self.v}")


@dataclass
class PbilState:
    """Bernoulli parameters with their complements ``1 - theta`` kept separately.

    Storing the complement keeps full relative precision when a coordinate
    approaches 1, which happens geometrically fast on OneMax.
    """

    theta: np.ndarray
    comp: Optional[np.ndarray] = None

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if self.comp is None:
            self.comp = 1.0 - self.theta
        else:
            self.comp = np.atleast_1d(np.asarray(self.comp, dtype=float))
        if not (np.all(self.theta > 0) and np.all(self.comp > 0)):
            raise InputError(f"PBIL parameters must lie in (0, 1), got {self.theta}")


@dataclass
class Trajectory:
    states: np.ndarray
    seed: int
    alpha: float
    psi_values: Optional[np.ndarray] = None
    complements: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.states)


@dataclass
class Ensemble:
    """Recorded states of many independent trials, indexed ``[trial, iteration]``."""

    states: np.ndarray
    seed: int
    alphas: np.ndarray
    psi: Optional[np.ndarray] = None
    complements: Optional[np.ndarray] = None
    first_hit: Optional[np.ndarray] = None
    trial_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_trials(self) -> int:
        return self.states.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            states=self.states[i],
            seed=self.seed,
            alpha=float(self.alphas[0]) if len(self.alphas) else 0.0,
            psi_values=None if self.psi is None else self.psi[i],
            complements=None if self.complements is None else self.complements[i],
        )


def initial_state(spec: AlgorithmSpec, theta0):
    """Coerce a state object or a flat parameter vector to the state type of ``spec``."""
    if isinstance(theta0, (EsState, PbilState)):
        state = theta0
    else:
        vec = np.atleast_1d(np.asarray(theta0, dtype=float))
        if vec.shape != (spec.n_params,):
            raise InputError(f"expected {spec.n_params} parameters for {spec.kind}, got {vec.shape}")
        if spec.kind == ES_FIXED:
            state = EsState(np.zeros(spec.dim), vec[0])
        elif spec.kind == ES_FULL:
            state = EsState(vec[:-1], vec[-1])
        else:
            state = PbilState(vec)
    if spec.is_pbil != isinstance(state, PbilState):
        raise InputError(f"state type {type(state).__name__} does not match {spec.kind}")
    if isinstance(state, EsState) and state.m.shape != (spec.dim,):
        raise InputError("mean vector has the wrong dimension")
    if isinstance(state, PbilState) and state.theta.shape != (spec.dim,):
        raise InputError("PBIL parameter has the wrong dimension")
    return state


def state_vector(spec: AlgorithmSpec, state) -> np.ndarray:
    if isinstance(state, PbilState):
        return state.theta.copy()
    if spec.kind == ES_FIXED:
        return np.array([state.v])
    return np.concatenate([state.m, [state.v]])


def _noise_shape(spec: AlgorithmSpec):
    return (spec.scheme.lam, spec.dim)


def _draw(rng, spec: AlgorithmSpec, size):
    if spec.is_pbil:
        return rng.random(size)
    return rng.standard_normal(size)


# Batched kernels. Leading axis = trials; they return the updated arrays and
# the update direction F_n.

def _es_kernel(spec, m, v, z, alpha):
    d = spec.dim
    sv = np.sqrt(v)
    x = m[:, None, :] + sv[:, None, None] * z
    w = assign_weights(spec.objective(x), spec.scheme)
    r = np.sum(np.square(z), axis=-1) / d
    dv_rel = np.sum(w * (r - 1.0), axis=-1)
    v_new = v * (1.0 + alpha * dv_rel)
    dir_v = v * dv_rel
    if spec.kind == ES_FULL:
        dir_m = spec.kappa * sv[:, None] * np.einsum("tl,tld->td", w, z)
        m_new = m + alpha * dir_m
    else:
        dir_m = np.zeros_like(m)
        m_new = m
    return m_new, v_new, dir_m, dir_v, x


def _pbil_kernel(spec, theta, comp, u, alpha):
    x = (u < theta[:, None, :]).astype(float)
    w = assign_weights(spec.objective(x), spec.scheme)
    s1 = np.einsum("tl,tld->td", w, x)
    s0 = np.sum(w, axis=-1)[:, None] - s1
    direction = s1 * comp - s0 * theta
    theta_new = theta * (1.0 - alpha * s0) + alpha * s1 * comp
    comp_new = comp * (1.0 - alpha * s1) + alpha * s0 * theta
    return theta_new, comp_new, direction, x


def update_direction(spec: AlgorithmSpec, state, noise) -> np.ndarray:
    """``F_n`` at a fixed state for a batch of noise draws of shape ``(n, lam, dim)``.

    Returns an ``(n, n_params)`` array laid out like :func:`state_vector`.
    """
    noise = np.asarray(noise, dtype=float)
    n = noise.shape[0]
    if spec.is_pbil:
        theta = np.broadcast_to(state.theta, (n, spec.dim)).copy()
        comp = np.broadcast_to(state.comp, (n, spec.dim)).copy()
        return _pbil_kernel(spec, theta, comp, noise, 0.0)[2]
    m = np.broadcast_to(state.m, (n, spec.dim)).copy()
    v = np.full(n, state.v)
    _, _, dir_m, dir_v, _ = _es_kernel(spec, m, v, noise, 0.0)
    if spec.kind == ES_FIXED:
        return dir_v[:, None]
    return np.concatenate([dir_m, dir_v[:, None]], axis=1)


def es_step(state: EsState, spec: AlgorithmSpec, rng, alpha: Optional[float] = None) -> EsState:
    """One ES iteration. ``rng`` only needs a ``standard_normal(size)`` method."""
    if spec.is_pbil:
        raise InputError("es_step called with a PBIL spec")
    a = spec.alpha if alpha is None else alpha
    z = np.asarray(rng.standard_normal(_noise_shape(spec)), dtype=float)[None]
    m_new, v_new, *_ = _es_kernel(spec, state.m[None], np.array([state.v]), z, a)
    if not (v_new[0] > 0 and np.isfinite(v_new[0])):
        raise DomainExitError(f"ES variance left the domain: v={v_new[0]}", state=v_new[0])
    return EsState(m_new[0], v_new[0])


def pbil_step(state: PbilState, spec: AlgorithmSpec, rng, alpha: Optional[float] = None) -> PbilState:
    """One PBIL iteration. ``rng`` only needs a ``random(size)`` method."""
    if not spec.is_pbil:
        raise InputError("pbil_step called with an ES spec")
    a = spec.alpha if alpha is None else alpha
    u = np.asarray(rng.random(_noise_shape(spec)), dtype=float)[None]
    th, cp, _, _ = _pbil_kernel(spec, state.theta[None], state.comp[None], u, a)
    if not (np.all(th > 0) and np.all(cp > 0)):
        raise DomainExitError(f"PBIL parameter left (0, 1): {th[0]}", state=th[0])
    return PbilState(th[0], cp[0])


def _run_block(spec, state0, alphas, seed, trials, psi, hit_eps, chunk):
    n_iters = len(alphas)
    nt = len(trials)
    p = spec.n_params
    rngs = [trial_rng(seed, int(t)) for t in trials]
    states = np.empty((nt, n_iters + 1, p))
    comps = np.empty((nt, n_iters + 1, spec.dim)) if spec.is_pbil else None
    first_hit = np.full(nt, -1, dtype=np.int64) if hit_eps is not None else None

    if spec.is_pbil:
        theta = np.tile(state0.theta, (nt, 1))
        comp = np.tile(state0.comp, (nt, 1))
        states[:, 0] = theta
        comps[:, 0] = comp
    else:
        m = np.tile(state0.m, (nt, 1))
        v = np.full(nt, state0.v)
        states[:, 0] = _es_vec(spec, m, v)

    shape = _noise_shape(spec)
    for start in range(0, n_iters, chunk):
        stop = min(start + chunk, n_iters)
        block = np.stack([_draw(g, spec, (stop - start,) + shape) for g in rngs], axis=1)
        for i in range(start, stop):
            a = alphas[i]
            noise = block[i - start]
            if spec.is_pbil:
                theta, comp, _, x = _pbil_kernel(spec, theta, comp, noise, a)
                bad = ~(np.all(theta > 0, axis=1) & np.all(comp > 0, axis=1))
                states[:, i + 1] = theta
                comps[:, i + 1] = comp
            else:
                m, v, _, _, x = _es_kernel(spec, m, v, noise, a)
                bad = ~((v > 0) & np.isfinite(v))
                states[:, i + 1] = _es_vec(spec, m, v)
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise DomainExitError(
                    f"trial {int(trials[j])} left the parameter domain at iteration {i + 1}: "
                    f"{states[j, i + 1]}",
                    iteration=i + 1,
                    state=states[j, i + 1].copy(),
                )
            if first_hit is not None:
                hit = (spec.distance(x[:, 0, :]) < hit_eps) & (first_hit < 0)
                first_hit[hit] = i

    psi_vals = None
    if psi is not None:
        psi_vals = psi.on_states(states, comps)
    return states, comps, psi_vals, first_hit


def _es_vec(spec, m, v):
    if spec.kind == ES_FIXED:
        return v[:, None]
    return np.concatenate([m, v[:, None]], axis=1)


def run_ensemble(
    spec: AlgorithmSpec,
    theta0,
    n_iters: int,
    n_trials: int,
    seed: int,
    *,
    psi=None,
    alphas=None,
    hit_eps: Optional[float] = None,
    jobs: int = 1,
    chunk: int = 256,
) -> Ensemble:
    """Run ``n_trials`` independent trajectories of length ``n_iters``.

    ``alphas`` overrides the constant step size with a per-iteration schedule.
    With ``hit_eps`` the first iteration whose first candidate lies within
    ``hit_eps`` of the optimum is recorded per trial (-1 when never).
    """
    if n_iters < 0 or n_trials < 1:
        raise InputError("need n_iters >= 0 and n_trials >= 1")
    state0 = initial_state(spec, theta0)
    if alphas is None:
        alphas = np.full(n_iters, spec.alpha)
    else:
        alphas = np.asarray(alphas, dtype=float)
        if alphas.shape != (n_iters,) or np.any(alphas < 0):
            raise InputError("alphas must be a nonnegative sequence of length n_iters")
    trials = np.arange(n_trials)
    jobs = max(1, min(int(jobs), n_trials))
    blocks = np.array_split(trials, jobs)
    args = (spec, state0, alphas, seed)
    if jobs == 1:
        results = [_run_block(*args, blocks[0], psi, hit_eps, chunk)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_block, *args, b, psi, hit_eps, chunk) for b in blocks]
            results = [f.result() for f in futures]

    def cat(idx):
        parts = [r[idx] for r in results]
        return None if parts[0] is None else np.concatenate(parts, axis=0)

    return Ensemble(
        states=cat(0),
        seed=seed,
        alphas=alphas,
        psi=cat(2),
        complements=cat(1),
        first_hit=cat(3),
        trial_ids=trials,
    )


def run_trajectory(spec: AlgorithmSpec, theta0, n_iters: int, seed: int, psi=None) -> Trajectory:
    """Single seeded trajectory; identical to trial 0 of ``run_ensemble`` with the same seed."""
    ens = run_ensemble(spec, theta0, n_iters, 1, seed, psi=psi)
    traj = ens.trajectory(0)
    traj.alpha = spec.alpha
    return traj
