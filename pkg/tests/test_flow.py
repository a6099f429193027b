import math

import numpy as np
import pytest

from geoconv.algorithms import ES_FIXED, PBIL_1D, AlgorithmSpec
from geoconv.certificates import pbil_certificate
from geoconv.errors import ConfigurationError, DomainExitError, InputError
from geoconv.flow import (
    StepSchedule,
    es_flow_exact,
    euler_ode_deviation,
    integrate_flow,
    pbil1_flow_exact,
    psi_deviation,
    psi_deviation_bound,
)
from geoconv.ranking import WeightScheme

W2 = WeightScheme((1.0, 0.0))
PBIL_SPEC = AlgorithmSpec(PBIL_1D, W2, 0.01)


def logistic(th):
    return th * (1 - th)


def test_schedule_sums():
    s = StepSchedule((0.1, 0.2, 0.3))
    assert s.t(0, 3) == pytest.approx(0.6)
    assert s.eps(1, 2) == pytest.approx(0.13)
    np.testing.assert_allclose(s.times(), [0, 0.1, 0.3, 0.6])
    with pytest.raises(InputError):
        StepSchedule((0.1, 0.0))


def test_zero_field_constant_path():
    p = integrate_flow(lambda y: np.zeros_like(y), [0.3, 2.0], 1.0, 0.1)
    assert np.all(p.points == [0.3, 2.0])
    assert p.times[-1] == 1.0


def test_rk4_logistic_example():
    p = integrate_flow(logistic, 0.5, math.log(2), 1e-3)
    assert p.points[-1, 0] == pytest.approx(2 / 3, abs=1e-8)


def test_rk4_exponential_example():
    p = integrate_flow(lambda v: -1.0 * v, 1.0, 1.0, 1e-3)
    assert p.points[-1, 0] == pytest.approx(math.exp(-1), abs=1e-8)


@pytest.mark.parametrize("theta0", [0.05, 0.5, 0.95])
def test_rk4_vs_closed_forms(theta0):
    p = integrate_flow(logistic, theta0, 5.0, 1e-3)
    assert np.max(np.abs(p.points[:, 0] - pbil1_flow_exact(theta0, p.times))) <= 1e-8
    L = 0.7
    q = integrate_flow(lambda v: -L * v, 3 * theta0, 5.0, 1e-3)
    assert np.max(np.abs(q.points[:, 0] - es_flow_exact(3 * theta0, q.times, L))) <= 1e-8


def test_exit_detection():
    with pytest.raises(DomainExitError):
        integrate_flow(lambda v: -np.ones_like(v), 0.5, 2.0, 0.01, in_domain=lambda v: bool(np.all(v > 0)))


def test_pbil_flow_examples():
    assert pbil1_flow_exact(0.3, 0.0) == 0.3
    assert pbil1_flow_exact(0.5, math.log(2)) == pytest.approx(2 / 3, rel=1e-15)
    t = np.linspace(0, 60, 200)
    phi = pbil1_flow_exact(0.2, t)
    assert np.all(np.diff(phi) >= 0) and phi[-1] == pytest.approx(1.0)


def test_es_flow_examples():
    assert es_flow_exact(2.0, 0.0, 1.0) == 2.0
    assert es_flow_exact(1.0, 1.0, 1.0) == pytest.approx(0.367879, abs=1e-6)
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(np.sqrt(es_flow_exact(4.0, t, 0.3)), 2.0 * np.exp(-0.15 * t), rtol=1e-14)


@pytest.mark.parametrize("s, t", [(0.3, 1.1), (2.0, 0.5), (0.0, 3.0)])
def test_semigroup(s, t):
    for th in (0.1, 0.5, 0.9):
        assert pbil1_flow_exact(th, s + t) == pytest.approx(pbil1_flow_exact(pbil1_flow_exact(th, s), t), abs=1e-8)
        assert es_flow_exact(th, s + t, 0.4) == pytest.approx(es_flow_exact(es_flow_exact(th, s, 0.4), t, 0.4), abs=1e-8)


def test_euler_noiseless_small_error():
    sched = StepSchedule.constant(0.01, 100)
    res = euler_ode_deviation(PBIL_SPEC, [0.5], sched, 100, 1, 0, noiseless=True)
    assert res.empirical < 1e-3
    assert res.empirical <= res.bound


def test_euler_noiseless_es_requires_constants():
    spec = AlgorithmSpec(ES_FIXED, W2, 0.01)
    sched = StepSchedule.constant(0.01, 50)
    with pytest.raises(ConfigurationError):
        euler_ode_deviation(spec, [1.0], sched, 50, 1, 0)
    res = euler_ode_deviation(spec, [1.0], sched, 50, 1, 0, L=0.6, K=1.0, noiseless=True)
    assert res.empirical <= 0.01 * 0.6**2 * 50 * 0.01


def test_euler_pbil_example():
    sched = StepSchedule.constant(0.01, 100)
    res = euler_ode_deviation(PBIL_SPEC, [0.5], sched, 100, 500, seed=0)
    assert res.empirical <= res.bound
    assert res.per_step[0] == 0.0


def test_euler_bound_nondecreasing_in_N():
    sched = StepSchedule.constant(0.02, 60)
    bounds = [euler_ode_deviation(PBIL_SPEC, [0.4], sched, n, 1, 0, noiseless=True).bound for n in range(0, 61, 5)]
    assert np.all(np.diff(bounds) >= 0)


def test_euler_random_configs():
    rng = np.random.default_rng(2024)
    for i in range(20):
        alpha = float(rng.uniform(0.002, 0.05))
        N = int(rng.integers(10, 200))
        th0 = float(rng.uniform(0.1, 0.9))
        res = euler_ode_deviation(PBIL_SPEC.with_alpha(alpha), [th0], StepSchedule.constant(alpha, N), N, 200, seed=i)
        assert res.empirical <= res.bound, (alpha, N, th0)


def test_euler_decreasing_schedule():
    sched = StepSchedule(tuple(0.05 / (1 + 0.1 * k) for k in range(100)))
    res = euler_ode_deviation(PBIL_SPEC, [0.3], sched, 100, 300, seed=3)
    assert res.empirical <= res.bound


def test_psi_deviation_pbil_example():
    cert = pbil_certificate()
    res = psi_deviation(PBIL_SPEC, cert, [0.5], 0.01, 50, 500, seed=0)
    assert res.empirical <= res.bound
    assert res.bound / cert.psi(0.5) <= cert.delta_A2(0.01, 0.5)


def test_psi_deviation_zero_steps():
    cert = pbil_certificate()
    res = psi_deviation(PBIL_SPEC, cert, [0.5], 0.01, 0, 10, seed=0)
    assert res.empirical == 0.0 and res.bound == 0.0


@pytest.mark.parametrize("alpha, N, th0", [(0.005, 100, 0.3), (0.02, 25, 0.7), (0.05, 10, 0.5)])
def test_psi_bound_below_delta_A2(alpha, N, th0):
    cert = pbil_certificate()
    assert psi_deviation_bound(cert, th0, alpha, N) / cert.psi(th0) <= cert.delta_A2(alpha, N * alpha)


def test_psi_deviation_needs_certificate():
    with pytest.raises(ConfigurationError):
        psi_deviation(PBIL_SPEC, None, [0.5], 0.01, 5, 2, 0)


def test_flow_csv(tmp_path):
    p = integrate_flow(logistic, 0.5, 0.01, 0.005)
    p.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "t,component_0"
    assert lines[1] == "0,0.5"
    assert len(lines) == 4
