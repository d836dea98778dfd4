import math

import numpy as np
import pytest

from matching_pendulum.matching_law import DEFAULT_DESIGN
from matching_pendulum.pendulum_model import State, energy, vector_field
from matching_pendulum.sim_engine import (
    Scenario,
    Trajectory,
    classify,
    lyapunov_increase,
    matching_law,
    rk4_step,
    simulate,
    tau_sweep,
)


def test_rk4_local_error_linear_decay():
    y = rk4_step(lambda z: -z, np.array([1.0]), 0.1)
    assert abs(y[0] - math.exp(-0.1)) < 1e-7


def test_rk4_zero_field():
    s = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(rk4_step(lambda z: np.zeros(4), s, 0.5), s)


def test_rk4_exact_for_cubic():
    # classical RK4 integrates y' = t^3 (autonomised) without error
    f = lambda z: np.array([1.0, z[0] ** 3])
    y = rk4_step(f, np.array([0.0, 0.0]), 1.0)
    assert y[1] == pytest.approx(0.25, abs=1e-15)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(controller="pid")
    with pytest.raises(ValueError):
        Scenario(mode="hybrid")
    with pytest.raises(ValueError):
        Scenario(mode="sampled", tau=1e-4, dt=1e-3)
    with pytest.raises(ValueError):
        Scenario(dt=0.0)


@pytest.mark.parametrize("controller", ["matching", "linear", "none"])
@pytest.mark.parametrize("mode", ["continuous", "sampled"])
def test_origin_is_equilibrium(controller, mode):
    tr = simulate(Scenario(controller=controller, mode=mode, initial=State(), horizon=2.0))
    assert np.max(np.abs(tr.states)) < 1e-12
    assert tr.status == "converged"


def test_determinism():
    sc = Scenario(initial=State(0.4), horizon=3.0)
    a, b = simulate(sc), simulate(sc)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.u, b.u) and np.array_equal(a.H, b.H)
    sc = sc.replace(mode="sampled")
    a, b = simulate(sc), simulate(sc)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.x_hat, b.x_hat)


def test_uncontrolled_energy():
    tr = simulate(Scenario(controller="none", initial=State(0.4), horizon=10.0))
    e = np.array([energy(s) for s in tr.states])
    assert np.max(np.abs(e - e[0])) < 1e-8


def test_divergence_terminates():
    tr = simulate(Scenario(controller="none", initial=State(0.4), horizon=60.0, divergence_bound=5.0))
    assert tr.terminated and tr.status == "diverged"
    assert tr.t[-1] < 60.0


def test_geometry_failure_recorded():
    tr = simulate(Scenario(initial=State(1.6), horizon=1.0))
    assert tr.geometry_failed and tr.status == "diverged"


def make_traj(norms, horizon):
    t = np.linspace(0.0, horizon, len(norms))
    states = np.zeros((len(norms), 4))
    states[:, 0] = norms
    return Trajectory(t=t, states=states, u=np.zeros(len(norms)))


def test_classify_zero_trajectory():
    v = classify(make_traj(np.zeros(11), 10.0))
    assert v.status == "converged" and v.settling_time == 0.0 and v.peak_norm == 0.0


def test_classify_settling_time():
    norms = np.array([0.5, 0.3, 0.1, 0.01, 0.01, 0.01, 0.005, 0.0, 0.0, 0.0, 0.0])
    v = classify(make_traj(norms, 10.0))
    assert v.status == "converged" and v.settling_time == 3.0 and v.peak_norm == 0.5


def test_classify_not_settled():
    norms = np.array([0.5, 0.01, 0.01, 0.5])
    assert classify(make_traj(norms, 3.0)).status == "horizon-reached"


def test_classify_terminated():
    tr = make_traj(np.array([0.1, 100.0]), 1.0)
    tr.terminated = True
    assert classify(tr).status == "diverged"


def test_lyapunov_non_increasing_small_ic():
    tr = simulate(Scenario(initial=State(0.4), horizon=20.0))
    inc, crossings = lyapunov_increase(tr, matching_law(DEFAULT_DESIGN))
    assert inc < 1e-8
    assert np.all(np.isfinite(tr.H))


def test_lyapunov_rate_matches_time_series():
    """Five-point time derivative of the recorded H_hat against the analytic rate."""
    law = matching_law(DEFAULT_DESIGN)
    tr = simulate(Scenario(initial=State(0.4), horizon=20.0))
    dt = tr.t[1] - tr.t[0]
    regions = [law.region(th, x) for th, x in tr.states[:, :2].tolist()]
    worst = 0.0
    for k in range(2, len(tr) - 2, 3):
        if len(set(regions[k - 2 : k + 3])) > 1:
            continue
        H = tr.H[k - 2 : k + 3]
        fd = (H[0] - 8 * H[1] + 8 * H[3] - H[4]) / (12 * dt)
        worst = max(worst, abs(fd - law.lyapunov_rate(tr.states[k])))
        assert law.lyapunov_rate(tr.states[k]) <= 1e-10
    assert worst < 1e-5


def test_sampled_record_shapes():
    tr = simulate(Scenario(mode="sampled", horizon=1.0))
    assert tr.x_hat.shape == tr.states.shape
    assert tr.discrete is not None and tr.discrete.tau == 0.0143


def test_sweep_small():
    base = Scenario(mode="sampled", initial=State(0.4), horizon=20.0)
    res = tau_sweep(base, [0.0143, 0.3])
    taus = [tau for tau, _ in res.rows]
    assert taus == [0.0143, 0.3]
    assert res.rows[0][1].status == "converged"
    assert res.largest_converged is not None and res.largest_converged >= 0.0143


def test_sweep_single_tau():
    base = Scenario(mode="sampled", initial=State(0.4), horizon=2.0)
    res = tau_sweep(base, [0.0143])
    assert not res.non_monotone


def test_sweep_requires_sampled():
    with pytest.raises(ValueError):
        tau_sweep(Scenario(), [0.01])
