import math

import numpy as np
import pytest

import services.dynamics as dynamics
from conftest import G, pendulum_period
from models import PhaseState
from services.dynamics import (
    block_average,
    first_return_time,
    flow,
    integrate_orbit,
    jacobian_determinant,
    orbit_period,
    time_average,
    time_of_flight,
    verlet_step,
)
from services.hamiltonian_models import EquipartitionError, GuardBandError, StepCapExceededError


def test_step_is_reversible(pendulum):
    x = PhaseState(q=(0.5,), p=(2.0,))
    h = 0.01
    back = verlet_step(pendulum, verlet_step(pendulum, x, h), -h)
    assert abs(back.q[0] - x.q[0]) < 1e-12
    assert abs(back.p[0] - x.p[0]) < 1e-12


def test_step_is_volume_preserving(pendulum, ho2d):
    h = pendulum_period(0.0) / 1000
    assert abs(jacobian_determinant(pendulum, PhaseState(q=(0.5,), p=(1.0,)), h) - 1.0) < 1e-10
    x = PhaseState(q=(0.3, -0.4), p=(0.2, 0.9))
    assert abs(jacobian_determinant(ho2d, x, 0.01) - 1.0) < 1e-10


def test_zero_step_is_rejected(pendulum):
    with pytest.raises(EquipartitionError):
        verlet_step(pendulum, PhaseState(q=(0.0,), p=(1.0,)), 0.0)


def test_step_wraps_angles(pendulum):
    x = PhaseState(q=(3.1,), p=(10.0,))
    y = verlet_step(pendulum, x, 0.01)
    assert -math.pi < y.q[0] < 0.0


@pytest.mark.parametrize("E, component", [(-5.0, "oscillation"), (0.0, "oscillation"), (7.0, "oscillation"),
                                          (20.0, "rotation_pos")])
def test_energy_drift_within_budget(pendulum, E, component):
    period = orbit_period(pendulum, E, component)
    x0 = pendulum.initial_state_on_shell(E, component)
    record = integrate_orbit(pendulum, x0, 1000 * period, period / 1000)
    assert record.n_steps == 1_000_000
    assert record.max_energy_drift <= 5e-5 * (E - pendulum.e_min)
    assert not record.drift_warning


def test_orbit_record_layout(ho1d):
    record = integrate_orbit(ho1d, ho1d.initial_state_on_shell(1.0), 1.0, 0.1)
    assert record.n_steps == 10
    assert record.q.shape == (11, 1)
    assert np.all(np.diff(record.times) > 0)
    assert record.state(0) == ho1d.initial_state_on_shell(1.0)


def test_step_cap(monkeypatch, ho1d):
    monkeypatch.setattr(dynamics, "MAX_STEPS", 10)
    with pytest.raises(StepCapExceededError):
        integrate_orbit(ho1d, ho1d.initial_state_on_shell(1.0), 10.0, 0.1)


def test_ground_state_stays_fixed(pendulum):
    record = integrate_orbit(pendulum, pendulum.ground_state(), 1.0, 0.01)
    assert np.all(record.q == 0.0) and np.all(record.p == 0.0)
    assert record.max_energy_drift == 0.0


@pytest.mark.parametrize("E", [-8.0, 0.0, 5.0, 9.0])
def test_oscillation_period_matches_elliptic_integral(pendulum, E):
    assert orbit_period(pendulum, E, "oscillation") == pytest.approx(pendulum_period(E), rel=1e-8)


@pytest.mark.parametrize("E", [12.0, 20.0, 100.0])
def test_rotation_period_matches_elliptic_integral(pendulum, E):
    assert orbit_period(pendulum, E, "rotation_pos") == pytest.approx(pendulum_period(E), rel=1e-8)
    assert orbit_period(pendulum, E, "rotation_neg") == orbit_period(pendulum, E, "rotation_pos")


def test_period_values(pendulum, ho1d):
    assert orbit_period(pendulum, 0.0, "oscillation") == pytest.approx(2.3680, abs=5e-4)
    assert orbit_period(ho1d, 1.0, "oscillation") == pytest.approx(2.0 * math.pi, rel=1e-10)
    with pytest.raises(GuardBandError):
        orbit_period(pendulum, G, "oscillation")


@pytest.mark.parametrize("E, component", [(0.0, "oscillation"), (20.0, "rotation_pos")])
def test_first_return_matches_period(pendulum, E, component):
    period = orbit_period(pendulum, E, component)
    x0 = pendulum.initial_state_on_shell(E, component)
    record = integrate_orbit(pendulum, x0, 2.5 * period, period / 4000)
    assert first_return_time(record) == pytest.approx(period, rel=1e-6)


def test_first_return_needs_two_crossings(ho1d):
    record = integrate_orbit(ho1d, ho1d.initial_state_on_shell(1.0), 1.0, 0.01)
    with pytest.raises(EquipartitionError):
        first_return_time(record)


def test_time_average_of_kinetic_term(ho1d):
    period = 2.0 * math.pi
    f = lambda q, p: p[..., 0] ** 2
    estimate = time_average(ho1d, f, ho1d.initial_state_on_shell(1.0), 10 * period, period / 1000)
    assert estimate.method == "time_average"
    assert estimate.value == pytest.approx(1.0, rel=1e-4)
    assert estimate.n_samples == 10_000


def test_block_average():
    samples = np.arange(32, dtype=float)
    mean, err = block_average(samples, blocks=16)
    assert mean == pytest.approx(15.5)
    assert err > 0.0
    with pytest.raises(EquipartitionError):
        block_average(np.ones(8), blocks=16)


@pytest.mark.parametrize("q, p_sign, E", [(0.3, 1.0, 0.0), (0.3, -1.0, 0.0), (-0.8, -1.0, 5.0),
                                          (1.0, 1.0, 20.0), (1.0, -1.0, 20.0)])
def test_time_of_flight_advances_with_the_flow(pendulum, q, p_sign, E):
    p = p_sign * float(pendulum.momentum_on_shell(q, E))
    x = PhaseState(q=(q,), p=(p,))
    delta = 1e-2
    moved = flow(pendulum, x, delta, 1000)
    assert (time_of_flight(pendulum, moved) - time_of_flight(pendulum, x)) / delta == pytest.approx(1.0, rel=1e-6)


def test_time_of_flight_is_zero_at_reference_point(pendulum):
    x = pendulum.initial_state_on_shell(0.0)
    assert time_of_flight(pendulum, x) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(EquipartitionError):
        time_of_flight(pendulum, pendulum.ground_state())


def test_oscillator_returns_after_one_period(ho1d):
    x0 = ho1d.initial_state_on_shell(1.0)
    record = integrate_orbit(ho1d, x0, 2.0 * math.pi, 2.0 * math.pi / 1000)
    assert record.n_steps == 1000
    assert abs(record.q[-1, 0] - x0.q[0]) <= 1e-4
    assert abs(record.p[-1, 0] - x0.p[0]) <= 1e-4


def test_time_average_does_not_depend_on_start_point(pendulum):
    E = 5.0
    period = orbit_period(pendulum, E, "oscillation")
    f = lambda q, p: p[..., 0] ** 2
    x0 = pendulum.initial_state_on_shell(E)
    later = flow(pendulum, x0, 0.3 * period, 300)
    first = time_average(pendulum, f, x0, 20 * period, period / 1000)
    second = time_average(pendulum, f, later, 20 * period, period / 1000)
    assert first.std_error > 0.0
    assert abs(first.value - second.value) <= 2.0 * math.hypot(first.std_error, second.std_error)


def test_integrated_orbit_matches_single_steps(pendulum):
    x0 = pendulum.initial_state_on_shell(20.0, "rotation_pos")
    record = integrate_orbit(pendulum, x0, 0.5, 0.01)
    x = x0
    for _ in range(record.n_steps):
        x = verlet_step(pendulum, x, 0.01)
    assert record.q[-1, 0] == pytest.approx(x.q[0], abs=1e-10)
    assert record.p[-1, 0] == pytest.approx(x.p[0], abs=1e-10)


def _random_regular_states(pendulum, count, seed=0):
    rng = np.random.default_rng(seed)
    states = []
    while len(states) < count:
        if rng.random() < 0.5:
            E = rng.uniform(-8.0, 8.0)
            q_max = float(np.arccos(-E / G))
            # keep clear of the lower turning point, where the flight time restarts
            q = rng.uniform(-0.8, 1.0) * q_max
        else:
            E = rng.uniform(11.0, 40.0)
            # keep clear of the seam, where the flight time jumps by one period
            q = rng.uniform(-2.8, 2.8)
        p = float(pendulum.momentum_on_shell(q, E))
        if p < 1e-3:
            continue
        states.append(PhaseState(q=(q,), p=(p if rng.random() < 0.5 else -p,)))
    return states


def test_time_of_flight_derivative_at_random_states(pendulum):
    delta = 1e-2
    for x in _random_regular_states(pendulum, 50):
        moved = flow(pendulum, x, delta, 1000)
        rate = (time_of_flight(pendulum, moved) - time_of_flight(pendulum, x)) / delta
        assert rate == pytest.approx(1.0, rel=1e-6), f"state {x}"


def test_time_of_flight_to_seam_is_half_rotation(pendulum):
    E = 20.0
    period = orbit_period(pendulum, E, "rotation_pos")
    p = float(pendulum.momentum_on_shell(math.pi, E))
    x = PhaseState(q=(math.pi - 1e-12,), p=(p,))
    assert time_of_flight(pendulum, x) == pytest.approx(0.5 * period, rel=1e-8)
