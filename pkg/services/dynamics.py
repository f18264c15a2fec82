# services/dynamics.py
import math
from typing import Callable

import numpy as np
from scipy import integrate

from config import BLOCK_COUNT, DRIFT_BUDGET, MAX_STEPS, QUAD_TOL, logger
from models import Estimate, OrbitRecord, PhaseState
from .hamiltonian_models import (
    EquipartitionError,
    HamiltonianModel,
    NonSeparableModelError,
    OrbitSegment,
    StepCapExceededError,
    wrap_angle,
)

PhaseFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

QUAD_LIMIT = 200


def _angle_mask(model: HamiltonianModel) -> np.ndarray:
    return np.array([flag == "circle" for flag in model.topology])


def _leapfrog(model: HamiltonianModel, q: np.ndarray, p: np.ndarray, h: float):
    """Kick-drift-kick on arrays; returns the new (q, p) with angles re-wrapped."""
    mask = _angle_mask(model)
    p_half = p - 0.5 * h * model.grad_potential(q)
    q_new = q + h * model.velocity(p_half)
    if mask.any():
        q_new = np.where(mask, wrap_angle(q_new), q_new)
    p_new = p_half - 0.5 * h * model.grad_potential(q_new)
    return q_new, p_new


def verlet_step(model: HamiltonianModel, x: PhaseState, h: float) -> PhaseState:
    """One Stormer-Verlet step. A negative h runs the step backwards."""
    if not model.separable:
        raise NonSeparableModelError(f"{model.name} is not separable; leapfrog does not apply")
    if h == 0.0:
        raise EquipartitionError("step size must be nonzero")
    model.check_dimension(x)
    q, p = _leapfrog(model, *x.arrays(), h)
    return PhaseState.from_arrays(q, p)


def flow(model: HamiltonianModel, x: PhaseState, t: float, steps: int) -> PhaseState:
    """Advances x by time t (either sign) in `steps` equal leapfrog steps."""
    q, p = x.arrays()
    h = t / steps
    for _ in range(steps):
        q, p = _leapfrog(model, q, p, h)
    return PhaseState.from_arrays(q, p)


def _history(model: HamiltonianModel, x0: PhaseState, h: float, n_steps: int):
    mask = _angle_mask(model)
    wraps = bool(mask.any())
    inv_mass = 1.0 / model.inertia
    half = 0.5 * h

    q_hist = np.empty((n_steps + 1, model.n))
    p_hist = np.empty((n_steps + 1, model.n))
    q, p = x0.arrays()
    q_hist[0], p_hist[0] = q, p
    f = model.grad_potential(q)
    for k in range(1, n_steps + 1):
        p = p - half * f
        q = q + h * p * inv_mass
        if wraps:
            q = np.where(mask, wrap_angle(q), q)
        f = model.grad_potential(q)
        p = p - half * f
        q_hist[k] = q
        p_hist[k] = p
    return q_hist, p_hist


def _history_one_dof(model: HamiltonianModel, x0: PhaseState, h: float, n_steps: int):
    """The same kick-drift-kick loop on Python floats."""
    force = model.scalar_force
    wraps = model.topology[0] == "circle"
    inv_mass = 1.0 / float(model.inertia[0])
    half = 0.5 * h
    two_pi = 2.0 * math.pi

    q, p = x0.q[0], x0.p[0]
    qs, ps = [q], [p]
    f = force(q)
    for _ in range(n_steps):
        p -= half * f
        q += h * p * inv_mass
        if wraps:
            # Python's float % matches np.mod, so this is wrap_angle on a scalar
            q = math.pi - (math.pi - q) % two_pi
        f = force(q)
        p -= half * f
        qs.append(q)
        ps.append(p)
    return np.array(qs).reshape(-1, 1), np.array(ps).reshape(-1, 1)


def _step_count(t_end: float, h: float) -> int:
    # tolerate rounding when t_end is an exact multiple of h
    return max(1, int(math.ceil(t_end / h * (1.0 - 1e-12))))


def integrate_orbit(model: HamiltonianModel, x0: PhaseState, t_end: float, h: float,
                    drift_budget: float = DRIFT_BUDGET) -> OrbitRecord:
    """
    Integrates x0 with fixed-step leapfrog up to t_end.

    The record holds the initial state plus one state per step. Energy drift is
    measured against H(x0); exceeding drift_budget * (E - e_min) sets drift_warning.
    """
    if not model.separable:
        raise NonSeparableModelError(f"{model.name} is not separable; leapfrog does not apply")
    if t_end <= 0 or h <= 0:
        raise EquipartitionError(f"t_end and h must be positive, got t_end={t_end}, h={h}")
    model.check_dimension(x0)
    n_steps = _step_count(t_end, h)
    if n_steps > MAX_STEPS:
        raise StepCapExceededError(f"{n_steps} steps requested, cap is {MAX_STEPS}")

    if model.n == 1:
        q_hist, p_hist = _history_one_dof(model, x0, h, n_steps)
    else:
        q_hist, p_hist = _history(model, x0, h, n_steps)

    E = model.energy(x0)
    drift = float(np.max(np.abs(model.energy_array(q_hist, p_hist) - E)))
    budget = drift_budget * max(E - model.e_min, 0.0)
    warning = drift > budget
    if warning:
        logger.warning(f"Energy drift {drift:.3e} exceeds budget {budget:.3e} for {model.name} at E={E}")
    logger.debug(f"Integrated {n_steps} steps for {model.name} at E={E}, drift={drift:.3e}")
    return OrbitRecord(
        model_name=model.name,
        E=E,
        h=h,
        q=q_hist,
        p=p_hist,
        times=h * np.arange(n_steps + 1),
        max_energy_drift=drift,
        drift_budget=budget,
        drift_warning=warning,
    )


def block_average(samples: np.ndarray, blocks: int = BLOCK_COUNT):
    """Mean of the samples and its standard error from contiguous block means."""
    if samples.shape[0] < blocks:
        raise EquipartitionError(f"need at least {blocks} samples for block averaging, got {samples.shape[0]}")
    block_means = np.array([np.mean(b) for b in np.array_split(samples, blocks)])
    return float(np.mean(samples)), float(np.std(block_means, ddof=1) / math.sqrt(blocks))


def time_average(model: HamiltonianModel, f: PhaseFunction, x0: PhaseState, t_end: float, h: float,
                 blocks: int = BLOCK_COUNT) -> Estimate:
    """Average of f over the left endpoints of each step of the integrated orbit."""
    record = integrate_orbit(model, x0, t_end, h)
    samples = np.asarray(f(record.q[:-1], record.p[:-1]), dtype=float)
    value, std_error = block_average(samples, blocks)
    return Estimate(value=value, std_error=std_error, method="time_average", n_samples=samples.shape[0])


def first_return_time(record: OrbitRecord, coordinate: int = 0) -> float:
    """Time between the first two upward crossings of the section q=0, p>0."""
    q = record.q[:, coordinate]
    p = record.p[:, coordinate]
    upward = (q[:-1] < 0.0) & (q[1:] >= 0.0) & (p[1:] > 0.0) & (np.abs(q[1:] - q[:-1]) < np.pi)
    hits = np.flatnonzero(upward)
    if hits.shape[0] < 2:
        raise EquipartitionError("orbit crosses the section q=0 fewer than twice")
    k0, k1 = hits[0], hits[1]
    t0 = record.times[k0] + record.h * (-q[k0]) / (q[k0 + 1] - q[k0])
    t1 = record.times[k1] + record.h * (-q[k1]) / (q[k1 + 1] - q[k1])
    return float(t1 - t0)


def jacobian_determinant(model: HamiltonianModel, x: PhaseState, h: float, delta: float = 1e-5) -> float:
    """Determinant of the central-difference Jacobian of one leapfrog step."""
    q, p = x.arrays()
    point = np.concatenate([q, p])
    n = model.n
    jac = np.empty((2 * n, 2 * n))
    for col in range(2 * n):
        plus, minus = point.copy(), point.copy()
        plus[col] += delta
        minus[col] -= delta
        out_plus = np.concatenate(_leapfrog(model, plus[:n], plus[n:], h))
        out_minus = np.concatenate(_leapfrog(model, minus[:n], minus[n:], h))
        jac[:, col] = (out_plus - out_minus) / (2.0 * delta)
    return float(np.linalg.det(jac))


# --- 1-DOF orbits: the time-of-flight measure dT ---

def adaptive_quad(integrand, a: float, b: float) -> float:
    value, _ = integrate.quad(integrand, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=QUAD_LIMIT)
    return value


def _turning_integrand(model: HamiltonianModel, segment: OrbitSegment, E: float, g: PhaseFunction):
    """Integrand in theta for q = c + r sin(theta); the 1/|p| endpoint singularity cancels against cos(theta)."""
    centre = 0.5 * (segment.q_lo + segment.q_hi)
    radius = 0.5 * (segment.q_hi - segment.q_lo)
    inertia = model.inertia[0]

    def integrand(theta: float) -> float:
        q = centre + radius * math.sin(theta)
        p_abs = float(model.momentum_on_shell(q, E))
        if p_abs <= 0.0:
            return 0.0
        qa = np.array([q])
        branches = g(qa, np.array([p_abs])) + g(qa, np.array([-p_abs]))
        return float(branches) * inertia * radius * math.cos(theta) / p_abs
    return integrand


def _winding_integrand(model: HamiltonianModel, segment: OrbitSegment, E: float, g: PhaseFunction):
    inertia = model.inertia[0]

    def integrand(q: float) -> float:
        p_abs = float(model.momentum_on_shell(q, E))
        return float(g(np.array([q]), np.array([segment.sign * p_abs]))) * inertia / p_abs
    return integrand


def orbit_integral(model: HamiltonianModel, E: float, component: str, g: PhaseFunction) -> float:
    """The integral of g dt over one traversal of the orbit component at energy E (n=1)."""
    model.require_one_dof()
    segment = model.orbit_segment(E, component)
    if segment.turning:
        return adaptive_quad(_turning_integrand(model, segment, E, g), -0.5 * math.pi, 0.5 * math.pi)
    return adaptive_quad(_winding_integrand(model, segment, E, g), segment.q_lo, segment.q_hi)


def _unit(q, p):
    return np.ones(q.shape[:-1])


def orbit_period(model: HamiltonianModel, E: float, component: str) -> float:
    """Period of the orbit component; equals Vol(Sigma_E) restricted to that component."""
    model.require_one_dof()
    model.require_regular(E)
    return orbit_integral(model, E, component, _unit)


def _flight_from_origin(model: HamiltonianModel, segment: OrbitSegment, E: float, q: float) -> float:
    """Unsigned-speed transit time from q=0 to q along the momentum branch, signed by direction in q."""
    inertia = model.inertia[0]
    if segment.turning:
        centre = 0.5 * (segment.q_lo + segment.q_hi)
        radius = 0.5 * (segment.q_hi - segment.q_lo)
        theta0 = math.asin(max(-1.0, min(1.0, (0.0 - centre) / radius)))
        theta1 = math.asin(max(-1.0, min(1.0, (q - centre) / radius)))

        def integrand(theta):
            s = centre + radius * math.sin(theta)
            p_abs = float(model.momentum_on_shell(s, E))
            return 0.0 if p_abs <= 0.0 else inertia * radius * math.cos(theta) / p_abs
        return adaptive_quad(integrand, theta0, theta1)
    return adaptive_quad(lambda s: inertia / float(model.momentum_on_shell(s, E)), 0.0, q)


def time_of_flight(model: HamiltonianModel, x: PhaseState) -> float:
    """
    Signed time from the reference point (0, +-|p|) of the orbit through x to x.

    Its differential dT satisfies X_H(T) = 1 away from the seam, which realizes
    the microcanonical measure on Sigma_E for one degree of freedom.
    """
    model.require_one_dof()
    model.check_dimension(x)
    q_arr, p_arr = x.arrays()
    if p_arr[0] == 0.0 and model.grad_potential(q_arr)[0] == 0.0:
        raise EquipartitionError(f"{x} is a stationary point; the flight time is undefined")
    E = model.energy(x)
    components = model.list_components(E)
    q = float(model.wrap(q_arr)[0])
    p = float(p_arr[0])
    if "oscillation" in components:
        segment = model.orbit_segment(E, "oscillation")
        if p >= 0.0:
            return _flight_from_origin(model, segment, E, q)
        quarter = _flight_from_origin(model, segment, E, segment.q_hi)
        return 2.0 * quarter - _flight_from_origin(model, segment, E, q)
    component = "rotation_pos" if p > 0.0 else "rotation_neg"
    segment = model.orbit_segment(E, component)
    travelled = _flight_from_origin(model, segment, E, q)
    return travelled if segment.sign > 0 else -travelled
