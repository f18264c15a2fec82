# services/hamiltonian_models.py
import math
from abc import ABC, abstractmethod
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from config import GUARD_BAND, logger
from models import CriticalValue, PhaseState


# --- Errors ---
class EquipartitionError(ValueError):
    """Base class for every precondition failure raised by the services."""


class DimensionMismatchError(EquipartitionError):
    pass


class GuardBandError(EquipartitionError):
    pass


class ComponentUnavailableError(EquipartitionError):
    pass


class NonSeparableModelError(EquipartitionError):
    pass


class StepCapExceededError(EquipartitionError):
    pass


class EmptyShellError(EquipartitionError):
    pass


class ParameterError(EquipartitionError):
    pass


def wrap_angle(q):
    """Maps angles to the representative in (-pi, pi]."""
    return np.pi - np.mod(np.pi - q, 2.0 * np.pi)


class OrbitSegment(NamedTuple):
    """The q-interval swept by one orbit component of a 1-DOF model.

    `turning` marks intervals bounded by turning points (both momentum branches
    are traversed); otherwise the orbit winds around the circle with momentum sign `sign`.
    """
    q_lo: float
    q_hi: float
    turning: bool
    sign: int


class HamiltonianModel(ABC):
    """
    A separable Hamiltonian H = sum p_i^2 / (2 m_i) + V(q) on T*Q.

    Subclasses supply the potential, its gradient, the ground state, the
    critical values and a bounding box of M_E. Instances are immutable.
    """
    name: str = "model"
    separable: bool = True

    def __init__(self, n: int, inertia, topology: Tuple[str, ...], params: Dict[str, float]):
        self.n = n
        self.inertia = np.asarray(inertia, dtype=float).reshape(n)
        self.topology = tuple(topology)
        self.params = dict(params)
        if len(self.topology) != n:
            raise ParameterError(f"{self.name}: topology needs one flag per coordinate")
        if np.any(self.inertia <= 0):
            raise ParameterError(f"{self.name}: masses must be positive")

    def __setattr__(self, key, value):
        if getattr(self, "_frozen", False):
            raise AttributeError(f"{type(self).__name__} is immutable")
        super().__setattr__(key, value)

    def _freeze(self):
        self.inertia.setflags(write=False)
        self._frozen = True

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{type(self).__name__}({params})"

    # --- Potential interface ---
    @abstractmethod
    def potential(self, q: np.ndarray) -> np.ndarray:
        """V(q) for q of shape (..., n)."""

    @abstractmethod
    def grad_potential(self, q: np.ndarray) -> np.ndarray:
        """dV/dq with the shape of q."""

    def scalar_force(self, q: float) -> float:
        """dV/dq at a scalar configuration of a 1-DOF model."""
        return float(self.grad_potential(np.array([q]))[0])

    @abstractmethod
    def ground_state(self) -> PhaseState:
        pass

    @abstractmethod
    def critical_values(self) -> Tuple[CriticalValue, ...]:
        pass

    @abstractmethod
    def bounding_box(self, E: float) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners (length 2n, q then p) of a box containing M_E."""

    @abstractmethod
    def list_components(self, E: float) -> Tuple[str, ...]:
        pass

    @abstractmethod
    def initial_state_on_shell(self, E: float, component: str = "oscillation") -> PhaseState:
        pass

    # --- Energy ---
    @property
    def e_min(self) -> float:
        return self.energy(self.ground_state())

    @property
    def critical_energies(self) -> Tuple[float, ...]:
        return tuple(cv.energy for cv in self.critical_values())

    def kinetic(self, p: np.ndarray) -> np.ndarray:
        return np.sum(p * p / (2.0 * self.inertia), axis=-1)

    def velocity(self, p: np.ndarray) -> np.ndarray:
        return p / self.inertia

    def energy_array(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.kinetic(np.asarray(p, dtype=float)) + self.potential(np.asarray(q, dtype=float))

    def check_dimension(self, x: PhaseState):
        if x.n != self.n:
            raise DimensionMismatchError(f"{self.name} has {self.n} degrees of freedom, state has {x.n}")

    def energy(self, x: PhaseState) -> float:
        self.check_dimension(x)
        q, p = x.arrays()
        return float(self.energy_array(q, p))

    def grad_energy(self, x: PhaseState) -> Tuple[np.ndarray, np.ndarray]:
        self.check_dimension(x)
        q, p = x.arrays()
        return self.grad_potential(q), self.velocity(p)

    # --- Topology ---
    def is_angle(self, coordinate: int) -> bool:
        """True when phase-space coordinate `coordinate` (q then p ordering) lives on a circle."""
        return coordinate < self.n and self.topology[coordinate] == "circle"

    def wrap(self, q: np.ndarray) -> np.ndarray:
        q = np.array(q, dtype=float)
        for k, flag in enumerate(self.topology):
            if flag == "circle":
                q[..., k] = wrap_angle(q[..., k])
        return q

    def harmonic_period(self) -> float:
        """Longest small-oscillation period about the ground state; the time scale for n>1 orbits."""
        q0, _ = self.ground_state().arrays()
        eps = 1e-4
        curvature = (self.grad_potential(q0 + eps) - self.grad_potential(q0 - eps)) / (2.0 * eps)
        return float(np.max(2.0 * np.pi * np.sqrt(self.inertia / curvature)))

    def seam_energy(self, coordinate: int) -> Optional[float]:
        """Lowest energy on the seam q_coordinate = +-pi, or None for line coordinates."""
        return None

    def seam_momentum_length(self, coordinate: int, E: float) -> float:
        """Measure of the momentum interval where the seam of `coordinate` lies inside M_E (n=1)."""
        return 0.0

    # --- Guard band around critical values ---
    def guard_width(self, e_crit: float) -> float:
        return GUARD_BAND * max(1.0, abs(e_crit))

    def critical_near(self, E: float) -> Optional[CriticalValue]:
        for cv in self.critical_values():
            if abs(E - cv.energy) < self.guard_width(cv.energy):
                return cv
        return None

    def require_regular(self, E: float):
        if E < self.e_min:
            raise EquipartitionError(f"E={E} lies below the ground-state energy {self.e_min} of {self.name}")
        cv = self.critical_near(E)
        if cv is not None:
            raise GuardBandError(
                f"E={E} lies within the guard band of the {cv.kind} energy {cv.energy} of {self.name}"
            )

    # --- 1-DOF orbit geometry ---
    def require_one_dof(self):
        if self.n != 1:
            raise DimensionMismatchError(f"{self.name} has {self.n} degrees of freedom; this needs n=1")

    def momentum_on_shell(self, q, E: float) -> np.ndarray:
        """Non-negative momentum |p| on Sigma_E above configuration q (n=1)."""
        q = np.asarray(q, dtype=float)
        kinetic = E - self.potential(q[..., None])
        return np.sqrt(np.maximum(2.0 * self.inertia[0] * kinetic, 0.0))

    def orbit_segment(self, E: float, component: str) -> OrbitSegment:
        raise ComponentUnavailableError(f"{self.name} does not describe 1-DOF orbit segments")

    def region_segment(self, E: float) -> OrbitSegment:
        """The q-range of M_E (n=1)."""
        return self.orbit_segment(E, "oscillation")


class Pendulum(HamiltonianModel):
    """Planar pendulum, H = p^2 / (2 m l^2) - m g l cos q on the cylinder."""
    name = "pendulum"

    def __init__(self, g: float = 9.81, m: float = 1.0, length: float = 1.0):
        if g <= 0 or m <= 0 or length <= 0:
            raise ParameterError("pendulum parameters g, m and length must be positive")
        super().__init__(1, [m * length ** 2], ("circle",), {"g": g, "m": m, "length": length})
        self.depth = m * g * length
        self._freeze()
        logger.debug(f"Pendulum initialized with g={g}, m={m}, length={length}")

    def potential(self, q):
        return -self.depth * np.cos(q[..., 0])

    def grad_potential(self, q):
        return self.depth * np.sin(q)

    def scalar_force(self, q: float) -> float:
        return self.depth * math.sin(q)

    def ground_state(self) -> PhaseState:
        return PhaseState(q=(0.0,), p=(0.0,))

    @property
    def e_min(self) -> float:
        return -self.depth

    def critical_values(self):
        return (CriticalValue(energy=-self.depth, kind="minimum"),
                CriticalValue(energy=self.depth, kind="separatrix"))

    def bounding_box(self, E: float):
        p_max = float(np.sqrt(max(2.0 * self.inertia[0] * (E + self.depth), 0.0)))
        return np.array([-np.pi, -p_max]), np.array([np.pi, p_max])

    def list_components(self, E: float):
        self.require_regular(E)
        if E < self.depth:
            return ("oscillation",)
        return ("rotation_pos", "rotation_neg")

    def initial_state_on_shell(self, E: float, component: str = "oscillation") -> PhaseState:
        if E < -self.depth:
            raise EquipartitionError(f"E={E} lies below the pendulum minimum {-self.depth}")
        if component == "oscillation" and E > self.depth:
            raise ComponentUnavailableError(f"no oscillation component at E={E} > {self.depth}")
        if component in ("rotation_pos", "rotation_neg") and E < self.depth:
            raise ComponentUnavailableError(f"no rotation component at E={E} < {self.depth}")
        if component not in ("oscillation", "rotation_pos", "rotation_neg"):
            raise ComponentUnavailableError(f"unknown pendulum component '{component}'")
        p0 = float(self.momentum_on_shell(0.0, E))
        if component == "rotation_neg":
            p0 = -p0
        return PhaseState(q=(0.0,), p=(p0,))

    def seam_energy(self, coordinate: int) -> Optional[float]:
        return self.depth if coordinate == 0 else None

    def seam_momentum_length(self, coordinate: int, E: float) -> float:
        if coordinate != 0 or E <= self.depth:
            return 0.0
        return 2.0 * float(self.momentum_on_shell(np.pi, E))

    def orbit_segment(self, E: float, component: str) -> OrbitSegment:
        if component == "oscillation":
            if not -self.depth < E < self.depth:
                raise ComponentUnavailableError(f"no oscillation component at E={E}")
            q_max = float(np.arccos(-E / self.depth))
            return OrbitSegment(-q_max, q_max, True, 0)
        if component in ("rotation_pos", "rotation_neg"):
            if E <= self.depth:
                raise ComponentUnavailableError(f"no rotation component at E={E}")
            return OrbitSegment(-np.pi, np.pi, False, 1 if component == "rotation_pos" else -1)
        raise ComponentUnavailableError(f"unknown pendulum component '{component}'")

    def region_segment(self, E: float) -> OrbitSegment:
        if E < self.depth:
            return self.orbit_segment(E, "oscillation")
        # above the separatrix M_E is the band |p| <= p_+(q) around the whole cylinder
        return OrbitSegment(-np.pi, np.pi, False, 0)


class HarmonicOscillator1D(HamiltonianModel):
    """H = p^2 / (2m) + m omega^2 q^2 / 2."""
    name = "ho1d"

    def __init__(self, omega: float = 1.0, m: float = 1.0):
        if omega <= 0 or m <= 0:
            raise ParameterError("oscillator frequency and mass must be positive")
        super().__init__(1, [m], ("line",), {"omega": omega, "m": m})
        self.stiffness = np.array([m * omega ** 2])
        self.stiffness.setflags(write=False)
        self.spring = float(m * omega ** 2)
        self._freeze()

    def potential(self, q):
        return 0.5 * np.sum(self.stiffness * q * q, axis=-1)

    def grad_potential(self, q):
        return self.stiffness * q

    def scalar_force(self, q: float) -> float:
        return self.spring * q

    def ground_state(self) -> PhaseState:
        return PhaseState(q=(0.0,), p=(0.0,))

    @property
    def e_min(self) -> float:
        return 0.0

    def critical_values(self):
        return (CriticalValue(energy=0.0, kind="minimum"),)

    def bounding_box(self, E: float):
        E = max(E, 0.0)
        q_max = np.sqrt(2.0 * E / self.stiffness)
        p_max = np.sqrt(2.0 * self.inertia * E)
        return np.concatenate([-q_max, -p_max]), np.concatenate([q_max, p_max])

    def list_components(self, E: float):
        self.require_regular(E)
        return ("oscillation",)

    def initial_state_on_shell(self, E: float, component: str = "oscillation") -> PhaseState:
        if E < 0.0:
            raise EquipartitionError(f"E={E} lies below the oscillator minimum 0")
        if component != "oscillation":
            raise ComponentUnavailableError(f"{self.name} only has an oscillation component")
        return PhaseState(q=(0.0,), p=(float(np.sqrt(2.0 * self.inertia[0] * E)),))

    def orbit_segment(self, E: float, component: str) -> OrbitSegment:
        if component != "oscillation" or E <= 0.0:
            raise ComponentUnavailableError(f"no {component} component at E={E}")
        q_max = float(np.sqrt(2.0 * E / self.stiffness[0]))
        return OrbitSegment(-q_max, q_max, True, 0)


class HarmonicOscillator2D(HamiltonianModel):
    """Two uncoupled oscillators, H = sum_k p_k^2 / (2m) + m omega_k^2 q_k^2 / 2."""
    name = "ho2d"

    def __init__(self, omega1: float = 1.0, omega2: float = 1.0, m: float = 1.0):
        if omega1 <= 0 or omega2 <= 0 or m <= 0:
            raise ParameterError("oscillator frequencies and mass must be positive")
        super().__init__(2, [m, m], ("line", "line"), {"omega1": omega1, "omega2": omega2, "m": m})
        self.omega = np.array([omega1, omega2])
        self.stiffness = m * self.omega ** 2
        self.omega.setflags(write=False)
        self.stiffness.setflags(write=False)
        self._freeze()

    def potential(self, q):
        return 0.5 * np.sum(self.stiffness * q * q, axis=-1)

    def grad_potential(self, q):
        return self.stiffness * q

    def ground_state(self) -> PhaseState:
        return PhaseState(q=(0.0, 0.0), p=(0.0, 0.0))

    @property
    def e_min(self) -> float:
        return 0.0

    def critical_values(self):
        return (CriticalValue(energy=0.0, kind="minimum"),)

    def bounding_box(self, E: float):
        E = max(E, 0.0)
        q_max = np.sqrt(2.0 * E / self.stiffness)
        p_max = np.sqrt(2.0 * self.inertia * E)
        return np.concatenate([-q_max, -p_max]), np.concatenate([q_max, p_max])

    def list_components(self, E: float):
        self.require_regular(E)
        return ("oscillation",)

    def initial_state_on_shell(self, E: float, component: str = "oscillation") -> PhaseState:
        if E < 0.0:
            raise EquipartitionError(f"E={E} lies below the oscillator minimum 0")
        if component != "oscillation":
            raise ComponentUnavailableError(f"{self.name} only has an oscillation component")
        # energy shared equally between the two modes
        p = np.sqrt(2.0 * self.inertia * E / self.n)
        return PhaseState(q=(0.0, 0.0), p=(float(p[0]), float(p[1])))

    def actions(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """I_k = (p_k^2 / m + m omega_k^2 q_k^2) / (2 omega_k), evaluated in Cartesian coordinates."""
        return (p * p / self.inertia + self.stiffness * q * q) / (2.0 * self.omega)


MODEL_REGISTRY = {
    Pendulum.name: Pendulum,
    HarmonicOscillator1D.name: HarmonicOscillator1D,
    HarmonicOscillator2D.name: HarmonicOscillator2D,
}


def build_model(name: str, params: Optional[Dict[str, float]] = None) -> HamiltonianModel:
    """Instantiates a registered model, applying parameter overrides by keyword."""
    model_cls = MODEL_REGISTRY.get(name.lower())
    if model_cls is None:
        raise ParameterError(f"Unknown model '{name}'. Available: {sorted(MODEL_REGISTRY)}")
    try:
        model = model_cls(**(params or {}))
    except TypeError as e:
        raise ParameterError(f"Invalid parameters for model '{name}': {e}") from e
    logger.info(f"Model built: {model!r}")
    return model
