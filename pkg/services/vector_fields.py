# services/vector_fields.py
import re
from typing import Callable, Optional, Sequence

import numpy as np

from config import logger
from models import CoordinateFieldIndex, PhaseState
from .hamiltonian_models import HamiltonianModel, ParameterError, Pendulum, wrap_angle

# f(q, p) -> values, broadcasting over leading axes of q and p (shape (..., n))
PhaseFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

CUSTOM_FIELD_TOKEN = "pcubed"
_COORDINATE_TOKEN = re.compile(r"^f([1-9])([1-9])$")


class VectorFieldSpec:
    """
    A phase-space vector field X = X^mu d/dx^mu with its analytic divergence.

    Components are ordered q-directions first, then p-directions. A field whose
    multiplier is a wrapped angle records the seam as `seam_coordinate`.
    """

    def __init__(self, name: str, n: int, components: Sequence[PhaseFunction], divergence: PhaseFunction,
                 seam_coordinate: Optional[int] = None,
                 coordinate_index: Optional[CoordinateFieldIndex] = None,
                 constant_divergence: Optional[float] = None):
        if len(components) != 2 * n:
            raise ParameterError(f"field '{name}' needs {2 * n} components, got {len(components)}")
        self.name = name
        self.n = n
        self.components = tuple(components)
        self.divergence = divergence
        self.seam_coordinate = seam_coordinate
        self.coordinate_index = coordinate_index
        self.constant_divergence = constant_divergence

    def __repr__(self) -> str:
        return f"VectorFieldSpec(name={self.name!r}, locus={self.discontinuity_locus})"

    @property
    def discontinuity_locus(self) -> str:
        if self.seam_coordinate is None:
            return "none"
        return f"angular_seam({self.seam_coordinate})"

    def evaluate(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return np.stack([np.broadcast_to(c(q, p), q.shape[:-1]) for c in self.components], axis=-1)

    def div(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(self.divergence(q, np.asarray(p, dtype=float)), q.shape[:-1])

    def derivative_of_energy(self, model: HamiltonianModel, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """X(H) = sum_mu X^mu dH/dx^mu, vectorized over leading axes."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        grad = np.concatenate([model.grad_potential(q), model.velocity(p)], axis=-1)
        return np.sum(self.evaluate(q, p) * grad, axis=-1)

    def observable(self, model: HamiltonianModel) -> PhaseFunction:
        def f(q, p):
            return self.derivative_of_energy(model, q, p)
        return f


def _coordinate(model: HamiltonianModel, k: int) -> PhaseFunction:
    if k < model.n:
        if model.is_angle(k):
            return lambda q, p: wrap_angle(q[..., k])
        return lambda q, p: q[..., k]
    return lambda q, p: p[..., k - model.n]


def _zero(q, p):
    return np.zeros(q.shape[:-1])


def coordinate_field(model: HamiltonianModel, idx: CoordinateFieldIndex) -> VectorFieldSpec:
    """The field x^i d/dx^j, whose divergence in canonical coordinates is delta^i_j."""
    dim = 2 * model.n
    if idx.i >= dim or idx.j >= dim:
        raise ParameterError(f"coordinate field index ({idx.i}, {idx.j}) out of range for {dim} coordinates")
    multiplier = _coordinate(model, idx.i)
    components = [multiplier if mu == idx.j else _zero for mu in range(dim)]
    delta = 1.0 if idx.i == idx.j else 0.0
    return VectorFieldSpec(
        name=f"f{idx.i + 1}{idx.j + 1}",
        n=model.n,
        components=components,
        divergence=lambda q, p: np.full(q.shape[:-1], delta),
        seam_coordinate=idx.i if model.is_angle(idx.i) else None,
        coordinate_index=idx,
        constant_divergence=delta,
    )


def custom_pendulum_field() -> VectorFieldSpec:
    """X = (1/3) p^3 sin^2(q) d/dp, smooth on the cylinder, div X = p^2 sin^2(q)."""
    def x_p(q, p):
        return p[..., 0] ** 3 * np.sin(q[..., 0]) ** 2 / 3.0

    def divergence(q, p):
        return p[..., 0] ** 2 * np.sin(q[..., 0]) ** 2

    return VectorFieldSpec(name=CUSTOM_FIELD_TOKEN, n=1, components=[_zero, x_p], divergence=divergence)


def derive_along(field: VectorFieldSpec, model: HamiltonianModel, x: PhaseState) -> float:
    model.check_dimension(x)
    q, p = x.arrays()
    return float(field.derivative_of_energy(model, q, p))


def field_from_token(model: HamiltonianModel, token: str) -> VectorFieldSpec:
    """Resolves CLI tokens: `fIJ` (1-based coordinate field) or `pcubed`."""
    token = token.strip().lower()
    if token == CUSTOM_FIELD_TOKEN:
        if not isinstance(model, Pendulum):
            raise ParameterError(f"field '{CUSTOM_FIELD_TOKEN}' is only defined for the pendulum")
        return custom_pendulum_field()
    match = _COORDINATE_TOKEN.match(token)
    if not match:
        raise ParameterError(f"Unknown field token '{token}'. Use fIJ (e.g. f11) or '{CUSTOM_FIELD_TOKEN}'.")
    idx = CoordinateFieldIndex(i=int(match.group(1)) - 1, j=int(match.group(2)) - 1)
    field = coordinate_field(model, idx)
    logger.debug(f"Resolved field token '{token}' to {field!r}")
    return field


def fd_divergence(field: VectorFieldSpec, x: PhaseState, step: float = 1e-6) -> float:
    """Sum of central differences dX^mu/dx^mu; used to validate analytic divergences."""
    q, p = x.arrays()
    point = np.concatenate([q, p])
    n = field.n
    total = 0.0
    for mu in range(2 * n):
        delta = step * max(1.0, abs(point[mu]))
        plus, minus = point.copy(), point.copy()
        plus[mu] += delta
        minus[mu] -= delta
        forward = field.components[mu](plus[:n], plus[n:])
        backward = field.components[mu](minus[:n], minus[n:])
        total += float(forward - backward) / (2.0 * delta)
    return total
