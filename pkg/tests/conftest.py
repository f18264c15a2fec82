# tests/conftest.py
import math
import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import pytest

from models import McConfig
from services.hamiltonian_models import HarmonicOscillator1D, HarmonicOscillator2D, Pendulum

G = 9.81


def agm(a: float, b: float) -> float:
    """Arithmetic-geometric mean, iterated to machine precision."""
    for _ in range(64):
        if abs(a - b) <= 1e-15 * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return a


def ellipk(m: float) -> float:
    """Complete elliptic integral of the first kind K(m), parameter m = k^2."""
    return math.pi / (2.0 * agm(1.0, math.sqrt(1.0 - m)))


def pendulum_period(E: float, g: float = G, inertia: float = 1.0) -> float:
    """Closed-form period of one oscillation (E < g) or one full rotation (E > g)."""
    if E < g:
        return 4.0 * math.sqrt(inertia / g) * ellipk(0.5 * (1.0 + E / g))
    return 2.0 * math.sqrt(2.0 * inertia / (E + g)) * ellipk(2.0 * g / (E + g))


@pytest.fixture
def pendulum():
    return Pendulum(g=G)


@pytest.fixture
def ho1d():
    return HarmonicOscillator1D(omega=1.0)


@pytest.fixture
def ho2d():
    return HarmonicOscillator2D(omega1=1.0, omega2=1.0)


@pytest.fixture
def small_mc():
    return McConfig(n_samples=200_000, seed=7)
