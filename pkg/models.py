# models.py
import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import (
    AVERAGE_PERIODS,
    DEFAULT_SEED,
    FD_STEP,
    H_DIVISOR,
    MC_CHUNK_SIZE,
    MC_SAMPLES,
    N_JOBS,
)

EstimateMethod = Literal["time_average", "quadrature_1dof", "mc_volume", "mc_shell"]
Component = Literal["oscillation", "rotation_pos", "rotation_neg"]


class PhaseState(BaseModel):
    """A point (q, p) of the 2n-dimensional phase space."""
    model_config = ConfigDict(frozen=True)

    q: Tuple[float, ...]
    p: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_shape(self):
        if len(self.q) != len(self.p):
            raise ValueError(f"q and p must have the same length, got {len(self.q)} and {len(self.p)}")
        if len(self.q) < 1:
            raise ValueError("a phase state needs at least one degree of freedom")
        if not all(math.isfinite(v) for v in self.q + self.p):
            raise ValueError("phase state entries must be finite")
        return self

    @property
    def n(self) -> int:
        return len(self.q)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.q, dtype=float), np.asarray(self.p, dtype=float)

    @classmethod
    def from_arrays(cls, q, p) -> "PhaseState":
        q = np.atleast_1d(np.asarray(q, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return cls(q=tuple(float(v) for v in q), p=tuple(float(v) for v in p))


class CriticalValue(BaseModel):
    model_config = ConfigDict(frozen=True)

    energy: float
    kind: Literal["minimum", "separatrix"]


class CoordinateFieldIndex(BaseModel):
    """Field x^i d/dx^j; indices run over (q_0..q_{n-1}, p_0..p_{n-1})."""
    model_config = ConfigDict(frozen=True)

    i: int = Field(ge=0)
    j: int = Field(ge=0)


class Estimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    std_error: float = Field(ge=0.0)
    method: EstimateMethod
    n_samples: int = Field(ge=0)
    seed: Optional[int] = None
    # shell thickness used by mc_shell averages
    epsilon: Optional[float] = None

    @property
    def is_deterministic(self) -> bool:
        return self.method == "quadrature_1dof"


class McConfig(BaseModel):
    n_samples: int = Field(default=MC_SAMPLES, ge=10_000)
    seed: int = DEFAULT_SEED
    fd_step: float = Field(default=FD_STEP, gt=0.0, le=1e-2)
    # None selects the energy-relative default
    shell_thickness: Optional[float] = Field(default=None, gt=0.0)
    chunk_size: int = Field(default=MC_CHUNK_SIZE, gt=0)
    prefer_quadrature: bool = True


class OrbitRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, protected_namespaces=())

    model_name: str
    E: float
    h: float = Field(gt=0.0)
    q: np.ndarray
    p: np.ndarray
    times: np.ndarray
    max_energy_drift: float
    drift_budget: float
    drift_warning: bool

    @model_validator(mode="after")
    def _check_times(self):
        if self.q.shape != self.p.shape or self.q.shape[0] != self.times.shape[0]:
            raise ValueError("orbit arrays have inconsistent shapes")
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("orbit timestamps must be strictly increasing")
        return self

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    def state(self, k: int) -> PhaseState:
        return PhaseState.from_arrays(self.q[k], self.p[k])


class VolumeRow(BaseModel):
    E: float
    vol_me: Optional[Estimate] = None
    vol_sigma: Optional[Estimate] = None
    kT: Optional[Estimate] = None
    flag: Literal["ok", "guard_band", "failed"] = "ok"
    message: str = ""


class VolumeCurve(BaseModel):
    rows: List[VolumeRow] = []

    @property
    def energies(self) -> List[float]:
        return [row.E for row in self.rows]

    @property
    def vol_me(self) -> List[Optional[Estimate]]:
        return [row.vol_me for row in self.rows]

    @property
    def vol_sigma(self) -> List[Optional[Estimate]]:
        return [row.vol_sigma for row in self.rows]

    @property
    def kT(self) -> List[Optional[Estimate]]:
        return [row.kT for row in self.rows]


class EquipartitionReport(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_name: str
    E: float
    field_name: str
    kT: Optional[Estimate] = None
    lhs_time: Optional[Estimate] = None
    lhs_ensemble: Optional[Estimate] = None
    rhs_intrinsic: Optional[Estimate] = None
    rhs_seam: Optional[Estimate] = None
    tolman_value: Optional[float] = None
    residual_intrinsic: Optional[float] = None
    residual_tolman: Optional[float] = None
    field_smooth_on_ME: bool = True
    status: Literal["ok", "skipped", "failed"] = "ok"
    message: str = ""

    @model_validator(mode="after")
    def _check_residuals(self):
        if self.status == "ok":
            if self.lhs_ensemble is None or self.rhs_intrinsic is None or self.kT is None:
                raise ValueError("a completed report needs kT, lhs_ensemble and rhs_intrinsic")
            expected = self.lhs_ensemble.value - self.rhs_intrinsic.value
            if self.residual_intrinsic != expected:
                raise ValueError("residual_intrinsic must equal lhs_ensemble - rhs_intrinsic")
        return self

    @property
    def intrinsic_law_applies(self) -> bool:
        return self.field_smooth_on_ME

    @property
    def relative_intrinsic(self) -> Optional[float]:
        if self.residual_intrinsic is None or self.kT is None:
            return None
        return self.residual_intrinsic / self.kT.value

    @property
    def relative_tolman(self) -> Optional[float]:
        if self.residual_tolman is None or self.kT is None:
            return None
        return self.residual_tolman / self.kT.value


class CorrectionCheck(BaseModel):
    E: float
    deltaE: float
    lhs: float
    rhs: float
    delta_p: float
    kT_scale: float
    relative_gap: float
    volume_convention: str = "Vol(Sigma_E) summed over both rotation components"

    @field_validator("lhs", "rhs", "delta_p")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("correction identity sides must be finite")
        return value


class CounterexampleTable(BaseModel):
    omega1: float
    omega2: float
    E: float
    # table[mu][nu] = <I_mu * omega_nu>
    table: List[List[Estimate]]
    mean_actions: List[Estimate]
    kT: Estimate


# --- Command-line run configuration ---

class GridConfig(BaseModel):
    e_min: Optional[float] = None
    e_max: Optional[float] = None
    points: int = Field(default=1, ge=1)
    energies: Optional[List[float]] = None

    def values(self) -> List[float]:
        if self.energies:
            return [float(e) for e in self.energies]
        if self.e_min is None or self.e_max is None:
            raise ValueError("an energy grid needs --e-min/--e-max or an explicit list of energies")
        if self.points == 1:
            return [float(self.e_min)]
        return [float(e) for e in np.linspace(self.e_min, self.e_max, self.points)]


class DynamicsConfig(BaseModel):
    h_divisor: int = Field(default=H_DIVISOR, ge=2)
    periods: int = Field(default=AVERAGE_PERIODS, ge=1)


class OutputConfig(BaseModel):
    path: str = "-"
    format: Literal["csv", "json"] = "csv"


class RunConfig(BaseModel):
    command: Literal["scan", "volumes", "correction", "orbit", "counterexample"] = "scan"
    model: str = "pendulum"
    params: Dict[str, float] = {}
    fields: List[str] = ["f22"]
    grid: GridConfig = GridConfig()
    mc: McConfig = McConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    output: OutputConfig = OutputConfig()
    seed: int = DEFAULT_SEED
    n_jobs: int = Field(default=N_JOBS, ge=1)
    energy: Optional[float] = None
    delta_e: Optional[float] = None
    component: Optional[Component] = None
    t_end: Optional[float] = Field(default=None, gt=0.0)
    omega1: float = 1.0
    omega2: float = 1.0

    @model_validator(mode="after")
    def _sync_seed(self):
        # the master seed always drives the sampler
        if self.mc.seed != self.seed:
            self.mc = self.mc.model_copy(update={"seed": self.seed})
        return self
