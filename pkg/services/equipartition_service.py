# services/equipartition_service.py
import math
from typing import List, Optional, Sequence

from joblib import Parallel, delayed

from config import logger
from models import (
    CoordinateFieldIndex,
    CorrectionCheck,
    CounterexampleTable,
    DynamicsConfig,
    Estimate,
    EquipartitionReport,
    McConfig,
)
from . import microcanonical as mc
from .dynamics import orbit_period, time_average
from .hamiltonian_models import (
    EquipartitionError,
    GuardBandError,
    HamiltonianModel,
    HarmonicOscillator2D,
    ParameterError,
    Pendulum,
)
from .vector_fields import VectorFieldSpec, coordinate_field


def scale_estimate(estimate: Estimate, factor: float) -> Estimate:
    return estimate.model_copy(update={"value": factor * estimate.value,
                                       "std_error": abs(factor) * estimate.std_error})


def product_estimate(a: Estimate, b: Estimate) -> Estimate:
    """a * b with first-order propagation of independent relative errors."""
    value = a.value * b.value
    rel = math.hypot(a.std_error / a.value if a.value else 0.0, b.std_error / b.value if b.value else 0.0)
    deterministic = a.is_deterministic and b.is_deterministic
    return Estimate(
        value=value,
        std_error=abs(value) * rel,
        method="quadrature_1dof" if deterministic else "mc_volume",
        n_samples=max(a.n_samples, b.n_samples),
        seed=None if deterministic else (a.seed if a.seed is not None else b.seed),
    )


def weighted_combination(estimates: Sequence[Estimate], weights: Sequence[float]) -> Estimate:
    """Weighted mean of independent estimates; weights are normalized here."""
    total = math.fsum(weights)
    value = math.fsum(w * e.value for w, e in zip(weights, estimates)) / total
    std_error = math.sqrt(math.fsum((w * e.std_error) ** 2 for w, e in zip(weights, estimates))) / total
    return Estimate(value=value, std_error=std_error, method=estimates[0].method,
                    n_samples=sum(e.n_samples for e in estimates), seed=estimates[0].seed)


class EquipartitionService:
    """
    Compares both sides of the classical and the intrinsic equipartition laws
    for one Hamiltonian model.
    """

    def __init__(self, model: HamiltonianModel, mc_config: Optional[McConfig] = None,
                 dynamics_config: Optional[DynamicsConfig] = None):
        self.model = model
        self.mc_config = mc_config or McConfig()
        self.dynamics_config = dynamics_config or DynamicsConfig()
        logger.info(f"Equipartition Service initialized for {model!r}.")

    # --- Right-hand sides ---
    def temperature(self, E: float) -> Estimate:
        return mc.temperature_kT(self.model, E, self.mc_config)

    def tolman_prediction(self, idx: CoordinateFieldIndex, E: float, kT: Optional[Estimate] = None) -> float:
        """delta^i_j kT, the classical generalised equipartition value."""
        if idx.i != idx.j:
            return 0.0
        kT = kT or self.temperature(E)
        return kT.value

    def mean_divergence(self, field: VectorFieldSpec, E: float) -> Estimate:
        """(1/Vol(M_E)) times the integral of div(X) over M_E."""
        model, cfg = self.model, self.mc_config
        if mc._use_quadrature(model, E, cfg):
            integral = mc.div_integral_quadrature_1dof(model, field, E)
            volume = mc.vol_me_quadrature_1dof(model, E)
            return Estimate(value=integral.value / volume.value, std_error=0.0,
                            method="quadrature_1dof", n_samples=0)
        return mc.ratio_estimate(mc.div_integral(model, field, E, cfg), mc.vol_me_mc(model, E, cfg))

    def rhs_intrinsic(self, field: VectorFieldSpec, E: float, kT: Optional[Estimate] = None) -> Estimate:
        """kT / Vol(M_E) times the integral of div(X) over M_E."""
        kT = kT or self.temperature(E)
        if field.constant_divergence is not None:
            # constant divergence: the ratio is exactly that constant
            return scale_estimate(kT, field.constant_divergence)
        return product_estimate(kT, self.mean_divergence(field, E))

    def seam_flux(self, field: VectorFieldSpec, E: float) -> float:
        """Flux of X through its seam inside M_E: the jump 2*pi times the seam's momentum length."""
        idx = field.coordinate_index
        if field.seam_coordinate is None or idx is None or idx.i != idx.j or self.model.n != 1:
            return 0.0
        return 2.0 * math.pi * self.model.seam_momentum_length(field.seam_coordinate, E)

    def seam_corrected_rhs(self, field: VectorFieldSpec, E: float, kT: Optional[Estimate] = None) -> Estimate:
        """
        Intrinsic law with the boundary term of a field that jumps across an angular seam:
        kT / Vol(M_E) * (integral of div(X) over M_E - seam flux).
        """
        kT = kT or self.temperature(E)
        rhs = self.rhs_intrinsic(field, E, kT)
        flux = self.seam_flux(field, E)
        if flux == 0.0:
            return rhs
        volume = mc.vol_me(self.model, E, self.mc_config)
        correction = kT.value * flux / volume.value
        return rhs.model_copy(update={"value": rhs.value - correction})

    # --- Left-hand sides ---
    def lhs_time(self, field: VectorFieldSpec, E: float) -> Estimate:
        """Time average of X(H) over each component, combined with period weights."""
        model, dyn = self.model, self.dynamics_config
        f = field.observable(model)
        if model.n != 1:
            period = model.harmonic_period()
            x0 = model.initial_state_on_shell(E, "oscillation")
            return time_average(model, f, x0, dyn.periods * period, period / dyn.h_divisor)
        estimates, periods = [], []
        for component in model.list_components(E):
            period = orbit_period(model, E, component)
            x0 = model.initial_state_on_shell(E, component)
            estimates.append(time_average(model, f, x0, dyn.periods * period, period / dyn.h_divisor))
            periods.append(period)
        return weighted_combination(estimates, periods)

    def lhs_ensemble(self, field: VectorFieldSpec, E: float) -> Estimate:
        f = field.observable(self.model)
        if self.model.n == 1:
            return mc.ensemble_average_1dof(self.model, f, E)
        return mc.ensemble_average_mc_shell(self.model, f, E, self.mc_config)

    def field_smooth_on_ME(self, field: VectorFieldSpec, E: float) -> bool:
        """False when the field's seam meets M_E, i.e. E reaches the lowest energy on the seam."""
        if field.seam_coordinate is None:
            return True
        seam_energy = self.model.seam_energy(field.seam_coordinate)
        return seam_energy is None or E < seam_energy

    # --- Reports ---
    def check_law(self, field: VectorFieldSpec, E: float) -> EquipartitionReport:
        model = self.model
        model.require_regular(E)
        logger.info(f"Checking {field.name} for {model.name} at E={E}")
        kT = self.temperature(E)
        lhs_time = self.lhs_time(field, E)
        lhs_ensemble = self.lhs_ensemble(field, E)
        rhs = self.rhs_intrinsic(field, E, kT)
        smooth = self.field_smooth_on_ME(field, E)
        rhs_seam = None if smooth else self.seam_corrected_rhs(field, E, kT)
        tolman = None
        residual_tolman = None
        if field.coordinate_index is not None:
            tolman = self.tolman_prediction(field.coordinate_index, E, kT)
            residual_tolman = lhs_ensemble.value - tolman
        if not smooth:
            logger.info(f"Field {field.name} is discontinuous on M_E at E={E}; the intrinsic law does not apply")
        return EquipartitionReport(
            model_name=model.name,
            E=E,
            field_name=field.name,
            kT=kT,
            lhs_time=lhs_time,
            lhs_ensemble=lhs_ensemble,
            rhs_intrinsic=rhs,
            rhs_seam=rhs_seam,
            tolman_value=tolman,
            residual_intrinsic=lhs_ensemble.value - rhs.value,
            residual_tolman=residual_tolman,
            field_smooth_on_ME=smooth,
        )

    def _report_row(self, field: VectorFieldSpec, E: float) -> EquipartitionReport:
        try:
            return self.check_law(field, E)
        except EquipartitionError as e:
            logger.error(f"Report for {field.name} at E={E} failed: {e}")
            return EquipartitionReport(model_name=self.model.name, E=E, field_name=field.name,
                                       status="failed", message=str(e))

    def scan_energies(self, field: VectorFieldSpec, energies: Sequence[float],
                      n_jobs: int = 1) -> List[EquipartitionReport]:
        """One report per grid energy, in grid order; critical energies become skipped rows."""
        reports: List[Optional[EquipartitionReport]] = []
        todo = []
        for E in energies:
            cv = self.model.critical_near(E)
            if cv is not None or E <= self.model.e_min:
                reason = f"E={E} is not a regular value ({cv.kind if cv else 'minimum'} energy)"
                logger.warning(f"Skipping {field.name} at E={E}: {reason}")
                reports.append(EquipartitionReport(model_name=self.model.name, E=E, field_name=field.name,
                                                   status="skipped", message=reason))
            else:
                todo.append(len(reports))
                reports.append(None)
        if not todo:
            raise GuardBandError("every energy of the grid lies in a guard band")
        rows = Parallel(n_jobs=n_jobs)(delayed(self._report_row)(field, energies[k]) for k in todo)
        for k, row in zip(todo, rows):
            reports[k] = row
        return reports

    # --- Boundary correction above the separatrix ---
    def correction_identity(self, E: float, deltaE: float) -> CorrectionCheck:
        """
        Checks 1/2 (Vol(Sigma_{E+dE}) <f11>_{E+dE} - Vol(Sigma_E) <f11>_E)
        = 1/2 Vol(M(E, dE)) - 2 pi dp on the rotating pendulum.
        """
        model = self.model
        if not isinstance(model, Pendulum):
            raise ParameterError("the correction identity is defined for the pendulum")
        separatrix = model.depth
        if E < separatrix + model.guard_width(separatrix):
            raise GuardBandError(f"E={E} must lie above the separatrix energy {separatrix} plus its guard band")
        if deltaE <= 0:
            raise EquipartitionError(f"deltaE must be positive, got {deltaE}")
        cfg = self.mc_config.model_copy(update={"prefer_quadrature": True})
        f11 = coordinate_field(model, CoordinateFieldIndex(i=0, j=0)).observable(model)

        def weighted_average(energy: float) -> float:
            sigma = mc.vol_sigma(model, energy, cfg)
            return sigma.value * mc.ensemble_average_1dof(model, f11, energy).value

        lhs = 0.5 * (weighted_average(E + deltaE) - weighted_average(E))
        shell_volume = mc.vol_me(model, E + deltaE, cfg).value - mc.vol_me(model, E, cfg).value
        delta_p = float(model.momentum_on_shell(math.pi, E + deltaE) - model.momentum_on_shell(math.pi, E))
        rhs = 0.5 * shell_volume - 2.0 * math.pi * delta_p
        kT_scale = mc.temperature_kT(model, E, cfg).value
        gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), kT_scale)
        logger.info(f"Correction identity at E={E}, dE={deltaE}: lhs={lhs:.10g}, rhs={rhs:.10g}")
        return CorrectionCheck(E=E, deltaE=deltaE, lhs=lhs, rhs=rhs, delta_p=delta_p,
                               kT_scale=kT_scale, relative_gap=gap)


def action_angle_counterexample(omega1: float, omega2: float, E: float, cfg: McConfig) -> CounterexampleTable:
    """
    Shell averages of I_mu * omega_nu on two uncoupled oscillators.

    With actions as coordinates, the classical law would predict delta_mu_nu kT;
    the off-diagonal entries omega_nu <I_mu> are however nonzero.
    """
    if omega1 <= 0 or omega2 <= 0:
        raise ParameterError(f"frequencies must be positive, got {omega1}, {omega2}")
    if E <= 0:
        raise EquipartitionError(f"E must be positive, got {E}")
    model = HarmonicOscillator2D(omega1=omega1, omega2=omega2)
    omegas = (omega1, omega2)
    mean_actions = [
        mc.ensemble_average_mc_shell(model, lambda q, p, mu=mu: model.actions(q, p)[..., mu], E, cfg)
        for mu in range(2)
    ]
    table = [[scale_estimate(mean_actions[mu], omegas[nu]) for nu in range(2)] for mu in range(2)]
    kT = mc.temperature_kT(model, E, cfg)
    return CounterexampleTable(omega1=omega1, omega2=omega2, E=E, table=table,
                               mean_actions=mean_actions, kT=kT)
