# services/microcanonical.py
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config import SHELL_FRACTION, logger
from models import Estimate, McConfig, VolumeCurve, VolumeRow
from .dynamics import adaptive_quad, orbit_integral, orbit_period
from .hamiltonian_models import (
    EmptyShellError,
    EquipartitionError,
    GuardBandError,
    HamiltonianModel,
    OrbitSegment,
)
from .vector_fields import VectorFieldSpec

PhaseFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
# Reduces one chunk (q, p, H) to a tuple of partial sums
ChunkReducer = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[float, ...]]

# Every Monte Carlo estimate draws from this stream so that volumes, divergence
# integrals and shell averages at the same box reuse the same points.
SAMPLE_STREAM = 0


def _chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    """Counter-based generator for one chunk, keyed by (master seed, stream, chunk)."""
    sequence = np.random.SeedSequence(seed, spawn_key=(SAMPLE_STREAM, chunk))
    return np.random.Generator(np.random.Philox(sequence))


def _box_volume(lo: np.ndarray, hi: np.ndarray) -> float:
    widths = hi - lo
    if np.any(widths <= 0) or not np.all(np.isfinite(widths)):
        raise EquipartitionError(f"degenerate bounding box {lo} .. {hi}")
    return float(np.prod(widths))


def _sample_sums(model: HamiltonianModel, lo: np.ndarray, hi: np.ndarray, cfg: McConfig,
                 reducer: ChunkReducer) -> List[float]:
    """
    Draws cfg.n_samples uniform points in the box and reduces them chunk by chunk.

    Each chunk has its own substream and the per-chunk partial sums are combined
    with math.fsum, so the totals do not depend on the order chunks are processed in.
    """
    n = model.n
    partials: List[Tuple[float, ...]] = []
    n_chunks = math.ceil(cfg.n_samples / cfg.chunk_size)
    for chunk in range(n_chunks):
        size = min(cfg.chunk_size, cfg.n_samples - chunk * cfg.chunk_size)
        u = _chunk_generator(cfg.seed, chunk).random((size, 2 * n))
        x = lo + (hi - lo) * u
        q, p = x[:, :n], x[:, n:]
        partials.append(reducer(q, p, model.energy_array(q, p)))
    return [math.fsum(column) for column in zip(*partials)]


def _fd_window(model: HamiltonianModel, E: float, cfg: McConfig) -> float:
    return cfg.fd_step * max(1.0, abs(E - model.e_min))


def shell_thickness(model: HamiltonianModel, E: float, cfg: McConfig) -> float:
    if cfg.shell_thickness is not None:
        return cfg.shell_thickness
    return SHELL_FRACTION * max(1.0, abs(E - model.e_min))


# --- Monte Carlo estimators ---

def vol_me_mc(model: HamiltonianModel, E: float, cfg: McConfig) -> Estimate:
    """Vol(M_E) by rejection sampling in model.bounding_box(E)."""
    if E <= model.e_min:
        return Estimate(value=0.0, std_error=0.0, method="mc_volume", n_samples=cfg.n_samples, seed=cfg.seed)
    lo, hi = model.bounding_box(E)
    box = _box_volume(lo, hi)
    (count,) = _sample_sums(model, lo, hi, cfg, lambda q, p, H: (float(np.count_nonzero(H <= E)),))
    frac = count / cfg.n_samples
    return Estimate(
        value=box * frac,
        std_error=box * math.sqrt(frac * (1.0 - frac) / cfg.n_samples),
        method="mc_volume",
        n_samples=cfg.n_samples,
        seed=cfg.seed,
    )


def vol_sigma_mc(model: HamiltonianModel, E: float, cfg: McConfig) -> Estimate:
    """dVol(M_E)/dE by a central difference evaluated on one shared set of points."""
    delta = _fd_window(model, E, cfg)
    for e_crit in model.critical_energies:
        if E - delta <= e_crit <= E + delta:
            raise GuardBandError(f"finite-difference window [{E - delta}, {E + delta}] crosses critical energy {e_crit}")
    lo, hi = model.bounding_box(E + delta)
    box = _box_volume(lo, hi)
    (count,) = _sample_sums(
        model, lo, hi, cfg,
        lambda q, p, H: (float(np.count_nonzero((H > E - delta) & (H <= E + delta))),),
    )
    frac = count / cfg.n_samples
    return Estimate(
        value=box * frac / (2.0 * delta),
        std_error=box * math.sqrt(frac * (1.0 - frac) / cfg.n_samples) / (2.0 * delta),
        method="mc_volume",
        n_samples=cfg.n_samples,
        seed=cfg.seed,
    )


def div_integral(model: HamiltonianModel, field: VectorFieldSpec, E: float, cfg: McConfig) -> Estimate:
    """Integral of div(X) over M_E, on the same sample stream as vol_me_mc."""
    if E <= model.e_min:
        return Estimate(value=0.0, std_error=0.0, method="mc_volume", n_samples=cfg.n_samples, seed=cfg.seed)
    lo, hi = model.bounding_box(E)
    box = _box_volume(lo, hi)

    def reducer(q, p, H):
        inside = H <= E
        div = field.div(q[inside], p[inside])
        return float(np.count_nonzero(inside)), float(np.sum(div)), float(np.sum(div * div))

    count, div_sum, div_sq = _sample_sums(model, lo, hi, cfg, reducer)
    N = cfg.n_samples
    if count == 0:
        return Estimate(value=0.0, std_error=0.0, method="mc_volume", n_samples=N, seed=cfg.seed)
    volume = box * (count / N)
    value = volume * (div_sum / count)
    # Y_i = box * div_i * 1[H_i <= E]; value is the mean of Y over all draws
    variance = max(div_sq / N - (div_sum / N) ** 2, 0.0)
    return Estimate(
        value=value,
        std_error=box * math.sqrt(variance / N),
        method="mc_volume",
        n_samples=N,
        seed=cfg.seed,
    )


def ensemble_average_mc_shell(model: HamiltonianModel, f: PhaseFunction, E: float, cfg: McConfig) -> Estimate:
    """Mean of f over sampled points in the shell E <= H <= E + eps."""
    eps = shell_thickness(model, E, cfg)
    lo, hi = model.bounding_box(E + eps)
    _box_volume(lo, hi)

    def reducer(q, p, H):
        inside = (H >= E) & (H <= E + eps)
        values = np.asarray(f(q[inside], p[inside]), dtype=float)
        return float(np.count_nonzero(inside)), float(np.sum(values)), float(np.sum(values * values))

    count, total, total_sq = _sample_sums(model, lo, hi, cfg, reducer)
    if count == 0:
        raise EmptyShellError(f"no samples accepted in the shell [{E}, {E + eps}] of {model.name}")
    if count < 100:
        logger.warning(f"Only {int(count)} samples accepted in the shell at E={E}; increase n_samples")
    mean = total / count
    variance = max(total_sq / count - mean * mean, 0.0) * count / max(count - 1.0, 1.0)
    return Estimate(
        value=mean,
        std_error=math.sqrt(variance / count),
        method="mc_shell",
        n_samples=int(count),
        seed=cfg.seed,
        epsilon=eps,
    )


# --- 1-DOF quadrature ---

def _separatrix_guard(model: HamiltonianModel, E: float):
    for cv in model.critical_values():
        if cv.kind == "separatrix" and abs(E - cv.energy) < model.guard_width(cv.energy):
            raise GuardBandError(f"E={E} lies within the guard band of the separatrix energy {cv.energy}")


def _region_integral(model: HamiltonianModel, segment: OrbitSegment, column: Callable[[float], float]) -> float:
    """Integral over q of column(q) across the q-range of M_E, smoothing turning-point endpoints."""
    if segment.turning:
        centre = 0.5 * (segment.q_lo + segment.q_hi)
        radius = 0.5 * (segment.q_hi - segment.q_lo)

        def integrand(theta):
            return column(centre + radius * math.sin(theta)) * radius * math.cos(theta)
        return adaptive_quad(integrand, -0.5 * math.pi, 0.5 * math.pi)
    return adaptive_quad(column, segment.q_lo, segment.q_hi)


def vol_me_quadrature_1dof(model: HamiltonianModel, E: float) -> Estimate:
    """Area of M_E as the integral of 2 p_+(q) dq (both momentum signs)."""
    model.require_one_dof()
    if E <= model.e_min:
        raise EquipartitionError(f"E={E} must exceed the ground-state energy {model.e_min}")
    _separatrix_guard(model, E)
    segment = model.region_segment(E)
    value = _region_integral(model, segment, lambda q: 2.0 * float(model.momentum_on_shell(q, E)))
    return Estimate(value=value, std_error=0.0, method="quadrature_1dof", n_samples=0)


def div_integral_quadrature_1dof(model: HamiltonianModel, field: VectorFieldSpec, E: float) -> Estimate:
    """Integral of div(X) over M_E by nested quadrature (n=1)."""
    if field.constant_divergence is not None:
        volume = vol_me_quadrature_1dof(model, E)
        return Estimate(value=field.constant_divergence * volume.value, std_error=0.0,
                        method="quadrature_1dof", n_samples=0)
    model.require_one_dof()
    _separatrix_guard(model, E)
    segment = model.region_segment(E)

    def column(q: float) -> float:
        p_max = float(model.momentum_on_shell(q, E))
        if p_max <= 0.0:
            return 0.0
        qa = np.array([q])
        return adaptive_quad(lambda p: float(field.div(qa, np.array([p]))), -p_max, p_max)

    value = _region_integral(model, segment, column)
    return Estimate(value=value, std_error=0.0, method="quadrature_1dof", n_samples=0)


def ensemble_average_1dof(model: HamiltonianModel, f: PhaseFunction, E: float,
                          component: Optional[str] = None) -> Estimate:
    """
    Microcanonical average of f with the time-of-flight measure dT.

    Without a component, all components at E are combined with weights
    proportional to their periods.
    """
    model.require_one_dof()
    model.require_regular(E)
    components = [component] if component else list(model.list_components(E))
    numerator = math.fsum(orbit_integral(model, E, c, f) for c in components)
    period = math.fsum(orbit_period(model, E, c) for c in components)
    return Estimate(value=numerator / period, std_error=0.0, method="quadrature_1dof", n_samples=0)


# --- Dispatchers: n=1 models use quadrature whenever it is admissible ---

def _use_quadrature(model: HamiltonianModel, E: float, cfg: McConfig) -> bool:
    return model.n == 1 and cfg.prefer_quadrature and model.critical_near(E) is None and E > model.e_min


def vol_me(model: HamiltonianModel, E: float, cfg: McConfig) -> Estimate:
    if _use_quadrature(model, E, cfg):
        return vol_me_quadrature_1dof(model, E)
    return vol_me_mc(model, E, cfg)


def vol_sigma(model: HamiltonianModel, E: float, cfg: McConfig) -> Estimate:
    """Vol(Sigma_E): summed component periods for n=1, correlated MC difference otherwise."""
    if _use_quadrature(model, E, cfg):
        total = math.fsum(orbit_period(model, E, c) for c in model.list_components(E))
        return Estimate(value=total, std_error=0.0, method="quadrature_1dof", n_samples=0)
    return vol_sigma_mc(model, E, cfg)


def ratio_estimate(numerator: Estimate, denominator: Estimate) -> Estimate:
    """numerator / denominator with first-order propagation of independent errors."""
    value = numerator.value / denominator.value
    rel = math.hypot(
        numerator.std_error / numerator.value if numerator.value else 0.0,
        denominator.std_error / denominator.value,
    )
    deterministic = numerator.is_deterministic and denominator.is_deterministic
    return Estimate(
        value=value,
        std_error=abs(value) * rel,
        method="quadrature_1dof" if deterministic else "mc_volume",
        n_samples=max(numerator.n_samples, denominator.n_samples),
        seed=None if deterministic else (numerator.seed if numerator.seed is not None else denominator.seed),
    )


def temperature_kT(model: HamiltonianModel, E: float, cfg: McConfig) -> Estimate:
    """Gibbs temperature kT = Vol(M_E) / Vol(Sigma_E)."""
    return ratio_estimate(vol_me(model, E, cfg), vol_sigma(model, E, cfg))


def volume_curve(model: HamiltonianModel, energies: Sequence[float], cfg: McConfig) -> VolumeCurve:
    """Vol(M_E), Vol(Sigma_E) and kT along an energy grid; guard-band rows keep only Vol(M_E)."""
    rows = []
    for E in energies:
        try:
            if model.critical_near(E) is not None or E <= model.e_min:
                logger.warning(f"E={E} lies in a guard band of {model.name}; reporting Vol(M_E) only")
                rows.append(VolumeRow(E=E, vol_me=vol_me_mc(model, E, cfg), flag="guard_band"))
                continue
            volume = vol_me(model, E, cfg)
            sigma = vol_sigma(model, E, cfg)
            rows.append(VolumeRow(E=E, vol_me=volume, vol_sigma=sigma, kT=ratio_estimate(volume, sigma)))
        except EquipartitionError as e:
            logger.error(f"Volume row at E={E} failed: {e}")
            rows.append(VolumeRow(E=E, flag="failed", message=str(e)))
    return VolumeCurve(rows=rows)
