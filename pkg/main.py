# main.py
import argparse
import json
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config import TOOL_NAME, TOOL_VERSION, logger
from models import RunConfig

from services.dynamics import integrate_orbit, orbit_period
from services.equipartition_service import EquipartitionService, action_angle_counterexample
from services.hamiltonian_models import EquipartitionError, ParameterError, build_model
from services.microcanonical import volume_curve
from services.report_writer import ReportWriter
from services.vector_fields import field_from_token


# --- Argument parsing ---
def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got '{text}'")
    return key.strip(), float(value)


def build_parser() -> argparse.ArgumentParser:
    """One subcommand per run kind; every option defaults to 'not given' so a --config file can supply it."""
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=str, help="JSON file with the same schema as the flags.")
    common.add_argument("--model", type=str, help="Model name: pendulum, ho1d or ho2d.")
    common.add_argument("--param", type=_param, action="append", help="Model parameter override, e.g. g=9.81.")
    common.add_argument("--fields", type=str, help="Comma-separated field tokens, e.g. f11,f22,pcubed.")
    common.add_argument("--e-min", type=float, dest="e_min")
    common.add_argument("--e-max", type=float, dest="e_max")
    common.add_argument("--points", type=int)
    common.add_argument("--energies", type=_float_list, help="Explicit comma-separated energy grid.")
    common.add_argument("--samples", type=int, help="Monte Carlo samples per estimate.")
    common.add_argument("--fd-step", type=float, dest="fd_step")
    common.add_argument("--shell", type=float, help="Shell thickness for Monte Carlo shell averages.")
    common.add_argument("--h-divisor", type=int, dest="h_divisor", help="Steps per orbit period.")
    common.add_argument("--periods", type=int, help="Orbit periods per time average.")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="Parallel workers for energy scans.")
    common.add_argument("--out", type=str, help="Output path, '-' for standard output.")
    common.add_argument("--format", type=str, choices=["csv", "json"])
    common.add_argument("--energy", type=float)
    common.add_argument("--delta-e", type=float, dest="delta_e")
    common.add_argument("--component", type=str)
    common.add_argument("--t-end", type=float, dest="t_end")
    common.add_argument("--omega1", type=float)
    common.add_argument("--omega2", type=float)

    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Numerical checks of the classical and intrinsic equipartition laws.",
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("scan", parents=[common], help="Equipartition reports along an energy grid.")
    subparsers.add_parser("volumes", parents=[common], help="Vol(M_E), Vol(Sigma_E) and kT along a grid.")
    subparsers.add_parser("correction", parents=[common], help="Seam correction identity above the separatrix.")
    subparsers.add_parser("orbit", parents=[common], help="Leapfrog orbit dump t,q,p,H.")
    subparsers.add_parser("counterexample", parents=[common], help="Action-angle table on two oscillators.")
    return parser


def _merge(base: Dict[str, Any], section: str, values: Dict[str, Any]):
    if values:
        base[section] = {**base.get(section, {}), **values}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then explicit flags."""
    given = vars(args)
    data: Dict[str, Any] = {}
    if "config" in given:
        with open(given["config"], "r", encoding="utf-8") as handle:
            data = json.load(handle)
    data["command"] = args.command

    top_level = {"model": "model", "seed": "seed", "jobs": "n_jobs", "energy": "energy",
                 "delta_e": "delta_e", "component": "component", "t_end": "t_end",
                 "omega1": "omega1", "omega2": "omega2"}
    for flag, key in top_level.items():
        if flag in given:
            data[key] = given[flag]
    if "param" in given:
        data["params"] = {**data.get("params", {}), **dict(given["param"])}
    if "fields" in given:
        data["fields"] = [t.strip() for t in given["fields"].split(",") if t.strip()]

    _merge(data, "grid", {k: given[k] for k in ("e_min", "e_max", "points", "energies") if k in given})
    mc = {"n_samples": given.get("samples"), "fd_step": given.get("fd_step"), "shell_thickness": given.get("shell")}
    _merge(data, "mc", {k: v for k, v in mc.items() if v is not None})
    _merge(data, "dynamics", {k: given[k] for k in ("h_divisor", "periods") if k in given})
    output = {"path": given.get("out"), "format": given.get("format")}
    _merge(data, "output", {k: v for k, v in output.items() if v is not None})
    return RunConfig.model_validate(data)


# --- Commands ---
def cmd_scan(config: RunConfig) -> int:
    model = build_model(config.model, config.params)
    service = EquipartitionService(model, config.mc, config.dynamics)
    energies = config.grid.values()
    # an unknown token fails the run before any row is computed
    fields = [field_from_token(model, token) for token in config.fields]
    reports = []
    exit_code = 0
    for field in fields:
        try:
            reports.extend(service.scan_energies(field, energies, config.n_jobs))
        except EquipartitionError as e:
            logger.error(f"Scan of {field.name} failed: {e}")
            exit_code = 1
    if any(r.status == "failed" for r in reports):
        exit_code = 1
    ReportWriter(config).write_reports(reports)
    return exit_code


def cmd_volumes(config: RunConfig) -> int:
    model = build_model(config.model, config.params)
    curve = volume_curve(model, config.grid.values(), config.mc)
    ReportWriter(config).write_volume_curve(curve)
    return 1 if any(row.flag == "failed" for row in curve.rows) else 0


def _require(value: Optional[float], flag: str) -> float:
    if value is None:
        raise ParameterError(f"this command needs {flag}")
    return value


def cmd_correction(config: RunConfig) -> int:
    model = build_model(config.model, config.params)
    service = EquipartitionService(model, config.mc, config.dynamics)
    check = service.correction_identity(_require(config.energy, "--energy"), _require(config.delta_e, "--delta-e"))
    ReportWriter(config).write_object(check)
    return 0


def cmd_orbit(config: RunConfig) -> int:
    model = build_model(config.model, config.params)
    E = _require(config.energy, "--energy")
    if E == model.e_min:
        # the ground state is a fixed point; sample it over one small-oscillation period
        x0 = model.ground_state()
        period = model.harmonic_period()
    else:
        model.require_regular(E)
        component = config.component or model.list_components(E)[0]
        x0 = model.initial_state_on_shell(E, component)
        period = orbit_period(model, E, component) if model.n == 1 else model.harmonic_period()
    t_end = config.t_end or period
    record = integrate_orbit(model, x0, t_end, period / config.dynamics.h_divisor)
    ReportWriter(config).write_orbit(record, model.energy_array(record.q, record.p))
    return 0


def cmd_counterexample(config: RunConfig) -> int:
    table = action_angle_counterexample(config.omega1, config.omega2, 1.0 if config.energy is None else config.energy, config.mc)
    ReportWriter(config).write_object(table)
    return 0


HANDLERS = {
    "scan": cmd_scan,
    "volumes": cmd_volumes,
    "correction": cmd_correction,
    "orbit": cmd_orbit,
    "counterexample": cmd_counterexample,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
    except (ValidationError, ValueError, OSError) as e:
        logger.error(f"Invalid run configuration: {e}")
        return 1
    logger.info(f"Running '{config.command}' for model {config.model} with seed {config.seed}")
    try:
        return HANDLERS[config.command](config)
    except (ValueError, OSError) as e:
        # EquipartitionError and pydantic ValidationError are both ValueErrors
        logger.error(f"Command '{config.command}' failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
