# services/report_writer.py
import csv
import io
import json
import sys
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from config import TOOL_NAME, TOOL_VERSION, logger
from models import Estimate, EquipartitionReport, OrbitRecord, RunConfig, VolumeCurve

REPORT_COLUMNS = (
    "E", "field", "kT", "kT_err", "lhs_time", "lhs_time_err", "lhs_ens", "lhs_ens_err",
    "rhs", "rhs_err", "tolman", "resid_intrinsic", "resid_tolman", "smooth", "rhs_seam", "status",
)
VOLUME_COLUMNS = ("E", "vol_me", "vol_me_err", "vol_sigma", "vol_sigma_err", "kT", "kT_err", "flag")
ORBIT_COLUMNS = ("t", "q", "p", "H")


def format_number(value: Any) -> str:
    """17 significant digits, so every float survives a text round trip."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _value(estimate: Optional[Estimate]) -> Optional[float]:
    return None if estimate is None else estimate.value


def _error(estimate: Optional[Estimate]) -> Optional[float]:
    return None if estimate is None else estimate.std_error


def report_row(report: EquipartitionReport) -> Dict[str, Any]:
    return {
        "E": report.E,
        "field": report.field_name,
        "kT": _value(report.kT),
        "kT_err": _error(report.kT),
        "lhs_time": _value(report.lhs_time),
        "lhs_time_err": _error(report.lhs_time),
        "lhs_ens": _value(report.lhs_ensemble),
        "lhs_ens_err": _error(report.lhs_ensemble),
        "rhs": _value(report.rhs_intrinsic),
        "rhs_err": _error(report.rhs_intrinsic),
        "tolman": report.tolman_value,
        "resid_intrinsic": report.residual_intrinsic,
        "resid_tolman": report.residual_tolman,
        "smooth": report.field_smooth_on_ME,
        "rhs_seam": _value(report.rhs_seam),
        "status": report.status,
    }


def volume_rows(curve: VolumeCurve) -> List[Dict[str, Any]]:
    return [
        {
            "E": row.E,
            "vol_me": _value(row.vol_me),
            "vol_me_err": _error(row.vol_me),
            "vol_sigma": _value(row.vol_sigma),
            "vol_sigma_err": _error(row.vol_sigma),
            "kT": _value(row.kT),
            "kT_err": _error(row.kT),
            "flag": row.flag,
        }
        for row in curve.rows
    ]


def orbit_rows(record: OrbitRecord, energies: np.ndarray) -> List[Dict[str, Any]]:
    # one line per state; multi-DOF orbits report the first coordinate pair
    return [
        {"t": float(t), "q": float(q[0]), "p": float(p[0]), "H": float(H)}
        for t, q, p, H in zip(record.times, record.q, record.p, energies)
    ]


class ReportWriter:
    """
    Serializes run results as CSV with '#' header comments or as JSON.

    Every output starts with the tool version, the master seed and the fully
    resolved run configuration; rerunning that configuration reproduces the data.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.path = config.output.path
        self.format = config.output.format

    def header(self) -> Dict[str, Any]:
        return {
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "seed": self.config.seed,
            "config": self.config.model_dump(mode="json"),
        }

    def _header_lines(self, extra: Sequence[str] = ()) -> List[str]:
        lines = [
            f"# {TOOL_NAME} {TOOL_VERSION}",
            f"# seed: {self.config.seed}",
            f"# config: {json.dumps(self.config.model_dump(mode='json'), sort_keys=True)}",
        ]
        lines.extend(f"# {line}" for line in extra)
        return lines

    def render_table(self, columns: Sequence[str], rows: Iterable[Dict[str, Any]],
                     comments: Sequence[str] = ()) -> str:
        rows = list(rows)
        if self.format == "json":
            return json.dumps({"header": self.header(), "rows": rows}, indent=2) + "\n"
        buffer = io.StringIO()
        for line in self._header_lines(comments):
            buffer.write(line + "\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(row[c]) for c in columns])
        return buffer.getvalue()

    def render_object(self, data: BaseModel) -> str:
        """JSON document for single-object results such as correction checks."""
        return json.dumps({"header": self.header(), "data": data.model_dump(mode="json")}, indent=2) + "\n"

    def emit(self, text: str):
        """Writes the rendered output once; '-' streams to standard output."""
        if self.path == "-":
            sys.stdout.write(text)
            sys.stdout.flush()
            return
        try:
            with open(self.path, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
            logger.info(f"Results written to {self.path}")
        except OSError as e:
            logger.error(f"Could not write results to {self.path}: {e}")
            raise

    # --- Result kinds ---
    def write_reports(self, reports: Sequence[EquipartitionReport]):
        self.emit(self.render_table(REPORT_COLUMNS, (report_row(r) for r in reports)))

    def write_volume_curve(self, curve: VolumeCurve):
        self.emit(self.render_table(VOLUME_COLUMNS, volume_rows(curve)))

    def write_orbit(self, record: OrbitRecord, energies: np.ndarray):
        drift = (f"drift: max={format_number(record.max_energy_drift)} "
                 f"budget={format_number(record.drift_budget)} warning={format_number(record.drift_warning)}")
        if self.format == "json":
            rows = orbit_rows(record, energies)
            payload = {
                "header": self.header(),
                "drift": {"max": record.max_energy_drift, "budget": record.drift_budget,
                          "warning": record.drift_warning},
                "rows": rows,
            }
            self.emit(json.dumps(payload, indent=2) + "\n")
            return
        self.emit(self.render_table(ORBIT_COLUMNS, orbit_rows(record, energies), comments=[drift]))

    def write_object(self, data: BaseModel):
        self.emit(self.render_object(data))
