"""Serialization of runs, bounds, solutions, and campaign tables.

All text output is UTF-8 with LF line endings and numbers rendered with
%.9g, so identical runs produce byte-identical files on any platform.
Empty CSV fields mean "not defined here" (e.g. no flow row at the final
state).
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from .cumulative import BoundsReport, RestrictivenessReport
from .model import FreewayModel
from .simulator import DemandProfile, Metrics, Trajectory


def fmt(x: float) -> str:
    return f"{float(x) + 0.0:.9g}"  # + 0.0 turns -0.0 into 0.0


def _open_out(path):
    return open(path, "w", encoding="utf-8", newline="\n")


def _clean(value):
    """Round floats through %.9g so JSON bytes match the CSV convention."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        return float(fmt(value))
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def write_json(doc: dict, path) -> None:
    with _open_out(path) as fh:
        json.dump(_clean(doc), fh, indent=2)
        fh.write("\n")


def dumps_json(doc: dict) -> str:
    return json.dumps(_clean(doc), indent=2) + "\n"


# ---------------------------------------------------------------------------
# trajectory tables

def trajectory_csv_text(traj: Trajectory) -> str:
    """Long-form state table: one row per (step, cell).

    ``phi`` is the flow leaving the cell during [t, t+1) and ``r`` the
    metering rate applied then; both are blank on the final-state rows.
    """
    T = traj.horizon
    n = traj.rho.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "cell", "rho", "q", "phi", "r"])
    for t in range(T + 1):
        for k in range(n):
            row = [t, k + 1, fmt(traj.rho[t, k]), fmt(traj.q[t, k])]
            if t < T:
                row += [fmt(traj.flows[t, k + 1]), fmt(traj.rates[t, k])]
            else:
                row += ["", ""]
            w.writerow(row)
    return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with _open_out(path) as fh:
        fh.write(trajectory_csv_text(traj))


def read_trajectory_csv(path, demand: DemandProfile) -> Trajectory:
    """Rebuild a trajectory written by ``write_trajectory_csv``.

    The demand profile is not stored in the table, so the caller supplies
    it; its horizon must match the table.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty trajectory table")
    n = max(int(r["cell"]) for r in rows)
    T = max(int(r["t"]) for r in rows)
    rho = np.full((T + 1, n), np.nan)
    q = np.full((T + 1, n), np.nan)
    flows = np.full((T, n + 1), np.nan)
    rates = np.full((T, n), np.nan)
    for r in rows:
        t, k = int(r["t"]), int(r["cell"]) - 1
        rho[t, k] = float(r["rho"])
        q[t, k] = float(r["q"])
        if r["phi"] != "":
            flows[t, k + 1] = float(r["phi"])
            rates[t, k] = float(r["r"])
    if np.isnan(rho).any() or np.isnan(flows[:, 1:]).any():
        raise ValueError("trajectory table has missing rows")
    if demand.horizon != T:
        raise ValueError(
            f"trajectory spans {T} steps but the demand profile has "
            f"{demand.horizon}")
    flows[:, 0] = demand.w0  # the mainline boundary always carries w0
    return Trajectory(rho=rho, q=q, flows=flows, rates=rates, demand=demand)


def heatmap_csv_text(traj: Trajectory) -> str:
    """Density field of the T pre-update states, one row per (t, cell)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "cell", "rho"])
    for t in range(traj.horizon):
        for k in range(traj.rho.shape[1]):
            w.writerow([t, k + 1, fmt(traj.rho[t, k])])
    return buf.getvalue()


def write_heatmap_csv(traj: Trajectory, path) -> None:
    with _open_out(path) as fh:
        fh.write(heatmap_csv_text(traj))


def rates_csv_text(rates: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = rates.shape[1]
    w.writerow(["t"] + [f"r{k}" for k in range(1, n + 1)])
    for t in range(rates.shape[0]):
        w.writerow([t] + [fmt(v) for v in rates[t]])
    return buf.getvalue()


def write_rates_csv(rates: np.ndarray, path) -> None:
    with _open_out(path) as fh:
        fh.write(rates_csv_text(rates))


def read_rates_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row[1:]] for row in reader]
    if header[0] != "t":
        raise ValueError("not a rate table")
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# restrictiveness and bounds

def restrictiveness_csv_text(report: RestrictivenessReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "cell", "status", "reason"])
    for t, cell, status, reason in report.rows():
        w.writerow([t, cell, status, reason])
    return buf.getvalue()


def write_restrictiveness_csv(report: RestrictivenessReport, path) -> None:
    with _open_out(path) as fh:
        fh.write(restrictiveness_csv_text(report))


def bounds_doc(bounds: BoundsReport) -> dict:
    return {
        "tts_lb": bounds.tts_lb,
        "tts_be": bounds.tts_be,
        "certificate": bounds.certificate,
        "gap_abs": bounds.gap_abs,
        "gap_rel": bounds.gap_rel,
    }


# ---------------------------------------------------------------------------
# run report

def run_report_doc(label: str, controller: str, model: FreewayModel,
                   traj: Trajectory, metrics: Metrics,
                   mass_residual: float,
                   restrictiveness: RestrictivenessReport,
                   sigma_phi: float = 0.0, seed: int | None = None) -> dict:
    doc = {
        "scenario": label,
        "controller": controller,
        "horizon_steps": traj.horizon,
        "dt_hours": model.dt,
        "sigma_phi": sigma_phi,
        "tts": metrics.tts,
        "tft": metrics.tft,
        "twt": metrics.twt,
        "mass_residual": mass_residual,
        "restrictive_fraction": restrictiveness.restrictive_fraction,
        "interior_restrictive_free": restrictiveness.interior_clean,
    }
    if seed is not None:
        doc["seed"] = seed
    return doc


# ---------------------------------------------------------------------------
# campaign table

CAMPAIGN_HEADER = ["variant", "sigma", "dv", "drho", "controller",
                   "mean_twt_improvement", "stdev", "runs"]


def campaign_csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CAMPAIGN_HEADER)
    for r in rows:
        w.writerow([r.variant, fmt(r.sigma), fmt(r.dv), fmt(r.drho),
                    r.controller, fmt(r.mean_twt_improvement),
                    fmt(r.stdev), r.runs])
    return buf.getvalue()


def write_campaign_csv(rows, path) -> None:
    with _open_out(path) as fh:
        fh.write(campaign_csv_text(rows))


def read_campaign_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("sigma", "dv", "drho", "mean_twt_improvement", "stdev"):
            r[key] = float(r[key])
        r["runs"] = int(r["runs"])
    return rows
