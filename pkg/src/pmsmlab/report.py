"""Trajectory CSV emission and per-phase summary statistics.

The CSV layout is a versioned contract: a comment line carrying the schema
tag, a header row, then one row per control sample.  Floats are written with
repr (shortest round-trip), so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from pmsmlab.simulation import TrajectoryLog

SCHEMA_TAG = "pmsmlab.trajectory.v1"

CSV_COLUMNS = (
    "t", "i_alpha", "i_beta", "i_d", "i_q", "v_alpha", "v_beta",
    "omega_true", "theta_true", "omega_hat", "theta_hat", "theta_err",
    "det_y1", "det_y2", "det_y3", "rank",
    "psi_o_d", "psi_o_q", "theta_o", "margin",
)


def write_csv(log: TrajectoryLog, path) -> None:
    cols = [getattr(log, name) for name in CSV_COLUMNS]
    rank_idx = CSV_COLUMNS.index("rank")
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA_TAG}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for k in range(len(log)):
            fields = [
                str(int(col[k])) if j == rank_idx else repr(float(col[k]))
                for j, col in enumerate(cols)
            ]
            fh.write(",".join(fields) + "\n")


def read_csv(path) -> dict[str, np.ndarray]:
    """Read a trajectory CSV back into column arrays (schema-checked)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#") or SCHEMA_TAG not in first:
            raise ValueError(f"not a {SCHEMA_TAG} file: {path}")
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns in {path}")
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(CSV_COLUMNS))
    out = {name: data[:, j] for j, name in enumerate(CSV_COLUMNS)}
    out["rank"] = out["rank"].astype(int)
    return out


@dataclass(frozen=True)
class PhaseStats:
    name: str
    n: int
    max_abs_theta_err: float
    mean_abs_theta_err: float
    mean_abs_omega_err: float
    rank_deficient_fraction: float
    min_abs_margin: float


@dataclass(frozen=True)
class RunSummary:
    phases: tuple[PhaseStats, ...]
    notes: tuple[str, ...]
    n_samples: int
    aborted: bool

    def __str__(self) -> str:
        lines = [
            f"samples: {self.n_samples}" + ("  [ABORTED]" if self.aborted else ""),
            f"{'phase':<12}{'n':>7}{'max|th_err|':>13}{'mean|th_err|':>14}"
            f"{'mean|w_err|':>13}{'rank<4':>8}{'min|margin|':>13}",
        ]
        for ph in self.phases:
            lines.append(
                f"{ph.name:<12}{ph.n:>7}{ph.max_abs_theta_err:>13.4g}"
                f"{ph.mean_abs_theta_err:>14.4g}{ph.mean_abs_omega_err:>13.4g}"
                f"{ph.rank_deficient_fraction:>8.3f}{ph.min_abs_margin:>13.4g}"
            )
        lines.extend(self.notes)
        return "\n".join(lines)


def _phase_stats(name: str, log: TrajectoryLog, mask: np.ndarray) -> PhaseStats:
    th = np.abs(log.theta_err[mask])
    w = np.abs(log.omega_hat[mask] - log.omega_true[mask])
    margin = np.abs(log.margin[mask])
    all_nan = not np.any(np.isfinite(margin))
    return PhaseStats(
        name=name,
        n=int(mask.sum()),
        max_abs_theta_err=float(np.max(th)) if th.size else math.nan,
        mean_abs_theta_err=float(np.mean(th)) if th.size else math.nan,
        mean_abs_omega_err=float(np.mean(w)) if w.size else math.nan,
        rank_deficient_fraction=float(np.mean(log.rank[mask] < 4)),
        min_abs_margin=math.nan if all_nan else float(np.nanmin(margin)),
    )


def summarize(log: TrajectoryLog) -> RunSummary:
    """Per-phase statistics: standstill, injection, motion.

    Motion is where the true speed is nonzero.  The injection phase is
    recovered from the q-axis reference column (deviation from its median),
    so voltage-carrier runs, which leave the references untouched, report
    their injection samples as part of standstill.
    """
    if len(log) == 0:
        raise ValueError("empty log")
    motion = log.omega_true != 0.0
    dev = np.abs(log.iq_ref - np.median(log.iq_ref)) > 0.0
    injection = np.zeros_like(motion)
    if np.any(dev):
        lo, hi = np.nonzero(dev)[0][[0, -1]]
        injection[lo : hi + 1] = True
    injection &= ~motion
    standstill = ~motion & ~injection

    phases = []
    notes = []
    for name, mask in (("standstill", standstill), ("injection", injection), ("motion", motion)):
        if not np.any(mask):
            notes.append(f"phase {name}: no samples, omitted")
            continue
        phases.append(_phase_stats(name, log, mask))
    return RunSummary(
        phases=tuple(phases),
        notes=tuple(notes),
        n_samples=len(log),
        aborted=log.aborted,
    )
