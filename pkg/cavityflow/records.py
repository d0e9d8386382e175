"""TrajectoryRecord and its on-disk forms.

One record per realization (pure trajectory, SME run, thinning replica or
mean-field run).  On disk it becomes

    trajectories/traj_<NNNN>.csv    one row per snapshot: t, norm2, N_ph, [N_e], observables
    trajectories/traj_<NNNN>.json   seed, RNG identity, jump times/channels, detection flags

Floats are written with 17 significant digits so identical runs produce
bit-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from cavityflow.logging import get_logger

_log = get_logger("records")

FLOAT_FORMAT = "%.17g"
RNG_IDENTITY = "numpy.random.Philox/SeedSequence(seed, spawn_key=(index,))"
QUANTILES = (0.25, 0.5, 0.75)


def snapshot_grid(t_max: float, cadence: float) -> np.ndarray:
    """0, cadence, 2·cadence, ..., t_max (t_max always included)."""
    if t_max < 0 or cadence <= 0:
        raise ValueError(f"need t_max ≥ 0 and cadence > 0, got {t_max}, {cadence}")
    n = int(np.floor(t_max / cadence + 1e-9))
    grid = cadence * np.arange(n + 1)
    if t_max - grid[-1] > 1e-9 * max(1.0, t_max):
        grid = np.append(grid, t_max)
    return grid


def photocount_from_jumps(jump_times: Sequence[float], grid: np.ndarray) -> np.ndarray:
    """N(t) = #{jumps with time ≤ t} on *grid*."""
    return np.searchsorted(np.sort(np.asarray(jump_times, dtype=float)), grid, side="right")


@dataclass
class TrajectoryRecord:
    """Time series of one realization.

    ``rows[i]`` holds the observable snapshot at ``times[i]`` taken on the
    normalized state; ``norm2[i]`` is the unnormalized norm² at that time.
    ``detected[j]`` flags whether emission ``j`` was registered (always True
    for the efficient pure engine).
    """

    index: int
    seed: int
    engine: str
    times: np.ndarray
    norm2: np.ndarray
    rows: list[dict[str, float]]
    jump_times: list[float] = field(default_factory=list)
    jump_channels: list[int] = field(default_factory=list)
    detected: list[bool] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def n_emitted(self) -> int:
        return len(self.jump_times)

    @property
    def n_detected(self) -> int:
        return int(sum(self.detected))

    @property
    def detected_times(self) -> list[float]:
        return [t for t, flag in zip(self.jump_times, self.detected) if flag]

    @property
    def photocounts(self) -> np.ndarray:
        """Detected-photon count N_ph on the snapshot grid."""
        return photocount_from_jumps(self.detected_times, self.times)

    @property
    def emissions(self) -> np.ndarray:
        return photocount_from_jumps(self.jump_times, self.times)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times, "norm2": self.norm2, "N_ph": self.photocounts})
        if self.engine == "thinning":
            frame["N_e"] = self.emissions
        observables = pd.DataFrame(self.rows, index=frame.index)
        return pd.concat([frame, observables], axis=1)

    def sidecar(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "seed": self.seed,
            "engine": self.engine,
            "rng": RNG_IDENTITY,
            "n_snapshots": len(self.times),
            "n_emitted": self.n_emitted,
            "n_detected": self.n_detected,
            "jump_times": [float(t) for t in self.jump_times],
            "jump_channels": [int(c) for c in self.jump_channels],
            "detected": [bool(d) for d in self.detected],
            "metadata": self.metadata,
        }


def write_record(record: TrajectoryRecord, directory: str | Path) -> tuple[Path, Path]:
    """Write ``traj_<NNNN>.csv`` and ``traj_<NNNN>.json`` under *directory*."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f"traj_{record.index:04d}"
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"
    record.to_frame().to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
    json_path.write_text(json.dumps(record.sidecar(), indent=2, sort_keys=True), encoding="utf-8")
    _log.debug("Record %d written → %s", record.index, csv_path)
    return csv_path, json_path


def ensemble_summary(
    records: Sequence[TrajectoryRecord],
    columns: Sequence[str] | None = None,
) -> pd.DataFrame:
    """Per-time mean, standard error, median and quartiles across records.

    Output columns: ``t`` then ``<col>_mean``, ``<col>_sem``, ``<col>_q25``,
    ``<col>_median``, ``<col>_q75`` for every selected column.
    """
    if not records:
        raise ValueError("ensemble_summary needs at least one record")
    frames = []
    for record in records:
        frame = record.to_frame()
        frame["trajectory"] = record.index
        frames.append(frame)
    stacked = pd.concat(frames, ignore_index=True)
    if columns is None:
        columns = [c for c in stacked.columns if c not in ("t", "trajectory")]
    grouped = stacked.groupby("t", sort=True)[list(columns)]

    summary = pd.DataFrame(index=grouped.size().index)
    mean = grouped.mean()
    sem = grouped.sem(ddof=1) if len(records) > 1 else mean * 0.0
    quantiles = grouped.quantile(list(QUANTILES))
    for col in columns:
        summary[f"{col}_mean"] = mean[col]
        summary[f"{col}_sem"] = sem[col]
        for q, label in zip(QUANTILES, ("q25", "median", "q75")):
            summary[f"{col}_{label}"] = quantiles[col].xs(q, level=-1)
    return summary.reset_index()


def plot_frame(records: Sequence[TrajectoryRecord]) -> pd.DataFrame:
    """Long format ``trajectory, t, observable, value`` for plotting tools."""
    frames = []
    for record in records:
        frame = record.to_frame()
        frame["trajectory"] = record.index
        frames.append(frame.melt(id_vars=["trajectory", "t"], var_name="observable",
                                 value_name="value"))
    return pd.concat(frames, ignore_index=True)
