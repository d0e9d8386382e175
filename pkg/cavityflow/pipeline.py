"""The run as a graph of nodes sharing one Store.

    PrepareModelNode ──groundstate──────→ GroundStateNode ─────────┐
                     ──trajectory───────→ TrajectoryEnsembleNode ──┤
                     ──sme──────────────→ SMEEnsembleNode ─────────┤
                     ──thinning─────────→ ThinningEnsembleNode ────┼→ SummarizeNode → EmitArtifactsNode
                     ──meanfield────────→ MeanFieldEnsembleNode ───┤
                     ──describe-geometry→ DescribeGeometryNode ────┘

Ensemble nodes fan trajectory indices out over a process pool (the model is
shipped once per worker through the pool initializer) and gather the records
back in index order.  EmitArtifactsNode is the only node that writes files.

Usage
-----
    from cavityflow.config import parse_config
    from cavityflow.pipeline import run

    out_dir = run(parse_config(preset="smoke"))
"""

from __future__ import annotations

import asyncio
import json
import re
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from cavityflow import __version__
from cavityflow.config import RunConfig, profile_array
from cavityflow.flow import Flow
from cavityflow.logging import get_logger
from cavityflow.meanfield import run_meanfield
from cavityflow.model import SimulationModel, build_model
from cavityflow.node import AsyncNode, Node
from cavityflow.observables import Q, autocorrelation_peak, density_autocorrelation, photocount_rate
from cavityflow.optics import mode_partition, momentum_profile
from cavityflow.records import (
    FLOAT_FORMAT,
    RNG_IDENTITY,
    TrajectoryRecord,
    ensemble_summary,
    plot_frame,
    write_record,
)
from cavityflow.sme import DetectionStats, min_efficiency, run_sme, thinning_mode
from cavityflow.store import Store
from cavityflow.trajectory import simulate

_log = get_logger("pipeline")

# per-site / per-momentum columns are left out of the ensemble summary
_VECTOR_COLUMN = re.compile(r"_(re_|im_)?-?\d+(\.\d+)?$")

# written as their own artifacts, left out of run_state.json
_BULK_KEYS = ("model", "records", "summary", "geometry_frame", "detection_stats")


# ── Worker side ───────────────────────────────────────────────────────────────

_WORKER_PAYLOAD: Any = None


def _init_worker(payload: Any) -> None:
    global _WORKER_PAYLOAD
    _WORKER_PAYLOAD = payload


def _run_trajectory(payload: SimulationModel, seed: int, index: int):
    return simulate(payload, seed, index), None


def _run_sme(payload: SimulationModel, seed: int, index: int):
    return run_sme(payload, seed, index), None


def _run_thinning(payload: SimulationModel, seed: int, index: int):
    return thinning_mode(payload, seed, index)


def _run_meanfield(payload: RunConfig, seed: int, index: int):
    return run_meanfield(payload, seed, index), None


ENGINES: dict[str, Callable[[Any, int, int], tuple[TrajectoryRecord, DetectionStats | None]]] = {
    "trajectory": _run_trajectory,
    "sme": _run_sme,
    "thinning": _run_thinning,
    "meanfield": _run_meanfield,
}


def _run_in_worker(engine: str, seed: int, index: int):
    return ENGINES[engine](_WORKER_PAYLOAD, seed, index)


# ── Nodes ─────────────────────────────────────────────────────────────────────

class PrepareModelNode(Node):
    """Build basis, Ĥ₀ and jump channels; route on the engine name."""

    def prep(self, store):
        return store["config"]

    def exec(self, cfg: RunConfig):
        if cfg.engine in ("meanfield", "describe-geometry"):
            return None
        return build_model(cfg)

    def post(self, store, cfg, model):
        store["model"] = model
        if model is not None:
            store["dimension"] = model.basis.dimension
            store["channels"] = [op.label for op in model.jumps]
        return cfg.engine


class GroundStateNode(Node):
    def prep(self, store):
        return store["model"]

    def exec(self, model: SimulationModel) -> dict[str, Any]:
        ground = model.ground
        obs = model.observables
        psi = ground.state
        rho, m = obs.local_profiles(psi)
        return {
            "energy": ground.energy,
            "degeneracy": ground.degeneracy,
            "residual": ground.residual,
            "dimension": model.basis.dimension,
            "S_Q": obs.structure_factor(psi, Q),
            "M_s": obs.staggered_magnetization(psi),
            "N_odd": obs.odd_site_number(psi)[0],
            "var_N_odd": obs.odd_site_number(psi)[1],
            "rate": photocount_rate(psi, model.jumps) if model.jumps else 0.0,
            "rho": rho.tolist(),
            "m": m.tolist(),
        }

    def post(self, store, model, result):
        store["groundstate"] = result
        store["degeneracy"] = result["degeneracy"]
        return "default"


class EnsembleNode(AsyncNode):
    """Run ``ensemble.trajectories`` realizations of one engine.

    ``workers = 1`` runs inline; otherwise a ProcessPoolExecutor whose
    initializer receives the model (or config) once per process.
    """

    engine: str = "trajectory"

    def prep(self, store):
        cfg: RunConfig = store["config"]
        payload = cfg if self.engine == "meanfield" else store["model"]
        return payload, cfg.seeds(), cfg.ensemble.workers

    async def exec_async(self, prep_result):
        payload, seeds, workers = prep_result
        run_one = ENGINES[self.engine]
        if workers == 1 or len(seeds) == 1:
            results = []
            for seed, index in seeds:
                results.append(run_one(payload, seed, index))
            return results

        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(payload,)) as pool:
            futures = [loop.run_in_executor(pool, _run_in_worker, self.engine, seed, index)
                       for seed, index in seeds]
            results = await asyncio.gather(*futures)
        return sorted(results, key=lambda pair: pair[0].index)

    def post(self, store, prep_result, results):
        records = [record for record, _ in results]
        store["records"] = records
        stats = [s for _, s in results if s is not None]
        if stats:
            store["detection_stats"] = stats
        jumps = [r.n_emitted for r in records]
        _log.info("%s ensemble: %d runs  jumps median=%g", self.engine, len(records),
                  float(np.median(jumps)))
        return "default"


class TrajectoryEnsembleNode(EnsembleNode):
    engine = "trajectory"


class SMEEnsembleNode(EnsembleNode):
    engine = "sme"


class ThinningEnsembleNode(EnsembleNode):
    engine = "thinning"


class MeanFieldEnsembleNode(EnsembleNode):
    engine = "meanfield"


class DescribeGeometryNode(Node):
    """Per-site coefficients, mode partition and Fourier profile of the geometry."""

    def prep(self, store):
        return store["config"]

    def exec(self, cfg: RunConfig) -> tuple[pd.DataFrame, dict[str, Any]]:
        L = cfg.lattice.L
        profile = profile_array(cfg)
        modes = mode_partition(profile)
        mode_of = np.empty(L, dtype=int)
        for m, mode in enumerate(modes):
            mode_of[list(mode.sites)] = m
        k, A_k = momentum_profile(profile)
        autocorrelation = density_autocorrelation(np.abs(profile),
                                                  periodic=cfg.lattice.boundary != "open")
        frame = pd.DataFrame({
            "site": np.arange(L),
            "J_re": profile.real,
            "J_im": profile.imag,
            "mode": mode_of,
            "k": k,
            "A_k_re": A_k.real,
            "A_k_im": A_k.imag,
            "autocorrelation": autocorrelation,
        })
        info = {
            "geometry": cfg.geometry.build(L).to_dict(),
            "period": autocorrelation_peak(autocorrelation),
            "modes": [{"coefficient": [m.coefficient.real, m.coefficient.imag],
                       "sites": list(m.sites)} for m in modes],
        }
        return frame, info

    def post(self, store, cfg, result):
        store["geometry_frame"], store["geometry"] = result
        _log.info("Geometry %s: %d mode(s)", result[1]["geometry"]["name"], len(result[1]["modes"]))
        return "default"


def scalar_columns(frame: pd.DataFrame) -> list[str]:
    return [c for c in frame.columns if c != "t" and not _VECTOR_COLUMN.search(c)]


def detection_report(stats: list[DetectionStats], cfg: RunConfig) -> dict[str, Any]:
    """Per-replica counts plus ensemble mean/variance of N_ph against ηN_e."""
    n_ph = np.array([s.N_ph for s in stats], dtype=float)
    n_e = np.array([s.N_e for s in stats], dtype=float)
    eta = cfg.channel.eta
    report: dict[str, Any] = {
        "eta": eta,
        "replicas": [s.to_dict() for s in stats],
        "mean_N_e": float(n_e.mean()),
        "mean_N_ph": float(n_ph.mean()),
        "var_N_ph": float(n_ph.var(ddof=1)) if len(stats) > 1 else 0.0,
        "expected_mean_N_ph": float(eta * n_e.mean()),
        "expected_var_N_ph": float(eta * (1 - eta) * n_e.mean()),
    }
    n_total = cfg.lattice.n_total
    if cfg.channel.gamma > 0 and n_total > 0:
        report["min_efficiency"] = min_efficiency(cfg.hubbard.J, cfg.channel.gamma, n_total)
    return report


class SummarizeNode(Node):
    def prep(self, store):
        return store.get("records"), store.get("detection_stats"), store["config"]

    def exec(self, prep_result):
        records, stats, cfg = prep_result
        out: dict[str, Any] = {}
        if records:
            columns = scalar_columns(records[0].to_frame())
            out["summary"] = ensemble_summary(records, columns)
        if stats:
            out["detection"] = detection_report(stats, cfg)
        return out

    def post(self, store, prep_result, out):
        store.update(out)
        return "default"


class EmitArtifactsNode(Node):
    """Single writer for everything under ``output.directory``."""

    def prep(self, store):
        return store

    def exec(self, store: Store) -> dict[str, str]:
        cfg: RunConfig = store["config"]
        out_dir = Path(cfg.output.directory)
        out_dir.mkdir(parents=True, exist_ok=True)
        written: dict[str, str] = {}

        def dump(name: str, payload: Any) -> None:
            path = out_dir / name
            path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
            written[name] = str(path)

        dump("config.json", cfg.to_dict())
        records = store.get("records") or []
        for record in records:
            write_record(record, out_dir / "trajectories")
        if records:
            written["trajectories"] = str(out_dir / "trajectories")
        if "summary" in store:
            store["summary"].to_csv(out_dir / "summary.csv", index=False, float_format=FLOAT_FORMAT)
            written["summary.csv"] = str(out_dir / "summary.csv")
        if "detection" in store:
            dump("detection.json", store["detection"])
        if "groundstate" in store:
            dump("groundstate.json", store["groundstate"])
        if "geometry_frame" in store:
            store["geometry_frame"].to_csv(out_dir / "geometry.csv", index=False,
                                           float_format=FLOAT_FORMAT)
            written["geometry.csv"] = str(out_dir / "geometry.csv")
            dump("geometry.json", store["geometry"])
        if cfg.output.emit_plot_data and records:
            plot_frame(records).to_csv(out_dir / "plot_data.csv", index=False,
                                       float_format=FLOAT_FORMAT)
            written["plot_data.csv"] = str(out_dir / "plot_data.csv")
        return written

    def post(self, store, prep_result, written):
        store["artifacts"] = written
        return "default"


# ── Assembly ──────────────────────────────────────────────────────────────────

def build_flow() -> Flow:
    prepare = PrepareModelNode()
    summarize = SummarizeNode()
    emit = EmitArtifactsNode()
    branches = {
        "groundstate": GroundStateNode(),
        "trajectory": TrajectoryEnsembleNode(),
        "sme": SMEEnsembleNode(),
        "thinning": ThinningEnsembleNode(),
        "meanfield": MeanFieldEnsembleNode(),
        "describe-geometry": DescribeGeometryNode(),
    }
    for action, node in branches.items():
        prepare.then(action, node)
        node.then("default", summarize)
    summarize.then("default", emit)
    return Flow(start=prepare, name="cavityflow")


def _manifest(store: Store, started: datetime, finished: datetime, elapsed: float) -> dict[str, Any]:
    cfg: RunConfig = store["config"]
    return {
        "package": "cavityflow",
        "version": __version__,
        "mode": cfg.mode,
        "engine": cfg.engine,
        "rng": RNG_IDENTITY,
        "seed": cfg.ensemble.seed,
        "trajectories": len(store.get("records") or []),
        "started": started.isoformat(),
        "finished": finished.isoformat(),
        "elapsed_seconds": elapsed,
        "dimension": store.get("dimension"),
        "ground_state_degeneracy": store.get("degeneracy"),
        "stage_seconds": store.get("timings", {}),
        "files": sorted(store.get("artifacts", {})),
    }


def run(cfg: RunConfig) -> Path:
    """Execute *cfg* end to end and return the output directory."""
    store = Store(data={"config": cfg, "timings": {}}, schema={"config": RunConfig},
                  name=cfg.name)
    flow = build_flow()
    flow.on("node_end", lambda name, action, elapsed, s: s["timings"].__setitem__(name, elapsed))
    flow.on("node_error", lambda name, exc, s: _log.error("stage %s failed: %s", name, exc))

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    flow.run(store)
    elapsed = time.perf_counter() - t0
    finished = datetime.now(timezone.utc)

    out_dir = Path(cfg.output.directory)
    manifest = _manifest(store, started, finished, elapsed)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                           encoding="utf-8")
    light = {key: value for key, value in store.items() if key not in _BULK_KEYS}
    Store(data=light, name=store.name).snapshot(out_dir / "run_state.json")
    _log.info("Run '%s' (%s) finished in %.2fs → %s", cfg.name, cfg.mode, elapsed, out_dir)
    return out_dir
