"""HTTP service wrapping the simulator, bounds, and analysis operations.

Runs are executed synchronously (desk-scale workloads complete in
seconds to minutes); the endpoints mirror the CLI subcommands. Invalid
configurations are reported as 422 responses with the validation
message.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, analysis, harness
from ..cli import build_report
from ..config import ConfigError, config_from_dict
from .schemas import (
    BoundsRequest,
    BoundsResponse,
    HealthResponse,
    KdeRequest,
    KdeResponse,
    ReportRequest,
    ReportResponse,
    RunRequest,
    RunResponse,
    SweepRequest,
    SweepResponse,
    SweepRow,
)


def _resolve_config(payload, seed=None):
    try:
        cfg = config_from_dict(payload)
        if seed is not None:
            cfg.master_seed = int(seed)
            cfg.validate()
        return cfg
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None


def _listify(tree):
    if isinstance(tree, dict):
        return {k: _listify(v) for k, v in tree.items()}
    if isinstance(tree, np.ndarray):
        return tree.tolist()
    if isinstance(tree, (list, tuple)):
        return [_listify(v) for v in tree]
    if isinstance(tree, (np.floating, np.integer)):
        return tree.item()
    return tree


def create_app() -> FastAPI:
    app = FastAPI(
        title="quorumsim",
        version=__version__,
        description="Coupled-agent stochastic gradient simulation service",
    )

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest):
        cfg = _resolve_config(request.config, request.seed)
        result = harness.run_ensemble(cfg, workers=request.workers)
        summary = _listify(result.summary)
        return RunResponse(elapsed_seconds=result.elapsed_seconds, **summary)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(request: SweepRequest):
        cfg = _resolve_config(request.config, request.seed)
        if request.axis not in harness.SWEEP_AXES:
            raise HTTPException(status_code=422,
                                detail=f"axis must be one of {harness.SWEEP_AXES}")
        if not request.values:
            raise HTTPException(status_code=422, detail="values must be nonempty")
        try:
            results = harness.run_sweep(cfg, request.axis, request.values,
                                        workers=request.workers)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        rows = []
        for value, res in results:
            dm = res.summary.get("diagnostics_mean")
            post = {}
            if dm:
                for name in ("sync_measure", "eps_norm", "loss_quorum", "loss_mean_agents"):
                    series = np.asarray(dm[name], dtype=float)
                    start = min(int(0.2 * series.size), series.size - 1)
                    post[f"{name}_mean"] = float(series[start:].mean())
            rows.append(
                SweepRow(
                    axis_value=float(value),
                    runs=res.summary["runs"],
                    diverged=res.summary["diverged"],
                    sync_measure_mean=post.get("sync_measure_mean"),
                    eps_norm_mean=post.get("eps_norm_mean"),
                    loss_quorum_mean=post.get("loss_quorum_mean"),
                    loss_mean_agents_mean=post.get("loss_mean_agents_mean"),
                )
            )
        return SweepResponse(axis=request.axis, rows=rows)

    @app.post("/bounds", response_model=BoundsResponse)
    def bound_table(request: BoundsRequest):
        cfg = _resolve_config(request.config)
        return BoundsResponse(rows=harness.bounds_table(cfg, overrides=request.overrides))

    @app.post("/kde", response_model=KdeResponse)
    def density(request: KdeRequest):
        try:
            est = analysis.kde(request.samples, bandwidth=request.bandwidth,
                               grid_points=request.grid_points)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        if est.spike:
            return KdeResponse(grid=[], density=[], bandwidth=0.0, spike=True,
                               spike_location=est.spike_location)
        return KdeResponse(
            grid=est.grid.tolist(),
            density=est.density.tolist(),
            bandwidth=est.bandwidth,
        )

    @app.post("/report", response_model=ReportResponse)
    def report(request: ReportRequest):
        cfg = _resolve_config(request.config, request.seed)
        result = harness.run_ensemble(cfg, workers=request.workers)
        try:
            payload = build_report(cfg, _listify(result.summary),
                                   burn_in=request.burn_in,
                                   overrides=request.overrides)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return ReportResponse(
            config_hash=payload["config_hash"],
            burn_in=payload["burn_in"],
            entries=payload["entries"],
        )

    return app


app = create_app()
