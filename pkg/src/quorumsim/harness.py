"""Seeded ensemble execution, parameter sweeps, and file output.

A run is a pure function of ``(config, run_index)``: its noise stream is
keyed by a per-run seed folded from the master seed, so ensembles can be
executed on any number of workers, in any order, and merge to identical
results. Divergence (a non-finite coordinate) is recorded as a run
outcome, never raised to the caller.

Output layout (one directory per ensemble): a canonical copy of the
config, ``summary.json`` (schema version, config hash, outcomes, bounds
table, ensemble-mean diagnostics, final iterates), ``finals_agents.csv``
and ``finals_quorum.csv`` pools for density estimation, optional per-run
diagnostics CSVs, and wall-clock timings in ``timing.json`` (kept out of
``summary.json`` so the deterministic outputs are byte-stable).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from . import analysis, bounds, dynamics
from .analysis import TrajectoryDiagnostics
from .config import (
    SCHEMA_VERSION,
    SimulationConfig,
    config_hash,
    format_float,
    serialize_config,
)
from .dynamics import AlgorithmKind, DivergenceError, EnsembleState
from .objectives import estimate_curvature
from .stochastic import NoiseStream, fold_seed, initial_positions


@dataclass(frozen=True)
class Outcome:
    kind: str  # "converged" | "diverged" | "max_iters"
    step: int | None = None


@dataclass
class RunRecord:
    """Everything recorded about one seeded simulation."""

    config_hash: str
    run_index: int
    seed: int
    outcome: Outcome
    final_positions: np.ndarray
    final_quorum: np.ndarray | None
    final_velocities: np.ndarray | None
    diagnostics: TrajectoryDiagnostics
    com_trajectory: np.ndarray | None = None
    noise_trajectory: np.ndarray | None = None
    eps_trajectory: np.ndarray | None = None

    @property
    def final_com(self):
        return self.final_positions.mean(axis=0)


def _initial_state(cfg: SimulationConfig, obj, run_seed):
    n = obj.dimension
    if cfg.init == "uniform":
        positions = initial_positions(run_seed, cfg.agents, n, cfg.init_low, cfg.init_high)
    else:
        positions = np.tile(np.asarray(cfg.init_point, dtype=float), (cfg.agents, 1))
    needs_velocity = cfg.algorithm in dynamics.MOMENTUM_KINDS or (
        cfg.algorithm is AlgorithmKind.SD_QSGD and cfg.sd_momentum
    )
    velocities = np.zeros_like(positions) if needs_velocity else None
    com = positions.mean(axis=0)
    if cfg.algorithm in dynamics.QUORUM_KINDS:
        quorum = com.copy()
    elif cfg.ema_quorum:
        quorum = com.copy()  # reporting-only exponential average
    else:
        quorum = None
    return EnsembleState(
        positions=positions, etas=cfg.eta_vector(), velocities=velocities, quorum=quorum
    )


def _make_stepper(cfg: SimulationConfig, obj):
    """Bind the configured algorithm to a ``(state, zeta) -> state`` callable."""
    kind = cfg.algorithm
    if cfg.integrator == "euler_maruyama":
        drift = dynamics.EmDrift.EASGD if kind in dynamics.QUORUM_KINDS else dynamics.EmDrift.QSGD
        eta = float(cfg.eta_vector()[0])
        k = 0.0 if kind is AlgorithmKind.SGD else cfg.k

        def em_step(state, zeta):
            return dynamics.euler_maruyama_step(
                state, obj, drift, cfg.dt, k, eta=eta, b=1.0, zeta=zeta
            )

        return em_step

    if kind is AlgorithmKind.SGD:
        return lambda state, zeta: dynamics.step_qsgd(state, obj, 0.0, zeta=zeta)
    if kind is AlgorithmKind.QSGD:
        return lambda state, zeta: dynamics.step_qsgd(state, obj, cfg.k, zeta=zeta)
    if kind is AlgorithmKind.QSGD_MOMENTUM:
        return lambda state, zeta: dynamics.step_qsgd_momentum(
            state, obj, cfg.k, cfg.delta, zeta=zeta
        )
    if kind is AlgorithmKind.EASGD:
        return lambda state, zeta: dynamics.step_easgd(state, obj, cfg.k, zeta=zeta)
    if kind is AlgorithmKind.EASGD_NESTEROV:
        return lambda state, zeta: dynamics.step_easgd_nesterov(
            state, obj, cfg.k, cfg.delta, zeta=zeta
        )
    if kind is AlgorithmKind.SD_QSGD:
        schedule = build_schedule(cfg)
        delta = cfg.delta if cfg.sd_momentum else None

        def sd_step(state, zeta):
            scores = obj.value_batch(state.positions)
            return dynamics.step_sd_qsgd(
                state, obj, schedule, scores, zeta=zeta, delta=delta
            )

        return sd_step
    if kind is AlgorithmKind.GENERIC_QUORUM:
        filter_fn = build_filter(cfg)
        eta_q = cfg.eta_quorum if cfg.eta_quorum is not None else float(cfg.eta_vector()[0])
        return lambda state, zeta: dynamics.step_generic_quorum(
            state, obj, cfg.k, filter_fn, eta_q, zeta=zeta
        )
    raise ValueError(f"unsupported algorithm {kind}")


def build_schedule(cfg: SimulationConfig):
    if cfg.schedule == "constant":
        return dynamics.Constant(cfg.k)
    if cfg.schedule == "time_ramp":
        return dynamics.TimeRamp(cfg.k0, cfg.k1, cfg.ramp_steps)
    return dynamics.WtaSpike(
        k=cfg.k, M=cfg.wta_m, tau=cfg.wta_tau, t_f=cfg.wta_t_f, epoch_len=cfg.epoch_len
    )


def build_filter(cfg: SimulationConfig):
    if cfg.filter == "linear":
        gain = cfg.filter_gain

        def linear(q, com):
            return gain * (com - q)

        return linear
    if cfg.filter == "tanh":
        return lambda q, com: np.tanh(com - q)
    raise ValueError(f"unknown quorum filter {cfg.filter!r}")


def _record_point(diag_rows, state, obj):
    # near-divergence states can overflow in the diagnostics themselves
    with np.errstate(over="ignore", invalid="ignore"):
        positions = state.positions
        com = positions.mean(axis=0)
        sync = analysis.sync_measure(positions)
        eps = float(np.linalg.norm(analysis.epsilon_distortion(obj, positions)))
        ref = state.quorum if state.quorum is not None else com
        loss_q = float(obj.value(ref))
        loss_mean = float(np.mean(obj.value_batch(positions)))
    diag_rows.append((state.step, sync, eps, loss_q, loss_mean))


def run_simulation(cfg: SimulationConfig, run_index, obj=None, noise_model=None) -> RunRecord:
    """Execute one seeded run of the configured algorithm."""
    cfg.validate()
    obj = obj if obj is not None else cfg.build_objective()
    noise_model = noise_model if noise_model is not None else cfg.build_noise()
    run_seed = fold_seed(cfg.master_seed, run_index)
    state = _initial_state(cfg, obj, run_seed)
    stream = NoiseStream(noise_model, run_seed, cfg.agents, obj.dimension)
    stepper = _make_stepper(cfg, obj)
    chash = config_hash(cfg)

    record_full = cfg.record_full
    com_rows = [state.positions.mean(axis=0)] if record_full else None
    noise_rows = [] if record_full else None
    eps_rows = [] if record_full else None
    scale = np.sqrt(cfg.batch_size * cfg.agents)

    lr_state = dynamics.LrScheduleState.initial(cfg.agents) if cfg.lr_schedule else None

    diag_rows = []
    _record_point(diag_rows, state, obj)
    outcome = Outcome("max_iters")
    for t in range(cfg.iterations):
        if lr_state is not None and t > 0 and t % cfg.lr_check_stride == 0:
            losses = obj.value_batch(state.positions)
            new_etas, lr_state = dynamics.lr_schedule_step(state.etas, lr_state, losses)
            state = dc_replace(state, etas=new_etas)
        zeta = stream.block(state.step, state.positions)
        if record_full:
            eps_rows.append(analysis.epsilon_distortion(obj, state.positions))
            noise_rows.append(scale * zeta.mean(axis=0))
        try:
            state = stepper(state, zeta)
        except DivergenceError as err:
            outcome = Outcome("diverged", err.step)
            if record_full:  # keep the recorded series aligned (T+1 vs T)
                eps_rows.pop()
                noise_rows.pop()
            break
        if state.step % cfg.record_stride == 0 or state.step == cfg.iterations:
            _record_point(diag_rows, state, obj)
        if record_full:
            com_rows.append(state.positions.mean(axis=0))

    rows = np.asarray(diag_rows, dtype=float)
    diagnostics = TrajectoryDiagnostics(
        steps=rows[:, 0].astype(int),
        sync_measure=rows[:, 1],
        eps_norm=rows[:, 2],
        loss_quorum=rows[:, 3],
        loss_mean_agents=rows[:, 4],
    )
    return RunRecord(
        config_hash=chash,
        run_index=run_index,
        seed=run_seed,
        outcome=outcome,
        final_positions=state.positions,
        final_quorum=None if state.quorum is None else state.quorum.copy(),
        final_velocities=None if state.velocities is None else state.velocities.copy(),
        diagnostics=diagnostics,
        com_trajectory=None if com_rows is None else np.asarray(com_rows),
        noise_trajectory=None if noise_rows is None else np.asarray(noise_rows),
        eps_trajectory=None if eps_rows is None else np.asarray(eps_rows),
    )


@dataclass
class EnsembleResult:
    config: SimulationConfig
    records: list
    summary: dict
    elapsed_seconds: float


def run_ensemble(cfg: SimulationConfig, workers=1) -> EnsembleResult:
    """Execute all runs of the configured ensemble and merge their results.

    Runs are independent; with ``workers > 1`` they execute on a thread
    pool and are merged in run-index order, so the merged output is
    identical to serial execution.
    """
    cfg.validate()
    obj = cfg.build_objective()
    noise_model = cfg.build_noise()
    t0 = time.perf_counter()
    indices = range(cfg.runs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(lambda i: run_simulation(cfg, i, obj, noise_model), indices)
            )
    else:
        records = [run_simulation(cfg, i, obj, noise_model) for i in indices]
    elapsed = time.perf_counter() - t0
    summary = _summarize(cfg, records)
    return EnsembleResult(config=cfg, records=records, summary=summary, elapsed_seconds=elapsed)


def _summarize(cfg: SimulationConfig, records):
    completed = [r for r in records if r.outcome.kind != "diverged"]
    diverged = [r for r in records if r.outcome.kind == "diverged"]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "runs": len(records),
        "diverged": len(diverged),
        "outcomes": [
            {"run_index": r.run_index, "kind": r.outcome.kind, "step": r.outcome.step}
            for r in records
        ],
        "work": {"steps_total": int(sum(len(r.diagnostics) for r in records)),
                 "iterations": cfg.iterations * len(records)},
    }
    if completed:
        steps = completed[0].diagnostics.steps
        mean = {"step": [int(s) for s in steps]}
        for name in ("sync_measure", "eps_norm", "loss_quorum", "loss_mean_agents"):
            stack = np.stack([getattr(r.diagnostics, name) for r in completed])
            mean[name] = stack.mean(axis=0)
        summary["diagnostics_mean"] = mean
        summary["final_com"] = [r.final_com for r in completed]
        summary["final_quorum"] = [
            r.final_quorum if r.final_quorum is not None else r.final_com for r in completed
        ]
    else:
        summary["diagnostics_mean"] = None
        summary["final_com"] = []
        summary["final_quorum"] = []
    summary["bounds"] = bounds_table(cfg)
    return summary


# ---------------------------------------------------------------------------
# Theory table
# ---------------------------------------------------------------------------

def bound_inputs_for(cfg: SimulationConfig, overrides=None, curvature_samples=400):
    """Assemble bound inputs from a config, estimating curvature if needed.

    Quadratic objectives carry exact constants; for the model landscapes
    the negated-Hessian and third-derivative bounds are estimated over the
    initialization box. Explicit ``overrides`` (C, Q, lambda_bar,
    lambda_strong) take precedence.
    """
    overrides = dict(overrides or {})
    obj = cfg.build_objective()
    etas = cfg.eta_vector()
    if obj.curvature is not None:
        curv = obj.curvature
    else:
        needed = {"lambda_bar", "Q"} - set(overrides)
        if obj.dimension > 8 and needed:
            # the third-derivative scan costs O(d^2) gradient evaluations
            # per sample; past a few dimensions require explicit constants
            raise ValueError(
                f"curvature estimation in dimension {obj.dimension} is too "
                f"expensive; supply overrides for {sorted(needed)}"
            )
        lo = np.full(obj.dimension, cfg.init_low)
        hi = np.full(obj.dimension, cfg.init_high)
        if cfg.init == "point":
            center = np.asarray(cfg.init_point, dtype=float)
            lo, hi = center - 1.0, center + 1.0
        samples = curvature_samples if obj.dimension == 1 else min(curvature_samples, 50)
        curv = estimate_curvature(obj, np.stack([lo, hi], axis=1), samples=samples, seed=0)
    return bounds.BoundInputs(
        p=cfg.agents,
        n=obj.dimension,
        b=cfg.batch_size,
        eta=float(overrides.get("eta", etas.mean())),
        C=float(overrides.get("C", cfg.noise_trace_bound())),
        Q=float(overrides.get("Q", curv.q_bound if curv.q_bound is not None else 0.0)),
        k=cfg.k,
        lambda_bar=float(overrides.get("lambda_bar", curv.lambda_bar)),
        lambda_strong=float(
            overrides.get(
                "lambda_strong",
                curv.lambda_strong if curv.lambda_strong is not None else 0.0,
            )
        ),
    )


def bounds_table(cfg: SimulationConfig, overrides=None, inputs=None):
    """All bound rows applicable to a config; None when assembly fails.

    Rows carry ``{name, value, status, detail}``; bounds whose
    preconditions fail are listed as not applicable.
    """
    try:
        inp = inputs if inputs is not None else bound_inputs_for(cfg, overrides)
    except Exception as exc:  # estimation failure: table is advisory
        return [{"name": "inputs", "value": None, "status": f"unavailable ({exc})",
                 "detail": None}]
    rows = []

    def add(name, fn, detail=None):
        try:
            rows.append({"name": name, "value": float(fn()), "status": "ok",
                         "detail": detail})
        except bounds.BoundDomainError as exc:
            rows.append({"name": name, "value": None,
                         "status": f"not applicable ({exc})", "detail": detail})

    etas = cfg.eta_vector()
    add("sync_bound", lambda: bounds.sync_bound(inp))
    if not np.allclose(etas, etas[0]):
        add("sync_bound_multi_lr", lambda: bounds.sync_bound_multi_lr(inp, etas))
    add("eps_bound", lambda: bounds.eps_bound(inp, inp.k - inp.lambda_bar))
    add("qsgd_conv_bound", lambda: bounds.qsgd_conv_bound(inp))
    if cfg.algorithm in (AlgorithmKind.EASGD, AlgorithmKind.EASGD_NESTEROV):
        def easgd_pair():
            gamma = bounds.easgd_rate(inp.lambda_strong, inp.k, inp.p)
            rows.append({"name": "easgd_rate", "value": gamma, "status": "ok",
                         "detail": None})
            return bounds.easgd_conv_bound(inp, inp.C, gamma)

        add("easgd_conv_bound", easgd_pair, detail="C_p taken equal to C")
    if cfg.algorithm is AlgorithmKind.SD_QSGD and cfg.schedule == "wta":
        def sd_rate():
            phases = np.linspace(0.0, cfg.wta_t_f, 257)
            sums = [
                np.sum(dynamics.wta_gains(t, 0, cfg.k, cfg.wta_m, cfg.wta_tau,
                                          cfg.wta_t_f, cfg.agents))
                for t in phases
            ]
            rate = bounds.sd_sync_rate(float(min(sums)), inp.lambda_bar)
            if not rate.guaranteed:
                raise bounds.BoundDomainError("no synchronization guarantee")
            return rate.rate

        add("sd_sync_rate", sd_rate, detail="gain sum minimized over the spike phase")
    return rows


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("k", "p", "eta")


def sweep_config(cfg: SimulationConfig, axis, value) -> SimulationConfig:
    if axis == "k":
        new = dc_replace(cfg, k=float(value))
    elif axis == "p":
        new = dc_replace(cfg, agents=int(value))
    elif axis == "eta":
        new = dc_replace(cfg, eta=float(value))
    else:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
    return new.validate()


def run_sweep(cfg: SimulationConfig, axis, values, workers=1):
    """Run one ensemble per axis value; returns ``[(value, EnsembleResult)]``."""
    if not len(values):
        raise ValueError("sweep needs at least one value")
    results = []
    for value in values:
        results.append((value, run_ensemble(sweep_config(cfg, axis, value), workers=workers)))
    return results


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------

def dump_json(obj, indent=0) -> str:
    """Deterministic JSON with floats at full precision."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  "{key}": {dump_json(val, indent + 1)}' for key, val in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        return "[" + ", ".join(dump_json(v, indent) for v in seq) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            return '"inf"' if x > 0 else ('"-inf"' if x < 0 else '"nan"')
        return format_float(x)
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_finals_csv(path, records, selector, label):
    lines = []
    for r in records:
        block = selector(r)
        if block is None:
            continue
        block = np.atleast_2d(block)
        for idx, row in enumerate(block):
            cells = [str(r.run_index)]
            if label:
                cells.append(str(idx))
            cells.extend(format_float(float(v)) for v in row)
            lines.append(",".join(cells))
    n = 0
    for r in records:
        block = selector(r)
        if block is not None:
            n = np.atleast_2d(block).shape[1]
            break
    coords = ",".join(f"coord_{j}" for j in range(n))
    header = ("run_index,agent_index," if label else "run_index,") + coords
    path.write_text(header + "\n" + "\n".join(lines) + ("\n" if lines else ""))


def write_diagnostics_csv(path, diagnostics: TrajectoryDiagnostics):
    header = "step,sync_measure,eps_norm,loss_quorum,loss_mean"
    lines = [header]
    for i in range(len(diagnostics)):
        lines.append(
            ",".join(
                [str(int(diagnostics.steps[i]))]
                + [
                    format_float(float(getattr(diagnostics, name)[i]))
                    for name in ("sync_measure", "eps_norm", "loss_quorum", "loss_mean_agents")
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def write_ensemble(result: EnsembleResult, out_dir, per_run_csv=False):
    """Write the documented ensemble output directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(serialize_config(result.config))
    (out / "summary.json").write_text(dump_json(result.summary) + "\n")
    (out / "timing.json").write_text(
        dump_json({"elapsed_seconds": result.elapsed_seconds}) + "\n"
    )
    _write_finals_csv(out / "finals_agents.csv", result.records,
                      lambda r: r.final_positions, label=True)
    _write_finals_csv(
        out / "finals_quorum.csv",
        result.records,
        lambda r: (r.final_quorum if r.final_quorum is not None else r.final_com)[None, :],
        label=False,
    )
    if per_run_csv:
        runs_dir = out / "runs"
        runs_dir.mkdir(exist_ok=True)
        for r in result.records:
            write_diagnostics_csv(runs_dir / f"run_{r.run_index}.csv", r.diagnostics)
    return out


def write_sweep(results, out_dir, per_run_csv=False):
    """Write per-value ensemble directories plus the combined sweep CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    axis_rows = []
    for value, res in results:
        sub = write_ensemble(res, out / f"value_{value}", per_run_csv=per_run_csv)
        dm = res.summary.get("diagnostics_mean")
        post = {}
        if dm:
            for name in ("sync_measure", "eps_norm", "loss_quorum", "loss_mean_agents"):
                series = np.asarray(dm[name], dtype=float)
                start = min(int(0.2 * series.size), series.size - 1)
                post[name] = float(series[start:].mean())
        axis_rows.append((value, res.summary["runs"], res.summary["diverged"], post, sub))
    header = ("axis_value,runs,diverged,sync_measure_mean,eps_norm_mean,"
              "loss_quorum_mean,loss_mean_agents_mean")
    lines = [header]
    for value, runs, diverged, post, _ in axis_rows:
        cells = [format_float(float(value)), str(runs), str(diverged)]
        for name in ("sync_measure", "eps_norm", "loss_quorum", "loss_mean_agents"):
            cells.append(format_float(post[name]) if name in post else "")
        lines.append(",".join(cells))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return out
