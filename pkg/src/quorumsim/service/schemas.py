"""Request and response models for the HTTP service."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    """One ensemble execution; ``config`` uses the TOML section layout."""

    config: dict[str, Any]
    seed: int | None = None
    workers: int = Field(default=1, ge=1, le=64)


class OutcomeModel(BaseModel):
    run_index: int
    kind: str
    step: int | None = None


class BoundRow(BaseModel):
    name: str
    value: float | None
    status: str
    detail: str | None = None


class RunResponse(BaseModel):
    schema_version: int
    config_hash: str
    runs: int
    diverged: int
    outcomes: list[OutcomeModel]
    work: dict[str, int]
    diagnostics_mean: dict[str, list[float]] | None
    final_com: list[list[float]]
    final_quorum: list[list[float]]
    bounds: list[BoundRow] | None
    elapsed_seconds: float


class SweepRequest(BaseModel):
    config: dict[str, Any]
    axis: str
    values: list[float]
    seed: int | None = None
    workers: int = Field(default=1, ge=1, le=64)


class SweepRow(BaseModel):
    axis_value: float
    runs: int
    diverged: int
    sync_measure_mean: float | None = None
    eps_norm_mean: float | None = None
    loss_quorum_mean: float | None = None
    loss_mean_agents_mean: float | None = None


class SweepResponse(BaseModel):
    axis: str
    rows: list[SweepRow]


class BoundsRequest(BaseModel):
    config: dict[str, Any]
    overrides: dict[str, float] = Field(default_factory=dict)


class BoundsResponse(BaseModel):
    rows: list[BoundRow]


class KdeRequest(BaseModel):
    samples: list[float] = Field(min_length=2)
    bandwidth: float | None = None
    grid_points: int = Field(default=512, ge=8, le=8192)


class KdeResponse(BaseModel):
    grid: list[float]
    density: list[float]
    bandwidth: float
    spike: bool = False
    spike_location: float | None = None


class ReportRequest(BaseModel):
    """Run an ensemble and score it against the applicable bounds."""

    config: dict[str, Any]
    seed: int | None = None
    workers: int = Field(default=1, ge=1, le=64)
    burn_in: float = Field(default=0.2, ge=0.0, lt=1.0)
    overrides: dict[str, float] = Field(default_factory=dict)


class ReportEntry(BaseModel):
    model_config = {"populate_by_name": True}

    quantity: str
    empirical: float
    bound: float | None
    margin: float | None
    passed: bool | None = Field(alias="pass")
    status: str


class ReportResponse(BaseModel):
    config_hash: str
    burn_in: float
    entries: list[ReportEntry]


class HealthResponse(BaseModel):
    status: str
    version: str
