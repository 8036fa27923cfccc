"""Request and response models for the HTTP service.

Requests identify a scenario either by builtin name or by inline INI
text, never both, and may layer key=value overrides on top.  Responses
carry whole result tables (columns plus rows) and are shaped exactly
like the payloads the bundle writers consume, so a client can save a
bundle straight from a response body.  Non-finite numbers are replaced
with nulls before serialisation because strict JSON cannot carry them.
"""

import math

from pydantic import BaseModel, Field, model_validator


def finite_or_none(value):
    """JSON-safe float: None replaces nan and infinities."""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def safe_rows(rows):
    out = []
    for row in rows:
        out.append([
            cell if isinstance(cell, str) else finite_or_none(cell)
            for cell in row
        ])
    return out


class Table(BaseModel):
    columns: list[str]
    rows: list[list[float | str | None]]


class ScenarioRef(BaseModel):
    """A scenario given by builtin name or inline INI text, plus overrides."""

    scenario: str | None = None
    ini: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _exactly_one_source(self):
        if (self.scenario is None) == (self.ini is None):
            raise ValueError("give exactly one of scenario or ini")
        return self


class RunRequest(ScenarioRef):
    seed: int = 0
    include_snapshots: bool = True
    max_snapshots: int = Field(default=11, ge=0, le=101)


class PdeSnapshot(BaseModel):
    time: float
    red: list[list[float]]
    blue: list[list[float]]


class CaSnapshot(BaseModel):
    step: int
    agents: list[tuple[str, int, int, int]]


class RunResponseBase(BaseModel):
    engine: str
    scenario_name: str
    seed: int
    ini: str
    nx: int
    ny: int
    error: str | None = None
    wall_time: float
    summary: dict[str, str]
    losses: Table
    metrics: Table


class PdeRunResponse(RunResponseBase):
    snapshots: list[PdeSnapshot]


class CaRunResponse(RunResponseBase):
    snapshots: list[CaSnapshot]


class EnsembleRequest(ScenarioRef):
    n_seeds: int = Field(ge=1, le=10000)
    seed0: int = 0
    jobs: int = Field(default=1, ge=1, le=64)


class EnsembleResponse(BaseModel):
    scenario_name: str
    ini: str
    n_seeds: int
    seed0: int
    jobs: int
    wall_time: float
    counts: dict[str, int]
    precession_fraction: float
    crossed_fraction: float
    n_failures: int
    summary: dict[str, str]
    results: Table


class CompareRequest(BaseModel):
    pde: ScenarioRef
    ca: ScenarioRef
    seed: int = 0
    n_points: int = Field(default=21, ge=2, le=1001)


class CompareResponse(BaseModel):
    pde_name: str
    ca_name: str
    pde_ini: str
    ca_ini: str
    pde_error: str | None = None
    ca_error: str | None = None
    wall_time: float
    centroid_rmse_red: float | None
    centroid_rmse_blue: float | None
    final_gap_red: float | None
    final_gap_blue: float | None
    summary: dict[str, str]
    survivors: Table


class RenderRequest(BaseModel):
    """Grid or roster data to draw as ascii art."""

    kind: str
    red: list[list[float]] | None = None
    blue: list[list[float]] | None = None
    nx: int | None = None
    ny: int | None = None
    agents: list[tuple[str, int, int, int]] | None = None
    red_flag: tuple[int, int] | None = None
    blue_flag: tuple[int, int] | None = None

    @model_validator(mode="after")
    def _fields_match_kind(self):
        if self.kind == "density":
            if self.red is None or self.blue is None:
                raise ValueError("density rendering needs red and blue grids")
        elif self.kind == "lattice":
            if self.agents is None or self.nx is None or self.ny is None:
                raise ValueError("lattice rendering needs nx, ny and agents")
        else:
            raise ValueError("kind must be density or lattice")
        return self


class RenderResponse(BaseModel):
    text: str


class ScenarioInfo(BaseModel):
    name: str
    engine: str
    description: str


class ScenarioDetail(ScenarioInfo):
    ini: str
