"""Wire format of the service and the on-disk configuration format.

Pydantic models mirror the experiment configuration: pmf and transition
matrices travel as flat arrays in the package's column-state index convention
(row 0 most significant).  Builders convert validated schemas into the core
dataclasses, raising the package's typed errors for semantic violations that
schema validation cannot see (pmf sums, irreducibility, alphabet mismatches).
"""

from __future__ import annotations

from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .capacity import CapacityReport, EstimatorConfig, RegionCheck
from .channels import Dmc
from .errors import UsageError
from .harness import (
    BoundAtP,
    ExperimentConfig,
    SweepReport,
    SweepRow,
    TransitionEstimate,
    TrialResult,
    WorkCaps,
)
from .measures import DEFAULT_CELL_CAP, FiniteNTable, RateBounds, SmbEstimate
from .models import ColumnPmf, MarkovColumnSource, SourceModel, require_valid


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IidModelSpec(_Strict):
    type: Literal["iid"]
    k: int = Field(ge=1)
    q: int = Field(ge=1)
    probs: list[float]


class MarkovModelSpec(_Strict):
    type: Literal["markov"]
    k: int = Field(ge=1)
    q: int = Field(ge=1)
    transition: list[float]


ModelSpec = Annotated[Union[IidModelSpec, MarkovModelSpec], Field(discriminator="type")]


class IdentityDmcSpec(_Strict):
    type: Literal["identity"]


class BscDmcSpec(_Strict):
    type: Literal["bsc"]
    flip: float = Field(ge=0.0, le=1.0)


class MatrixDmcSpec(_Strict):
    type: Literal["matrix"]
    q_in: int = Field(ge=1)
    q_out: int = Field(ge=1)
    w: list[float]


DmcSpec = Annotated[
    Union[IdentityDmcSpec, BscDmcSpec, MatrixDmcSpec], Field(discriminator="type")
]


class EstimatorSpec(_Strict):
    n: int = Field(default=4, ge=1)
    horizon: int = Field(default=8, ge=1)
    trials: int = Field(default=400, ge=1)
    seed: int = Field(default=0, ge=0)
    cell_cap: float = Field(default=DEFAULT_CELL_CAP, gt=0)


class CapsSpec(_Strict):
    enumeration_cells: float = Field(default=DEFAULT_CELL_CAP, gt=0)
    decoder_candidates: float = Field(default=float(1 << 20), gt=0)
    typicality_candidates: float = Field(default=4096.0, gt=0)
    oracle_outcomes: float = Field(default=2_000_000.0, gt=0)


class GridSpec(_Strict):
    p_min: float = Field(ge=0.0, le=1.0)
    p_max: float = Field(ge=0.0, le=1.0)
    steps: int = Field(ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.p_min > self.p_max:
            raise ValueError("p_min must not exceed p_max")
        return self

    def points(self) -> tuple[float, ...]:
        if self.steps == 1:
            return (self.p_max,)
        return tuple(np.linspace(self.p_min, self.p_max, self.steps).tolist())


class ExperimentSpec(_Strict):
    model: ModelSpec
    dmc: DmcSpec | None = None
    n: int = Field(ge=1)
    trials: int = Field(default=1, ge=1)
    decoder: Literal["map", "typicality"] = "map"
    epsilon: float = Field(default=0.1, ge=0.0)
    p: float | None = Field(default=None, ge=0.0, le=1.0)
    grid: GridSpec | None = None
    seed: int = Field(default=0, ge=0, lt=2**64)
    estimator: EstimatorSpec = EstimatorSpec()
    caps: CapsSpec = CapsSpec()
    jobs: int = Field(default=1, ge=1)

    def p_points(self) -> tuple[float, ...]:
        if self.grid is not None:
            return self.grid.points()
        if self.p is not None:
            return (float(self.p),)
        raise UsageError("config needs either a single p or a grid")


# ---------------------------------------------------------------------------
# builders: schema -> core dataclasses
# ---------------------------------------------------------------------------


def build_model(spec: IidModelSpec | MarkovModelSpec) -> SourceModel:
    if isinstance(spec, IidModelSpec):
        model: SourceModel = ColumnPmf(spec.k, spec.q, np.asarray(spec.probs))
    else:
        s = spec.q**spec.k
        flat = np.asarray(spec.transition, dtype=float)
        if flat.size != s * s:
            raise UsageError(
                f"transition needs q^k * q^k = {s * s} entries, got {flat.size}"
            )
        model = MarkovColumnSource.from_transition(spec.k, spec.q, flat.reshape(s, s))
    require_valid(model)
    return model


def build_dmc(spec: DmcSpec | None, q: int) -> Dmc | None:
    if spec is None or isinstance(spec, IdentityDmcSpec):
        return None if spec is None else Dmc.identity(q)
    if isinstance(spec, BscDmcSpec):
        return Dmc.bsc(spec.flip)
    flat = np.asarray(spec.w, dtype=float)
    if flat.size != spec.q_in * spec.q_out:
        raise UsageError(
            f"channel matrix needs q_in * q_out = {spec.q_in * spec.q_out} entries, got {flat.size}"
        )
    return Dmc(spec.q_in, spec.q_out, flat.reshape(spec.q_in, spec.q_out))


def build_estimator(spec: EstimatorSpec) -> EstimatorConfig:
    return EstimatorConfig(
        n=spec.n, horizon=spec.horizon, trials=spec.trials, seed=spec.seed, cell_cap=spec.cell_cap
    )


def build_caps(spec: CapsSpec) -> WorkCaps:
    return WorkCaps(
        enumeration_cells=spec.enumeration_cells,
        decoder_candidates=spec.decoder_candidates,
        typicality_candidates=spec.typicality_candidates,
        oracle_outcomes=spec.oracle_outcomes,
    )


def build_config(spec: ExperimentSpec) -> ExperimentConfig:
    model = build_model(spec.model)
    return ExperimentConfig(
        model=model,
        dmc=build_dmc(spec.dmc, model.q),
        n=spec.n,
        trials=spec.trials,
        decoder=spec.decoder,
        epsilon=spec.epsilon,
        p_grid=spec.p_points(),
        seed=spec.seed,
        est=build_estimator(spec.estimator),
        caps=build_caps(spec.caps),
        jobs=spec.jobs,
    )


# ---------------------------------------------------------------------------
# requests
# ---------------------------------------------------------------------------


class CapacityRequest(_Strict):
    model: ModelSpec
    dmc: DmcSpec | None = None
    estimator: EstimatorSpec = EstimatorSpec()
    region_p: float | None = Field(default=None, ge=0.0, le=1.0)


class SimulateRequest(ExperimentSpec):
    trial_index: int = Field(default=0, ge=0)


class SweepRequest(ExperimentSpec):
    pass


class EstimateRequest(_Strict):
    model: ModelSpec
    dmc: DmcSpec | None = None
    p: float = Field(default=0.5, ge=0.0, le=1.0)
    n: int = Field(default=4, ge=1)
    horizons: list[int] = Field(default_factory=lambda: [2, 4, 6, 8])
    trials: int = Field(default=400, ge=2)
    smb_n: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    cell_cap: float = Field(default=DEFAULT_CELL_CAP, gt=0)


class OracleRequest(_Strict):
    model: ModelSpec
    dmc: DmcSpec | None = None
    p: float = Field(ge=0.0, le=1.0)
    n: int = Field(ge=1)
    oracle_outcomes: float = Field(default=2_000_000.0, gt=0)
    cell_cap: float = Field(default=DEFAULT_CELL_CAP, gt=0)


# ---------------------------------------------------------------------------
# responses
# ---------------------------------------------------------------------------


class ErrorOut(BaseModel):
    category: Literal["usage", "validation", "work_cap"]
    message: str
    violations: list[str] = []


class CapacityReportOut(BaseModel):
    capacity: float
    p_star: float
    method: str
    row_terms: list[float]
    joint_entropy: float
    correction_rows: list[float] | None = None
    correction_eval_p: float | None = None
    correction_n: int | None = None
    correction_increment: float | None = None
    row_bounds: list[tuple[float, float]] | None = None
    capacity_interval: tuple[float, float] | None = None
    diagnostics: dict = {}
    notes: list[str] = []

    @classmethod
    def from_report(cls, r: CapacityReport) -> "CapacityReportOut":
        return cls(
            capacity=r.capacity,
            p_star=r.p_star,
            method=r.method,
            row_terms=list(r.row_terms),
            joint_entropy=r.joint_entropy,
            correction_rows=list(r.correction_rows) if r.correction_rows is not None else None,
            correction_eval_p=r.correction_eval_p,
            correction_n=r.correction_n,
            correction_increment=r.correction_increment,
            row_bounds=[tuple(b) for b in r.row_bounds] if r.row_bounds is not None else None,
            capacity_interval=r.capacity_interval,
            diagnostics=dict(r.diagnostics),
            notes=list(r.notes),
        )

    def to_report(self) -> CapacityReport:
        return CapacityReport(
            capacity=self.capacity,
            p_star=self.p_star,
            method=self.method,
            row_terms=tuple(self.row_terms),
            joint_entropy=self.joint_entropy,
            correction_rows=tuple(self.correction_rows) if self.correction_rows is not None else None,
            correction_eval_p=self.correction_eval_p,
            correction_n=self.correction_n,
            correction_increment=self.correction_increment,
            row_bounds=tuple(tuple(b) for b in self.row_bounds) if self.row_bounds is not None else None,
            capacity_interval=(
                tuple(self.capacity_interval) if self.capacity_interval is not None else None
            ),
            diagnostics=dict(self.diagnostics),
            notes=tuple(self.notes),
        )


class RegionMarginOut(BaseModel):
    rows: list[int]
    margin: float


class RegionCheckOut(BaseModel):
    p: float
    feasible: bool
    margins: list[RegionMarginOut]

    @classmethod
    def from_check(cls, rc: RegionCheck) -> "RegionCheckOut":
        return cls(
            p=rc.p,
            feasible=rc.feasible,
            margins=[RegionMarginOut(rows=list(m.rows), margin=m.margin) for m in rc.margins],
        )


class CapacityResponse(BaseModel):
    report: CapacityReportOut
    region: RegionCheckOut | None = None


class TrialOut(BaseModel):
    index: int
    p: float
    success: bool
    status: str
    tied: bool
    observed_cells: int
    skipped: bool = False
    skip_reason: str | None = None

    @classmethod
    def from_trial(cls, t: TrialResult) -> "TrialOut":
        return cls(
            index=t.index,
            p=t.p,
            success=t.success,
            status=t.status,
            tied=t.tied,
            observed_cells=t.observed_cells,
            skipped=t.skipped,
            skip_reason=t.skip_reason,
        )


class SimulateResponse(BaseModel):
    trial: TrialOut
    truth: list[list[int]]
    observed: list[list[int]]
    estimate: list[list[int]] | None = None
    score: float | None = None


class SweepRowOut(BaseModel):
    p: float
    trials: int
    errors: int
    error_rate: float
    ci_low: float
    ci_high: float
    predicted_feasible: bool | None
    ties: int
    skipped: int


class BoundAtPOut(BaseModel):
    p: float
    n: int
    bound: float


class TransitionOut(BaseModel):
    p_hat: float
    band: tuple[float, float]
    band_clipped: bool


class SweepResponse(BaseModel):
    rows: list[SweepRowOut]
    isotonic_fit: list[float]
    prediction: CapacityReportOut | None
    prediction_error: str | None
    bound_points: list[BoundAtPOut]
    bound_threshold: float | None
    bound_error: str | None
    transition: TransitionOut | None
    transition_error: str | None
    seed: int
    config_hash: str
    versions: dict[str, str]

    @classmethod
    def from_report(cls, r: SweepReport) -> "SweepResponse":
        return cls(
            rows=[SweepRowOut(**row.__dict__) for row in r.rows],
            isotonic_fit=list(r.isotonic_fit),
            prediction=(
                CapacityReportOut.from_report(r.prediction) if r.prediction is not None else None
            ),
            prediction_error=r.prediction_error,
            bound_points=[BoundAtPOut(p=b.p, n=b.n, bound=b.bound) for b in r.bound_points],
            bound_threshold=r.bound_threshold,
            bound_error=r.bound_error,
            transition=(
                TransitionOut(
                    p_hat=r.transition.p_hat,
                    band=r.transition.band,
                    band_clipped=r.transition.band_clipped,
                )
                if r.transition is not None
                else None
            ),
            transition_error=r.transition_error,
            seed=r.seed,
            config_hash=r.config_hash,
            versions=dict(r.versions),
        )

    def to_report(self) -> SweepReport:
        return SweepReport(
            rows=tuple(SweepRow(**row.model_dump()) for row in self.rows),
            isotonic_fit=tuple(self.isotonic_fit),
            prediction=self.prediction.to_report() if self.prediction is not None else None,
            prediction_error=self.prediction_error,
            bound_points=tuple(BoundAtP(b.p, b.n, b.bound) for b in self.bound_points),
            bound_threshold=self.bound_threshold,
            bound_error=self.bound_error,
            transition=(
                TransitionEstimate(
                    self.transition.p_hat, tuple(self.transition.band), self.transition.band_clipped
                )
                if self.transition is not None
                else None
            ),
            transition_error=self.transition_error,
            seed=self.seed,
            config_hash=self.config_hash,
            versions=dict(self.versions),
        )


class RateBoundsOut(BaseModel):
    row: int
    horizon: int
    lower: float
    upper: float

    @classmethod
    def from_bounds(cls, row: int, b: RateBounds) -> "RateBoundsOut":
        return cls(row=row, horizon=b.horizon, lower=b.lower, upper=b.upper)


class SmbOut(BaseModel):
    n: int
    trials: int
    joint_mean: float
    joint_stderr: float
    row_means: list[float]
    row_stderrs: list[float]

    @classmethod
    def from_estimate(cls, e: SmbEstimate) -> "SmbOut":
        return cls(
            n=e.n,
            trials=e.trials,
            joint_mean=e.joint_mean,
            joint_stderr=e.joint_stderr,
            row_means=[float(v) for v in e.row_means],
            row_stderrs=[float(v) for v in e.row_stderrs],
        )


class FiniteNTableOut(BaseModel):
    n: int
    p: float
    k: int
    h_row: list[float]
    i_xy_row: list[float]
    i_xz_row: list[float]
    a_row: list[float]
    b_row: list[float]
    c_row: list[float]
    h_joint: float
    i_xz_joint: float
    identity_dmc: bool
    iid_model: bool
    residuals: dict[str, float]
    csv: str

    @classmethod
    def from_table(cls, t: FiniteNTable) -> "FiniteNTableOut":
        return cls(
            n=t.n,
            p=t.p,
            k=t.k,
            h_row=[float(v) for v in t.h_row],
            i_xy_row=[float(v) for v in t.i_xy_row],
            i_xz_row=[float(v) for v in t.i_xz_row],
            a_row=[float(v) for v in t.a_row],
            b_row=[float(v) for v in t.b_row],
            c_row=[float(v) for v in t.c_row],
            h_joint=t.h_joint,
            i_xz_joint=t.i_xz_joint,
            identity_dmc=t.identity_dmc,
            iid_model=t.iid_model,
            residuals=t.residuals(),
            csv=t.csv_text(),
        )


class EstimateResponse(BaseModel):
    markov_rate: float | None
    rate_bounds: list[RateBoundsOut]
    smb: SmbOut
    finite_n: FiniteNTableOut


class OracleResponse(BaseModel):
    exact_error: float
    n: int
    p: float
    finite_n: FiniteNTableOut


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str
