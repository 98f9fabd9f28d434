"""FastAPI service wrapping the laboratory.

Every endpoint is a pure computation on the request body: JSON in, JSON out,
no server-side state or file I/O.  Typed lab errors map onto HTTP statuses by
category (usage 400, validation 422, work_cap 403) with a structured body the
CLI converts into exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .capacity import achievability_check, predict_capacity
from .channels import apply_dmc, apply_erasure
from .decoders import TypicalityParams, map_decode_viterbi, typicality_decode
from .errors import LabError, ModelValidationError
from .harness import config_hash_of, derive_seed, exact_map_error, run_sweep, run_trial
from .measures import (
    exact_finite_n,
    hidden_marginal_entropy_rate_bounds,
    markov_entropy_rate,
    smb_estimate,
)
from .models import MarkovColumnSource, sample_matrix
from .schemas import (
    CapacityRequest,
    CapacityReportOut,
    CapacityResponse,
    EstimateRequest,
    EstimateResponse,
    ErrorOut,
    FiniteNTableOut,
    HealthResponse,
    OracleRequest,
    OracleResponse,
    RateBoundsOut,
    RegionCheckOut,
    SimulateRequest,
    SimulateResponse,
    SmbOut,
    SweepRequest,
    SweepResponse,
    TrialOut,
    build_config,
    build_dmc,
    build_estimator,
    build_model,
)

_STATUS = {"usage": 400, "validation": 422, "work_cap": 403}

app = FastAPI(title="completion-lab", version=__version__)


@app.exception_handler(LabError)
async def _lab_error_handler(_: Request, exc: LabError) -> JSONResponse:
    body = ErrorOut(
        category=exc.category,
        message=str(exc),
        violations=getattr(exc, "violations", []) if isinstance(exc, ModelValidationError) else [],
    )
    return JSONResponse(status_code=_STATUS[exc.category], content=body.model_dump())


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/v1/capacity", response_model=CapacityResponse)
def capacity(req: CapacityRequest) -> CapacityResponse:
    model = build_model(req.model)
    dmc = build_dmc(req.dmc, model.q)
    est = build_estimator(req.estimator)
    report = predict_capacity(model, dmc, est)
    region = None
    if req.region_p is not None:
        region = RegionCheckOut.from_check(achievability_check(model, dmc, req.region_p, est))
    return CapacityResponse(report=CapacityReportOut.from_report(report), region=region)


@app.post("/v1/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest) -> SimulateResponse:
    cfg = build_config(req)
    p = cfg.p_grid[0]
    trial = run_trial(cfg, p, req.trial_index)
    # replay the pipeline for the verbose view, same seed derivation as the trial
    truth = sample_matrix(cfg.model, cfg.n, derive_seed(cfg.seed, 0, req.trial_index, 0))
    noisy = apply_dmc(truth, cfg.effective_dmc, derive_seed(cfg.seed, 0, req.trial_index, 1))
    obs = apply_erasure(noisy, p, derive_seed(cfg.seed, 0, req.trial_index, 2))
    estimate = None
    score = None
    if not trial.skipped:
        if cfg.decoder == "map":
            outcome = map_decode_viterbi(obs, cfg.model, cfg.effective_dmc, p)
        else:
            params = TypicalityParams.for_model(cfg.model, p, cfg.epsilon, cfg.est.horizon)
            outcome = typicality_decode(obs, cfg.model, params, cfg.caps.typicality_candidates)
        if outcome.estimate is not None:
            estimate = outcome.estimate.cells.tolist()
            score = outcome.score
    return SimulateResponse(
        trial=TrialOut.from_trial(trial),
        truth=truth.cells.tolist(),
        observed=obs.symbols.tolist(),
        estimate=estimate,
        score=score,
    )


@app.post("/v1/sweep", response_model=SweepResponse)
def sweep(req: SweepRequest) -> SweepResponse:
    cfg = build_config(req)
    chash = config_hash_of(req.model_dump(mode="json"))
    report = run_sweep(cfg, config_hash=chash)
    return SweepResponse.from_report(report)


@app.post("/v1/estimate", response_model=EstimateResponse)
def estimate(req: EstimateRequest) -> EstimateResponse:
    model = build_model(req.model)
    dmc = build_dmc(req.dmc, model.q)
    markov_rate = None
    bounds: list[RateBoundsOut] = []
    if isinstance(model, MarkovColumnSource):
        markov_rate = markov_entropy_rate(model)
        for ell in range(model.k):
            for m in req.horizons:
                bounds.append(
                    RateBoundsOut.from_bounds(
                        ell, hidden_marginal_entropy_rate_bounds(model, ell, m, req.cell_cap)
                    )
                )
    smb = smb_estimate(model, req.smb_n, req.trials, req.seed)
    table = exact_finite_n(model, dmc, req.p, req.n, req.cell_cap)
    return EstimateResponse(
        markov_rate=markov_rate,
        rate_bounds=bounds,
        smb=SmbOut.from_estimate(smb),
        finite_n=FiniteNTableOut.from_table(table),
    )


@app.post("/v1/oracle", response_model=OracleResponse)
def oracle(req: OracleRequest) -> OracleResponse:
    model = build_model(req.model)
    dmc = build_dmc(req.dmc, model.q)
    err = exact_map_error(model, dmc, req.p, req.n, req.oracle_outcomes)
    table = exact_finite_n(model, dmc, req.p, req.n, req.cell_cap)
    return OracleResponse(
        exact_error=err, n=req.n, p=req.p, finite_n=FiniteNTableOut.from_table(table)
    )
