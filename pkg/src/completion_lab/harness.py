"""Experiment orchestration: seeded trials, observation-rate sweeps,
transition location, an exact error oracle, and report emission.

Reproducibility contract: every trial derives its three seed streams (source
sample, channel noise, erasure pattern) from (root seed, grid index, trial
index), so sweeps are deterministic for any worker count and identical
configurations produce byte-identical CSV output.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import __version__
from .capacity import CapacityReport, EstimatorConfig, predict_capacity, upper_bound_arbitrary
from .channels import Dmc, apply_dmc, apply_erasure
from .decoders import (
    DEFAULT_CANDIDATE_CAP,
    DEFAULT_TYPICALITY_CAP,
    TypicalityParams,
    map_decode_viterbi,
    typicality_decode,
)
from .errors import LabError, TransitionOutsideGrid, UsageError, WorkCapExceeded
from .measures import DEFAULT_CELL_CAP
from .models import NEG_INF, SourceModel, as_column_chain, require_valid, sample_matrix

WILSON_Z = 1.959963984540054  # two-sided 95%

CSV_HEADER = "p,trials,errors,error_rate,ci_low,ci_high,predicted_feasible"


@dataclass(frozen=True)
class WorkCaps:
    enumeration_cells: float = DEFAULT_CELL_CAP
    decoder_candidates: float = DEFAULT_CANDIDATE_CAP
    typicality_candidates: float = DEFAULT_TYPICALITY_CAP
    oracle_outcomes: float = 2_000_000.0


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything one experiment needs; immutable and shareable across workers."""

    model: SourceModel
    dmc: Dmc | None
    n: int
    trials: int
    decoder: Literal["map", "typicality"] = "map"
    epsilon: float = 0.1
    p_grid: tuple[float, ...] = (1.0,)
    seed: int = 0
    est: EstimatorConfig = EstimatorConfig()
    caps: WorkCaps = WorkCaps()
    jobs: int = 1

    def __post_init__(self):
        if self.n < 1 or self.trials < 1:
            raise UsageError("n and trials must be >= 1")
        if self.decoder not in ("map", "typicality"):
            raise UsageError(f"unknown decoder {self.decoder!r}")
        grid = tuple(sorted(float(p) for p in self.p_grid))
        if not grid:
            raise UsageError("p grid must be nonempty")
        if grid[0] < 0.0 or grid[-1] > 1.0:
            raise UsageError("p grid must lie in [0, 1]")
        object.__setattr__(self, "p_grid", grid)

    @property
    def effective_dmc(self) -> Dmc:
        return self.dmc if self.dmc is not None else Dmc.identity(self.model.q)


def derive_seed(root: int, *key: int) -> int:
    """Stable 64-bit stream seed from a root seed and an integer key path."""
    words = np.random.SeedSequence([int(root) & (2**64 - 1), *[int(k) for k in key]])
    a, b = words.generate_state(2, np.uint32)
    return (int(a) << 32) | int(b)


@dataclass(frozen=True)
class TrialResult:
    index: int
    p: float
    success: bool
    status: str
    tied: bool
    observed_cells: int
    skipped: bool = False
    skip_reason: str | None = None


def run_trial(
    cfg: ExperimentConfig,
    p: float,
    trial_index: int,
    p_index: int = 0,
    typicality_params: TypicalityParams | None = None,
) -> TrialResult:
    """One end-to-end draw: sample, corrupt, erase, decode, compare exactly.

    ``typicality_params`` lets sweeps reuse the reference rates across trials;
    when omitted they are derived from the model.
    """
    sample_seed = derive_seed(cfg.seed, p_index, trial_index, 0)
    noise_seed = derive_seed(cfg.seed, p_index, trial_index, 1)
    erase_seed = derive_seed(cfg.seed, p_index, trial_index, 2)
    truth = sample_matrix(cfg.model, cfg.n, sample_seed)
    dmc = cfg.effective_dmc
    noisy = apply_dmc(truth, dmc, noise_seed)
    obs = apply_erasure(noisy, p, erase_seed)
    if cfg.decoder == "map":
        outcome = map_decode_viterbi(obs, cfg.model, dmc, p)
    else:
        if not dmc.is_identity:
            raise UsageError("typicality decoding supports only the noiseless pipeline")
        params = typicality_params or TypicalityParams.for_model(
            cfg.model, p, cfg.epsilon, cfg.est.horizon
        )
        try:
            outcome = typicality_decode(obs, cfg.model, params, cfg.caps.typicality_candidates)
        except WorkCapExceeded as exc:
            return TrialResult(
                trial_index, p, False, "skipped", False, obs.observed_count, True, str(exc)
            )
    success = outcome.status == "decoded" and bool((outcome.estimate.cells == truth.cells).all())
    return TrialResult(
        trial_index, p, success, outcome.status, outcome.tied, obs.observed_count
    )


def wilson_interval(errors: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return (0.0, 1.0)
    ph = errors / trials
    denom = 1.0 + z * z / trials
    center = (ph + z * z / (2 * trials)) / denom
    half = z * math.sqrt(ph * (1.0 - ph) / trials + z * z / (4.0 * trials * trials)) / denom
    # roundoff can push an endpoint just past ph; the interval must contain it
    return (max(0.0, min(center - half, ph)), min(1.0, max(center + half, ph)))


def isotonic_nonincreasing(y: Sequence[float], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted least-squares fit that is monotone nonincreasing (PAVA)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    vals: list[float] = []
    wts: list[float] = []
    cnts: list[int] = []
    for yi, wi in zip(-y, w):
        vals.append(float(yi))
        wts.append(float(wi))
        cnts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            tot = wts[-2] + wts[-1]
            merged = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / tot
            cnt = cnts[-2] + cnts[-1]
            vals = vals[:-2] + [merged]
            wts = wts[:-2] + [tot]
            cnts = cnts[:-2] + [cnt]
    out = np.concatenate([np.full(c, v) for v, c in zip(vals, cnts)])
    return -out


@dataclass(frozen=True)
class TransitionEstimate:
    """Crossing of the fitted error curve with 1/2, plus a CI-band interval."""

    p_hat: float
    band: tuple[float, float]
    band_clipped: bool


def _crossing(p: np.ndarray, fit: np.ndarray, level: float = 0.5) -> float | None:
    for i in range(len(p) - 1):
        a, b = fit[i], fit[i + 1]
        if a >= level >= b:
            if a > b:
                return float(p[i] + (a - level) / (a - b) * (p[i + 1] - p[i]))
            return float(0.5 * (p[i] + p[i + 1]))
    return None


def _transition_from_arrays(
    p: np.ndarray, rates: np.ndarray, lows: np.ndarray, highs: np.ndarray, trials: np.ndarray
) -> TransitionEstimate:
    if len(p) < 3:
        raise UsageError("transition location needs at least 3 grid points")
    fit = isotonic_nonincreasing(rates, trials)
    if fit.max() < 0.5:
        raise TransitionOutsideGrid("below p_min")
    if fit.min() > 0.5:
        raise TransitionOutsideGrid("above p_max")
    p_hat = _crossing(p, fit)
    if p_hat is None:  # fit touches 0.5 only at an endpoint plateau
        raise TransitionOutsideGrid("below p_min" if fit[0] <= 0.5 else "above p_max")
    lo = _crossing(p, isotonic_nonincreasing(lows, trials))
    hi = _crossing(p, isotonic_nonincreasing(highs, trials))
    clipped = lo is None or hi is None
    band = (lo if lo is not None else float(p[0]), hi if hi is not None else float(p[-1]))
    return TransitionEstimate(p_hat, band, clipped)


@dataclass(frozen=True)
class SweepRow:
    p: float
    trials: int
    errors: int
    error_rate: float
    ci_low: float
    ci_high: float
    predicted_feasible: bool | None
    ties: int = 0
    skipped: int = 0


@dataclass(frozen=True)
class BoundAtP:
    p: float
    n: int
    bound: float


@dataclass(frozen=True, eq=False)
class SweepReport:
    """Per-rate empirical error statistics next to the predicted thresholds."""

    rows: tuple[SweepRow, ...]
    isotonic_fit: tuple[float, ...]
    prediction: CapacityReport | None
    prediction_error: str | None
    bound_points: tuple[BoundAtP, ...]
    bound_threshold: float | None
    bound_error: str | None
    transition: TransitionEstimate | None
    transition_error: str | None
    seed: int
    config_hash: str
    versions: dict[str, str]

    @property
    def p_star(self) -> float | None:
        return self.prediction.p_star if self.prediction is not None else None


def find_transition(report: SweepReport) -> TransitionEstimate:
    """Locate the empirical phase transition from a sweep's error curve."""
    rows = report.rows
    return _transition_from_arrays(
        np.array([r.p for r in rows]),
        np.array([r.error_rate for r in rows]),
        np.array([r.ci_low for r in rows]),
        np.array([r.ci_high for r in rows]),
        np.array([r.trials for r in rows], dtype=float),
    )


def _sweep_point(cfg: ExperimentConfig, p: float, p_index: int) -> tuple[int, int, int, int]:
    params = None
    if cfg.decoder == "typicality":
        params = TypicalityParams.for_model(cfg.model, p, cfg.epsilon, cfg.est.horizon)
    errors = ties = skipped = used = 0
    for t in range(cfg.trials):
        res = run_trial(cfg, p, t, p_index, typicality_params=params)
        if res.skipped:
            skipped += 1
            continue
        used += 1
        errors += not res.success
        ties += res.tied
    return errors, ties, skipped, used


def _bound_threshold(
    model: SourceModel, dmc: Dmc | None, n: int, cell_cap: float
) -> float | None:
    """Smallest p at which the rate 1/p clears the finite-window upper bound.

    Solves p * bound(p) = 1 by bisection; below the root the bound certifies
    that exact reconstruction is impossible.  Returns None when even p = 1
    fails the check.
    """

    def g(p: float) -> float:
        ub = upper_bound_arbitrary(model, dmc, p, [n], cell_cap)
        return p * ub.best.bound - 1.0

    lo, hi = 1e-6, 1.0
    if g(hi) < 0:
        return None
    if g(lo) >= 0:
        return lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


def run_sweep(cfg: ExperimentConfig, config_hash: str = "", jobs: int | None = None) -> SweepReport:
    """Monte Carlo error rates over the p grid plus every predicted threshold."""
    require_valid(cfg.model)
    jobs = cfg.jobs if jobs is None else jobs
    points: list[tuple[int, int, int, int]] = []
    tasks = [(p, i) for i, p in enumerate(cfg.p_grid)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_sweep_point, [cfg] * len(tasks), *zip(*tasks)))
    else:
        points = [_sweep_point(cfg, p, i) for p, i in tasks]

    prediction = None
    prediction_error = None
    try:
        prediction = predict_capacity(cfg.model, cfg.dmc, cfg.est)
    except LabError as exc:
        prediction_error = str(exc)

    rows = []
    for (p, _), (errors, ties, skipped, used) in zip(tasks, points):
        rate = errors / used if used else 0.0
        lo, hi = wilson_interval(errors, used)
        feasible = None
        if prediction is not None:
            feasible = bool(p >= prediction.p_star - 1e-9)
        rows.append(SweepRow(p, used, errors, rate, lo, hi, feasible, ties, skipped))

    bound_points: list[BoundAtP] = []
    bound_threshold = None
    bound_error = None
    try:
        for p, _ in tasks:
            ub = upper_bound_arbitrary(
                cfg.model, cfg.dmc, p, [cfg.est.n], cfg.caps.enumeration_cells
            )
            bound_points.append(BoundAtP(p, ub.best.n, ub.best.bound))
        bound_threshold = _bound_threshold(
            cfg.model, cfg.dmc, cfg.est.n, cfg.caps.enumeration_cells
        )
    except LabError as exc:
        bound_error = str(exc)

    fit = isotonic_nonincreasing(
        [r.error_rate for r in rows], [float(r.trials) for r in rows]
    )
    transition = None
    transition_error = None
    try:
        transition = _transition_from_arrays(
            np.array([r.p for r in rows]),
            np.array([r.error_rate for r in rows]),
            np.array([r.ci_low for r in rows]),
            np.array([r.ci_high for r in rows]),
            np.array([r.trials for r in rows], dtype=float),
        )
    except LabError as exc:
        transition_error = str(exc)

    return SweepReport(
        rows=tuple(rows),
        isotonic_fit=tuple(float(v) for v in fit),
        prediction=prediction,
        prediction_error=prediction_error,
        bound_points=tuple(bound_points),
        bound_threshold=bound_threshold,
        bound_error=bound_error,
        transition=transition,
        transition_error=transition_error,
        seed=cfg.seed,
        config_hash=config_hash,
        versions={"completion_lab": __version__, "numpy": np.__version__},
    )


def exact_map_error(
    model: SourceModel,
    dmc: Dmc | None,
    p: float,
    n: int,
    outcome_cap: float = WorkCaps.oracle_outcomes,
    chunk: int = 4096,
) -> float:
    """Exact MAP error probability by enumerating every observable outcome.

    lambda = 1 - sum_z max_x P(x, z); the inner maximum is a max-product
    recursion over column states, vectorized over outcome chunks, and the
    outer sum uses compensated summation.
    """
    require_valid(model)
    dmc = dmc or Dmc.identity(model.q)
    if dmc.q_in != model.q:
        raise UsageError(f"channel q_in={dmc.q_in} does not match model alphabet q={model.q}")
    if not (0.0 <= p <= 1.0):
        raise UsageError(f"observation rate p={p} outside [0, 1]")
    k, q, qo, s = model.k, model.q, dmc.q_out, model.num_states
    n_outcomes = float(qo + 1) ** (k * n)
    if n_outcomes > outcome_cap:
        raise WorkCapExceeded("exact error enumeration", n_outcomes, outcome_cap)
    n_outcomes = int(n_outcomes)

    pi, t = as_column_chain(model)
    with np.errstate(divide="ignore"):
        log_pi, log_t = np.log2(pi), np.log2(t)
        log_w = np.log2(dmc.w)
        log_p = np.log2(p) if p > 0 else NEG_INF
        log_e = np.log2(1.0 - p) if p < 1 else NEG_INF
    # lookup[ell][z, s]: per-cell observation log-likelihood for row ell
    lookup = []
    for ell in range(k):
        xs = model.symbol_table[:, ell]
        lk = np.empty((qo + 1, s))
        lk[:qo, :] = log_p + log_w[xs[None, :], np.arange(qo)[:, None]]
        lk[qo, :] = log_e
        lookup.append(lk)

    place = (qo + 1) ** np.arange(k * n - 1, -1, -1, dtype=np.int64)
    best = np.empty(n_outcomes)
    for start in range(0, n_outcomes, chunk):
        idx = np.arange(start, min(start + chunk, n_outcomes), dtype=np.int64)
        digits = (idx[:, None] // place[None, :]) % (qo + 1)
        digits = digits.reshape(-1, k, n)
        g = lookup[0][digits[:, 0, :], :]
        for ell in range(1, k):
            g = g + lookup[ell][digits[:, ell, :], :]
        alpha = log_pi[None, :] + g[:, 0, :]
        for i in range(1, n):
            alpha = (alpha[:, :, None] + log_t[None, :, :]).max(axis=1) + g[:, i, :]
        best[idx] = alpha.max(axis=1)
    return 1.0 - math.fsum(np.exp2(best).tolist())


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def sweep_csv_text(report: SweepReport) -> str:
    lines = [CSV_HEADER]
    for r in report.rows:
        feasible = "" if r.predicted_feasible is None else str(r.predicted_feasible).lower()
        lines.append(
            f"{r.p!r},{r.trials},{r.errors},{r.error_rate!r},{r.ci_low!r},{r.ci_high!r},{feasible}"
        )
    return "\n".join(lines) + "\n"


def sweep_summary_text(report: SweepReport) -> str:
    lines = ["sweep summary", "============="]
    lines.append(f"seed: {report.seed}")
    lines.append(f"config_hash: {report.config_hash}")
    for name, ver in sorted(report.versions.items()):
        lines.append(f"version.{name}: {ver}")
    if report.prediction is not None:
        lines.append(f"predicted_capacity: {report.prediction.capacity!r}")
        lines.append(f"predicted_p_star: {report.prediction.p_star!r}")
        lines.append(f"prediction_method: {report.prediction.method}")
    if report.prediction_error:
        lines.append(f"prediction_error: {report.prediction_error}")
    for bp in report.bound_points:
        lines.append(f"upper_bound[p={bp.p!r}, n={bp.n}]: {bp.bound!r}")
    lines.append(f"upper_bound_p_threshold: {_fmt(report.bound_threshold)}")
    if report.bound_error:
        lines.append(f"upper_bound_error: {report.bound_error}")
    if report.transition is not None:
        tr = report.transition
        lines.append(f"transition_p_hat: {tr.p_hat!r}")
        lines.append(f"transition_band: [{tr.band[0]!r}, {tr.band[1]!r}]")
        lines.append(f"transition_band_clipped: {str(tr.band_clipped).lower()}")
    if report.transition_error:
        lines.append(f"transition_error: {report.transition_error}")
    lines.append("")
    lines.append("p trials errors error_rate isotonic_fit ties skipped")
    for row, fit in zip(report.rows, report.isotonic_fit):
        lines.append(
            f"{row.p!r} {row.trials} {row.errors} {row.error_rate!r} {fit!r} {row.ties} {row.skipped}"
        )
    return "\n".join(lines) + "\n"


_PLOT_TEMPLATE = '''#!/usr/bin/env python3
"""Regenerate the sweep figure from the CSV next to this script."""
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_NAME = {csv_name!r}
P_STAR = {p_star!r}
BOUND_P = {bound_p!r}
OUT_NAME = "sweep.png"

here = Path(__file__).resolve().parent
rows = list(csv.DictReader(open(here / CSV_NAME)))
p = [float(r["p"]) for r in rows]
rate = [float(r["error_rate"]) for r in rows]
lo = [float(r["ci_low"]) for r in rows]
hi = [float(r["ci_high"]) for r in rows]

fig, ax = plt.subplots(figsize=(7, 4.5))
err_lo = [max(0.0, r - a) for r, a in zip(rate, lo)]
err_hi = [max(0.0, b - r) for r, b in zip(rate, hi)]
ax.errorbar(p, rate, yerr=[err_lo, err_hi], fmt="o-", capsize=3, label="empirical error rate")
ax.axhline(0.5, color="gray", lw=0.8, ls=":")
if P_STAR is not None:
    ax.axvline(P_STAR, color="tab:red", ls="--", label=f"predicted p* = {{P_STAR:.6g}}")
if BOUND_P is not None:
    ax.axvline(BOUND_P, color="tab:green", ls="-.", label=f"upper-bound threshold = {{BOUND_P:.6g}}")
ax.set_xlabel("observation rate p")
ax.set_ylabel("reconstruction error rate")
ax.set_ylim(-0.05, 1.05)
ax.legend(loc="best")
fig.tight_layout()
fig.savefig(here / OUT_NAME, dpi=120, metadata={{"Software": "completion-lab"}})
print(here / OUT_NAME)
'''


def emit_report(
    report: SweepReport, out_dir: str | Path, fmt: Literal["csv", "report", "both"] = "both"
) -> dict[str, Path]:
    """Write sweep.csv, summary.txt, and the standalone plot script."""
    if fmt not in ("csv", "report", "both"):
        raise UsageError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    paths: dict[str, Path] = {}

    def _write(name: str, text: str) -> Path:
        path = out / name
        try:
            path.write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {path}: {exc}") from exc
        return path

    if fmt in ("csv", "both"):
        paths["csv"] = _write("sweep.csv", sweep_csv_text(report))
    if fmt in ("report", "both"):
        paths["summary"] = _write("summary.txt", sweep_summary_text(report))
        script = _PLOT_TEMPLATE.format(
            csv_name="sweep.csv",
            p_star=report.p_star,
            bound_p=report.bound_threshold,
        )
        paths["plot_script"] = _write("plot_sweep.py", script)
    return paths


def config_hash_of(payload: dict) -> str:
    """Stable hash of a JSON-able configuration dict."""
    import hashlib

    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
