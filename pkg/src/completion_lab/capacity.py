"""Completion capacity: exact ratios, fixed-point evaluation, and bounds.

Capacity C is the supremum of achievable completion rates R = 1/p; the
observation-rate threshold is p* = 1/C.  For i.i.d. column sources C is an
exact entropy ratio.  For Markov column sources the temporal correction terms
depend on the erasure output and therefore on p itself, so the capacity
equation is solved at its self-consistent fixed point: the p at which
p = 1/C(p), found by damped iteration, with the evaluation point reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import Dmc, validate_dmc
from .errors import (
    CapacityZeroError,
    DegenerateSourceError,
    ModelValidationError,
    NumericalError,
    UsageError,
)
from .measures import (
    DEFAULT_CELL_CAP,
    _subset_rate_bounds,
    entropy,
    exact_finite_n,
    hidden_marginal_entropy_rate_bounds,
    markov_entropy_rate,
    mutual_information,
)
from .models import (
    ColumnPmf,
    MarkovColumnSource,
    SourceModel,
    require_valid,
    row_marginal_pmf,
)

MARGIN_TOL = 1e-9


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs for the finite computations behind asymptotic quantities."""

    n: int = 4  # window for the a/b correction terms
    horizon: int = 8  # sandwich horizon for hidden row rates
    trials: int = 400  # Monte Carlo budget where sampling is used
    seed: int = 0
    cell_cap: float = DEFAULT_CELL_CAP


@dataclass(frozen=True, eq=False)
class CapacityReport:
    """Capacity plus every constituent quantity and estimator diagnostic.

    ``row_terms`` holds per-row entropies (noiseless) or per-row channel
    informations (noisy), per column symbol; ``joint_entropy`` is the joint
    per-column entropy or entropy rate.  For fixed-point results the
    correction fields record the a/b values, the p at which they were
    evaluated, and the last finite-n increment as a truncation proxy.
    """

    capacity: float
    p_star: float
    method: str  # exact | fixed-point
    row_terms: tuple[float, ...]
    joint_entropy: float
    correction_rows: tuple[float, ...] | None = None
    correction_eval_p: float | None = None
    correction_n: int | None = None
    correction_increment: float | None = None
    row_bounds: tuple[tuple[float, float], ...] | None = None
    capacity_interval: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_text(self) -> str:
        lines = [
            f"capacity: {self.capacity!r}",
            f"p_star: {self.p_star!r}",
            f"method: {self.method}",
            f"joint_entropy: {self.joint_entropy!r}",
        ]
        for ell, v in enumerate(self.row_terms):
            lines.append(f"row_term[{ell}]: {v!r}")
        if self.row_bounds is not None:
            for ell, (lo, hi) in enumerate(self.row_bounds):
                lines.append(f"row_rate_bounds[{ell}]: [{lo!r}, {hi!r}]")
        if self.correction_rows is not None:
            for ell, v in enumerate(self.correction_rows):
                lines.append(f"correction[{ell}]: {v!r}")
            lines.append(f"correction_eval_p: {self.correction_eval_p!r}")
            lines.append(f"correction_n: {self.correction_n}")
            lines.append(f"correction_increment: {self.correction_increment!r}")
        if self.capacity_interval is not None:
            lines.append(
                f"capacity_interval: [{self.capacity_interval[0]!r}, {self.capacity_interval[1]!r}]"
            )
        for key in sorted(self.diagnostics):
            lines.append(f"diag.{key}: {self.diagnostics[key]}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"

    def to_csv_rows(self) -> list[tuple[str, str, float]]:
        rows = [("capacity", "", self.capacity), ("p_star", "", self.p_star)]
        rows.append(("joint_entropy", "", self.joint_entropy))
        for ell, v in enumerate(self.row_terms):
            rows.append(("row_term", str(ell), v))
        if self.correction_rows is not None:
            for ell, v in enumerate(self.correction_rows):
                rows.append(("correction", str(ell), v))
        return rows


@dataclass(frozen=True)
class SubsetMargin:
    rows: tuple[int, ...]
    margin: float


@dataclass(frozen=True, eq=False)
class RegionCheck:
    """Per-subset achievability margins at a fixed observation rate.

    margin(S) = sum_{l in S} info_rate_l - H(X_S | X_{S^c}); the rate p is
    feasible when every one of the 2^k - 1 margins clears -1e-9.
    """

    p: float
    margins: tuple[SubsetMargin, ...]

    @property
    def feasible(self) -> bool:
        return all(m.margin >= -MARGIN_TOL for m in self.margins)

    @property
    def binding_subset(self) -> tuple[int, ...]:
        worst = min(self.margins, key=lambda m: m.margin)
        return worst.rows

    def to_text(self) -> str:
        lines = [f"p: {self.p!r}", f"feasible: {str(self.feasible).lower()}"]
        for m in self.margins:
            lines.append(f"margin{list(m.rows)}: {m.margin!r}")
        return "\n".join(lines) + "\n"

    def to_csv_rows(self) -> list[tuple[str, str, float]]:
        rows = [("p", "", self.p), ("feasible", "", float(self.feasible))]
        for m in self.margins:
            rows.append(("margin", "+".join(str(r) for r in m.rows), m.margin))
        return rows


def _require_pmf(model: SourceModel) -> ColumnPmf:
    if not isinstance(model, ColumnPmf):
        raise UsageError("this capacity formula applies to i.i.d. column sources")
    require_valid(model)
    return model


def _require_markov(model: SourceModel) -> MarkovColumnSource:
    if not isinstance(model, MarkovColumnSource):
        raise UsageError("this capacity formula applies to Markov column sources")
    require_valid(model)
    return model


def _require_dmc(dmc: Dmc, q: int) -> None:
    rep = validate_dmc(dmc)
    if not rep.ok:
        raise ModelValidationError("invalid channel: " + "; ".join(rep.violations), rep.violations)
    if dmc.q_in != q:
        raise UsageError(f"channel q_in={dmc.q_in} does not match model alphabet q={q}")


def _single_letter_informations(pmf: ColumnPmf, dmc: Dmc) -> list[float]:
    out = []
    for ell in range(pmf.k):
        marg = row_marginal_pmf(pmf, [ell])
        joint = (marg[:, None] * dmc.w).ravel()
        out.append(mutual_information(joint, (pmf.q, dmc.q_out), validate=False))
    return out


def capacity_iid(pmf: ColumnPmf) -> CapacityReport:
    """Exact capacity of an i.i.d. column source: sum of row entropies over
    the joint column entropy."""
    pmf = _require_pmf(pmf)
    h_rows = [entropy(row_marginal_pmf(pmf, [ell]), validate=False) for ell in range(pmf.k)]
    h_joint = entropy(pmf.probs, validate=False)
    if h_joint <= 0.0:
        raise DegenerateSourceError(
            "degenerate source: capacity unbounded (zero joint entropy, every entry known a priori)"
        )
    c = float(sum(h_rows)) / h_joint
    return CapacityReport(
        capacity=c,
        p_star=1.0 / c,
        method="exact",
        row_terms=tuple(h_rows),
        joint_entropy=h_joint,
    )


def capacity_iid_noisy(pmf: ColumnPmf, dmc: Dmc) -> CapacityReport:
    """Noisy-observation capacity of an i.i.d. source: per-row single-letter
    channel informations over the joint column entropy."""
    pmf = _require_pmf(pmf)
    _require_dmc(dmc, pmf.q)
    h_joint = entropy(pmf.probs, validate=False)
    if h_joint <= 0.0:
        raise DegenerateSourceError(
            "degenerate source: capacity unbounded (zero joint entropy, every entry known a priori)"
        )
    i_rows = _single_letter_informations(pmf, dmc)
    total = float(sum(i_rows))
    if total <= 1e-12:
        raise CapacityZeroError(
            "capacity zero: reconstruction impossible at any rate (channel carries no information)"
        )
    c = total / h_joint
    notes = () if c >= 1.0 else ("capacity below 1: p_star exceeds 1, no observation rate suffices",)
    return CapacityReport(
        capacity=c,
        p_star=1.0 / c,
        method="exact",
        row_terms=tuple(i_rows),
        joint_entropy=h_joint,
        notes=notes,
    )


def _damped_fixed_point(f, p0: float, tol: float = 1e-9, max_iter: int = 500):
    """Solve p = f(p) on (0, 1] by p <- (p + f(p)) / 2; returns (p, trace)."""
    p = min(max(p0, 1e-9), 1.0)
    trace = [p]
    for _ in range(max_iter):
        nxt = 0.5 * p + 0.5 * min(max(f(p), 1e-12), 1.0)
        trace.append(nxt)
        if abs(nxt - p) < tol:
            return nxt, trace
        p = nxt
    raise NumericalError(
        "capacity fixed point did not converge in "
        f"{max_iter} iterations; last iterates {['%.12g' % t for t in trace[-5:]]}"
    )


def _fixed_point_capacity(
    numerator_rows: Sequence[float],
    h_joint_rate: float,
    correction_at,
    est: EstimatorConfig,
) -> tuple[float, np.ndarray, float, list[float]]:
    """Shared fixed-point driver: returns (p_fix, corrections, capacity, trace)."""
    num_sum = float(sum(numerator_rows))

    def implied_p(p: float) -> float:
        corr = float(correction_at(p).sum())
        den = num_sum - corr
        if den <= 0.0:
            raise DegenerateSourceError(
                "degenerate source: correction terms exhaust the per-row information"
            )
        return (h_joint_rate - corr) / den

    p0 = h_joint_rate / num_sum if num_sum > 0 else 1.0
    p_fix, trace = _damped_fixed_point(implied_p, p0)
    corr = correction_at(p_fix)
    corr_sum = float(corr.sum())
    denom = h_joint_rate - corr_sum
    if denom <= 0.0:
        raise DegenerateSourceError(
            "degenerate source: zero effective joint entropy rate at the fixed point"
        )
    c = (num_sum - corr_sum) / denom
    return p_fix, corr, c, trace


def capacity_ergodic(model: MarkovColumnSource, est: EstimatorConfig = EstimatorConfig()) -> CapacityReport:
    """Capacity of a stationary Markov column source.

    The joint entropy rate is exact; hidden per-row rates use the sandwich
    midpoint with the interval propagated into the report; the temporal
    correction a is evaluated at the self-consistent fixed point of the
    capacity equation, at the configured finite window n.
    """
    model = _require_markov(model)
    h_joint = markov_entropy_rate(model)
    if h_joint <= 0.0:
        raise DegenerateSourceError(
            "degenerate source: capacity unbounded (zero joint entropy rate)"
        )
    bounds = [
        hidden_marginal_entropy_rate_bounds(model, ell, est.horizon, est.cell_cap)
        for ell in range(model.k)
    ]
    mids = [b.mid for b in bounds]

    cache: dict[float, np.ndarray] = {}

    def a_at(p: float) -> np.ndarray:
        if p not in cache:
            cache[p] = exact_finite_n(model, None, p, est.n, est.cell_cap).a_row
        return cache[p]

    p_fix, corr, c, trace = _fixed_point_capacity(mids, h_joint, a_at, est)
    denom = h_joint - float(corr.sum())
    lo = (float(sum(b.lower for b in bounds)) - float(corr.sum())) / denom
    hi = (float(sum(b.upper for b in bounds)) - float(corr.sum())) / denom
    increment = None
    if est.n >= 2:
        prev = exact_finite_n(model, None, p_fix, est.n - 1, est.cell_cap).a_row
        increment = abs(float(corr.sum()) - float(prev.sum()))
    return CapacityReport(
        capacity=c,
        p_star=1.0 / c,
        method="fixed-point",
        row_terms=tuple(mids),
        joint_entropy=h_joint,
        correction_rows=tuple(float(v) for v in corr),
        correction_eval_p=p_fix,
        correction_n=est.n,
        correction_increment=increment,
        row_bounds=tuple((b.lower, b.upper) for b in bounds),
        capacity_interval=(min(lo, hi), max(lo, hi)),
        diagnostics={
            "iterations": len(trace) - 1,
            "fixed_point_residual": abs(trace[-1] - trace[-2]) if len(trace) > 1 else 0.0,
        },
    )


def capacity_ergodic_noisy(
    model: MarkovColumnSource, dmc: Dmc, est: EstimatorConfig = EstimatorConfig()
) -> CapacityReport:
    """Noisy-observation capacity of a Markov column source.

    Per-row information rates toward the pre-erasure channel output are
    estimated as (1/n) I(X_l^n; Y_l^n) at the configured window; the b
    correction enters the same fixed-point loop.  The identity channel is
    delegated to the noiseless formula, which it reduces to exactly.
    """
    model = _require_markov(model)
    _require_dmc(dmc, model.q)
    if dmc.is_identity:
        return capacity_ergodic(model, est)
    h_joint = markov_entropy_rate(model)
    if h_joint <= 0.0:
        raise DegenerateSourceError(
            "degenerate source: capacity unbounded (zero joint entropy rate)"
        )
    cache: dict[float, np.ndarray] = {}

    def table_at(p: float):
        if p not in cache:
            t = exact_finite_n(model, dmc, p, est.n, est.cell_cap)
            cache[p] = np.stack([t.i_xy_row / est.n, t.b_row])
        return cache[p]

    i_rates = table_at(1.0)[0]
    if float(i_rates.sum()) <= 1e-12:
        raise CapacityZeroError(
            "capacity zero: reconstruction impossible at any rate (channel carries no information)"
        )

    def b_at(p: float) -> np.ndarray:
        return table_at(p)[1]

    p_fix, corr, c, trace = _fixed_point_capacity(i_rates, h_joint, b_at, est)
    increment = None
    if est.n >= 2:
        prev = exact_finite_n(model, dmc, p_fix, est.n - 1, est.cell_cap).b_row
        increment = abs(float(corr.sum()) - float(prev.sum()))
    notes = () if c >= 1.0 else ("capacity below 1: p_star exceeds 1, no observation rate suffices",)
    return CapacityReport(
        capacity=c,
        p_star=1.0 / c,
        method="fixed-point",
        row_terms=tuple(float(v) for v in i_rates),
        joint_entropy=h_joint,
        correction_rows=tuple(float(v) for v in corr),
        correction_eval_p=p_fix,
        correction_n=est.n,
        correction_increment=increment,
        diagnostics={
            "iterations": len(trace) - 1,
            "fixed_point_residual": abs(trace[-1] - trace[-2]) if len(trace) > 1 else 0.0,
        },
        notes=notes,
    )


@dataclass(frozen=True)
class BoundPoint:
    n: int
    bound: float


@dataclass(frozen=True, eq=False)
class UpperBoundReport:
    """Finite-n upper bounds on capacity for an arbitrary stochastic source.

    Each point evaluates, at the given observation rate, the exact ratio
    [sum_l I(X_l^n;Y_l^n) - n sum_l b_l(n)] over
    [H(X^n joint) - (n sum_l b_l(n) - sum_l c_l(n))].  The limsup over n is
    left to the caller; the largest computed n is highlighted.  The bound
    value is invariant under row reordering because sum_l c_l(n) telescopes
    to sum_l H(Z_l^n) - H(Z all), regardless of order.
    """

    p: float
    points: tuple[BoundPoint, ...]

    @property
    def best(self) -> BoundPoint:
        return max(self.points, key=lambda pt: pt.n)


def upper_bound_arbitrary(
    model: SourceModel,
    dmc: Dmc | None,
    p: float,
    n_list: Sequence[int],
    cell_cap: float = DEFAULT_CELL_CAP,
) -> UpperBoundReport:
    """Evaluate the general finite-n capacity upper bound at each window n."""
    require_valid(model)
    if not n_list:
        raise UsageError("n_list must be nonempty")
    points = []
    for n in sorted(set(int(n) for n in n_list)):
        t = exact_finite_n(model, dmc, p, n, cell_cap)
        b_total = n * float(t.b_row.sum())
        num = float(t.i_xy_row.sum()) - b_total
        den = t.h_joint - (b_total - float(t.c_row.sum()))
        if den <= 0.0:
            raise DegenerateSourceError(
                "degenerate source: zero joint entropy in the upper-bound denominator"
            )
        points.append(BoundPoint(n, num / den))
    return UpperBoundReport(p=p, points=tuple(points))


def _subset_conditional_entropy_iid(pmf: ColumnPmf, rows: tuple[int, ...], h_joint: float) -> float:
    comp = tuple(ell for ell in range(pmf.k) if ell not in rows)
    if not comp:
        return h_joint
    return h_joint - entropy(row_marginal_pmf(pmf, comp), validate=False)


def achievability_check(
    model: SourceModel,
    dmc: Dmc | None,
    p: float,
    est: EstimatorConfig = EstimatorConfig(),
) -> RegionCheck:
    """All 2^k - 1 subset margins of the achievability region at rate p.

    I.i.d. sources use exact entropies and single-letter informations
    (information through the erased output is exactly p times the pre-erasure
    value); Markov sources use finite-n information rates through the full
    pipeline and sandwich midpoints for the subset conditional rates.
    """
    require_valid(model)
    if not (0.0 <= p <= 1.0):
        raise UsageError(f"observation rate p={p} outside [0, 1]")
    if dmc is not None:
        _require_dmc(dmc, model.q)
    k = model.k
    subsets = [
        tuple(s)
        for size in range(1, k + 1)
        for s in itertools.combinations(range(k), size)
    ]
    margins = []
    if isinstance(model, ColumnPmf):
        h_joint = entropy(model.probs, validate=False)
        if dmc is None or dmc.is_identity:
            per_row = [
                p * entropy(row_marginal_pmf(model, [ell]), validate=False) for ell in range(k)
            ]
        else:
            per_row = [p * i for i in _single_letter_informations(model, dmc)]
        for rows in subsets:
            need = _subset_conditional_entropy_iid(model, rows, h_joint)
            margins.append(SubsetMargin(rows, float(sum(per_row[ell] for ell in rows)) - need))
    else:
        h_joint = markov_entropy_rate(model)
        table = exact_finite_n(model, dmc, p, est.n, est.cell_cap)
        per_row = list(table.i_xz_row / est.n)
        for rows in subsets:
            comp = tuple(ell for ell in range(k) if ell not in rows)
            if comp:
                need = h_joint - _subset_rate_bounds(model, comp, est.horizon, est.cell_cap).mid
            else:
                need = h_joint
            margins.append(SubsetMargin(rows, float(sum(per_row[ell] for ell in rows)) - need))
    return RegionCheck(p=p, margins=tuple(margins))


def predict_capacity(
    model: SourceModel, dmc: Dmc | None, est: EstimatorConfig = EstimatorConfig()
) -> CapacityReport:
    """Dispatch to the right capacity formula for a (model, channel) pair."""
    noiseless = dmc is None or dmc.is_identity
    if isinstance(model, ColumnPmf):
        return capacity_iid(model) if noiseless else capacity_iid_noisy(model, dmc)
    if noiseless:
        return capacity_ergodic(model, est)
    return capacity_ergodic_noisy(model, dmc, est)
