"""Observation process: per-entry memoryless noise followed by erasure.

The pipeline is fixed as noise first, erasure second.  Each entry of the
sampled matrix passes independently through a discrete memoryless channel
W(y|x), then is observed with probability p (the observation rate) or erased
otherwise.  With the identity channel the pipeline reduces bit-for-bit to the
noiseless erasure model given the same seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import UsageError
from .models import NEG_INF, MatrixSample, ValidationReport, _inverse_cdf

ERASED = -1

ROW_SUM_TOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dmc:
    """Discrete memoryless channel: row-stochastic w[x, y] = W(y|x)."""

    q_in: int
    q_out: int
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _freeze(self.w))

    @classmethod
    def identity(cls, q: int) -> "Dmc":
        return cls(q, q, np.eye(q))

    @classmethod
    def bsc(cls, flip: float) -> "Dmc":
        return cls(2, 2, [[1.0 - flip, flip], [flip, 1.0 - flip]])

    @property
    def is_identity(self) -> bool:
        return self.q_in == self.q_out and bool((self.w == np.eye(self.q_in)).all())


def validate_dmc(dmc: Dmc) -> ValidationReport:
    """Row-stochasticity and shape checks, reported rather than raised."""
    report = ValidationReport()
    v = report.violations
    if dmc.q_in < 1 or dmc.q_out < 1:
        v.append("channel alphabets must be >= 1")
        return report
    if dmc.w.shape != (dmc.q_in, dmc.q_out):
        v.append(f"channel matrix shape {dmc.w.shape} != ({dmc.q_in}, {dmc.q_out})")
        return report
    if (dmc.w < 0).any():
        v.append("channel negative entry")
    bad = np.flatnonzero(np.abs(dmc.w.sum(axis=1) - 1.0) > ROW_SUM_TOL)
    if bad.size:
        v.append(f"channel rows {bad.tolist()} do not sum to 1")
    return report


@dataclass(frozen=True, eq=False)
class ErasureSpec:
    """Observation rate p in [0, 1]; each entry is erased with probability 1-p."""

    p: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise UsageError(f"observation rate p={self.p} outside [0, 1]")


class ObservedRow(NamedTuple):
    symbols: np.ndarray
    observed: np.ndarray


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """k x n grid of observed symbols; erased cells hold ERASED (-1)."""

    symbols: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        s = np.array(self.symbols, dtype=np.int64, copy=True)
        o = np.array(self.observed, dtype=bool, copy=True)
        if s.shape != o.shape or s.ndim != 2:
            raise UsageError("observed-matrix fields must be matching 2-d grids")
        s[~o] = ERASED
        s.setflags(write=False)
        o.setflags(write=False)
        object.__setattr__(self, "symbols", s)
        object.__setattr__(self, "observed", o)

    @property
    def k(self) -> int:
        return self.symbols.shape[0]

    @property
    def n(self) -> int:
        return self.symbols.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.observed.sum())

    def row(self, ell: int) -> ObservedRow:
        return ObservedRow(self.symbols[ell], self.observed[ell])


def apply_dmc(sample: MatrixSample, dmc: Dmc, seed: int) -> MatrixSample:
    """Resample every entry through W(.|x); deterministic given the seed.

    The identity channel returns the input unchanged (the inverse-cdf draw
    lands on the diagonal for any uniform variate).
    """
    if sample.cells.size and int(sample.cells.max()) >= dmc.q_in:
        raise UsageError(
            f"sample symbols exceed channel input alphabet q_in={dmc.q_in}"
        )
    rng = np.random.default_rng(seed)
    u = rng.random(sample.cells.shape)
    cum = np.cumsum(dmc.w, axis=1)
    return MatrixSample(_inverse_cdf(cum[sample.cells], u))


def apply_erasure(sample: MatrixSample, spec: ErasureSpec | float, seed: int) -> ObservedMatrix:
    """Erase each entry independently with probability 1-p."""
    p = spec.p if isinstance(spec, ErasureSpec) else ErasureSpec(float(spec)).p
    rng = np.random.default_rng(seed)
    observed = rng.random(sample.cells.shape) < p
    return ObservedMatrix(sample.cells, observed)


def observe(
    sample: MatrixSample, dmc: Dmc, p: float, noise_seed: int, erasure_seed: int
) -> ObservedMatrix:
    """Full pipeline with independent noise and erasure seed streams."""
    return apply_erasure(apply_dmc(sample, dmc, noise_seed), p, erasure_seed)


def observation_log_likelihood(
    x_row: np.ndarray, z_row: ObservedRow, dmc: Dmc, p: float
) -> float:
    """log2 P(observed row | source row x) under the noise-then-erasure law.

    Erased cells contribute log2(1-p); observed cells log2(p * W(z|x)).
    Returns -inf whenever the observation is impossible.
    """
    x = np.asarray(x_row, dtype=np.int64)
    sym, obs = np.asarray(z_row.symbols), np.asarray(z_row.observed)
    if x.shape != sym.shape:
        raise UsageError("row length mismatch between source and observation")
    with np.errstate(divide="ignore"):
        log_w = np.log2(dmc.w)
        log_p = np.log2(p) if p > 0 else NEG_INF
        log_e = np.log2(1.0 - p) if p < 1 else NEG_INF
    n_erased = int((~obs).sum())
    total = 0.0
    if n_erased:
        total += n_erased * log_e
    if obs.any():
        terms = log_p + log_w[x[obs], sym[obs]]
        total += float(terms.sum())
    return float(total)
