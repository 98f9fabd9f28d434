"""Stochastic matrix sources: i.i.d. and stationary Markov column processes.

A source emits a k x n matrix with entries in {0, ..., q-1}; randomness acts
column by column.  A column vector (x_0, ..., x_{k-1}) is encoded as a single
state index with row 0 most significant:

    state = sum_j x_j * q**(k-1-j)

That one layout is shared by pmfs, transition matrices, and every exact
enumeration in the package.  Rows are 0-indexed throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ModelValidationError, NumericalError, UsageError

NEG_INF = float("-inf")

PMF_SUM_TOL = 1e-9
ROW_SUM_TOL = 1e-9
STATIONARY_TOL = 1e-10


def state_symbol_table(k: int, q: int) -> np.ndarray:
    """(q**k, k) array mapping each column-state index to its symbols."""
    states = np.arange(q**k)
    return np.stack([(states // q ** (k - 1 - j)) % q for j in range(k)], axis=1)


def column_index(symbols: Sequence[int], q: int) -> int:
    """Encode one column vector as its state index (row 0 most significant)."""
    idx = 0
    for s in symbols:
        idx = idx * q + int(s)
    return idx


def column_symbols(state: int, k: int, q: int) -> tuple[int, ...]:
    """Decode a state index back into the k column symbols."""
    out = []
    for j in range(k):
        out.append((state // q ** (k - 1 - j)) % q)
    return tuple(out)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ColumnPmf:
    """I.i.d. column source: an arbitrary joint pmf over the q**k column vectors."""

    k: int
    q: int
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _freeze(np.ravel(self.probs)))

    @property
    def num_states(self) -> int:
        return self.q**self.k

    @property
    def symbol_table(self) -> np.ndarray:
        return state_symbol_table(self.k, self.q)

    @classmethod
    def uniform(cls, k: int, q: int) -> "ColumnPmf":
        s = q**k
        return cls(k, q, np.full(s, 1.0 / s))

    @classmethod
    def identical_rows(cls, k: int, q: int, marginal: Sequence[float]) -> "ColumnPmf":
        """All rows equal almost surely; the shared symbol follows ``marginal``."""
        probs = np.zeros(q**k)
        for x, w in enumerate(marginal):
            probs[column_index([x] * k, q)] = w
        return cls(k, q, probs)

    @classmethod
    def product(cls, marginals: Sequence[Sequence[float]]) -> "ColumnPmf":
        """Independent rows with the given per-row marginals."""
        k = len(marginals)
        q = len(marginals[0])
        probs = np.array([1.0])
        for m in marginals:
            probs = np.kron(probs, np.asarray(m, dtype=float))
        return cls(k, q, probs)


@dataclass(frozen=True, eq=False)
class MarkovColumnSource:
    """Stationary Markov chain over column-vector states.

    ``transition[s, t]`` is the probability of moving from column state s to t;
    ``stationary`` is the chain's stationary distribution, so sampling started
    from it is exactly stationary at every finite length.
    """

    k: int
    q: int
    transition: np.ndarray
    stationary: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "transition", _freeze(self.transition))
        object.__setattr__(self, "stationary", _freeze(np.ravel(self.stationary)))

    @property
    def num_states(self) -> int:
        return self.q**self.k

    @property
    def symbol_table(self) -> np.ndarray:
        return state_symbol_table(self.k, self.q)

    @classmethod
    def from_transition(cls, k: int, q: int, transition: np.ndarray) -> "MarkovColumnSource":
        t = np.asarray(transition, dtype=float)
        pi = stationary_distribution(t)
        return cls(k, q, t, pi)


SourceModel = Union[ColumnPmf, MarkovColumnSource]


@dataclass(frozen=True, eq=False)
class MatrixSample:
    """One realized k x n matrix of symbols."""

    cells: np.ndarray

    def __post_init__(self):
        c = np.array(self.cells, dtype=np.int64, copy=True)
        if c.ndim != 2:
            raise UsageError("matrix sample must be 2-dimensional")
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)

    @property
    def k(self) -> int:
        return self.cells.shape[0]

    @property
    def n(self) -> int:
        return self.cells.shape[1]

    def column_states(self, q: int) -> np.ndarray:
        """Encode each column as a state index."""
        weights = q ** np.arange(self.k - 1, -1, -1, dtype=np.int64)
        return weights @ self.cells


@dataclass
class ValidationReport:
    """All invariant violations found in a model (empty means valid)."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _recurrent_classes(adj: np.ndarray) -> list[np.ndarray]:
    """Recurrent (closed) communicating classes of a transition digraph."""
    s = adj.shape[0]
    reach = adj | np.eye(s, dtype=bool)
    for _ in range(int(math.ceil(math.log2(max(s, 2))))):
        reach = reach @ reach
    mutual = reach & reach.T
    classes = []
    seen = np.zeros(s, dtype=bool)
    for i in range(s):
        if seen[i]:
            continue
        members = np.flatnonzero(mutual[i])
        seen[members] = True
        # closed iff nothing reachable leaves the class
        outside = np.flatnonzero(~mutual[i])
        if not reach[np.ix_(members, outside)].any():
            classes.append(members)
    return classes


def _class_period(adj: np.ndarray, members: np.ndarray) -> int:
    """gcd of cycle lengths within one communicating class (BFS level trick)."""
    index = {int(m): i for i, m in enumerate(members)}
    level = {int(members[0]): 0}
    queue = [int(members[0])]
    g = 0
    while queue:
        u = queue.pop()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v not in index:
                continue
            if v in level:
                g = math.gcd(g, level[u] + 1 - level[v])
            else:
                level[v] = level[u] + 1
                queue.append(v)
    return abs(g) if g else 0


def validate_model(model: SourceModel) -> ValidationReport:
    """Check every structural invariant; returns findings instead of raising.

    For Markov sources the chain must have a single aperiodic recurrent class.
    Transient states are accepted: sampling starts from the stationary
    distribution, which puts no mass on them, so the emitted process is still
    stationary and ergodic.
    """
    report = ValidationReport()
    v = report.violations
    if model.k < 1:
        v.append(f"row count k={model.k} must be >= 1")
    if model.q < 1:
        v.append(f"alphabet size q={model.q} must be >= 1")
    if model.k < 1 or model.q < 1:
        return report
    s = model.num_states

    if isinstance(model, ColumnPmf):
        p = model.probs
        if p.shape != (s,):
            v.append(f"pmf length {p.shape[0]} != q^k = {s}")
            return report
        if (p < 0).any():
            v.append("pmf negative entry")
        if abs(float(p.sum()) - 1.0) > PMF_SUM_TOL:
            v.append(f"pmf sum {float(p.sum()):.12g} differs from 1 by more than {PMF_SUM_TOL:g}")
        return report

    t = model.transition
    if t.shape != (s, s):
        v.append(f"transition shape {t.shape} != ({s}, {s})")
        return report
    if (t < 0).any():
        v.append("transition negative entry")
    bad_rows = np.flatnonzero(np.abs(t.sum(axis=1) - 1.0) > ROW_SUM_TOL)
    if bad_rows.size:
        v.append(f"transition rows {bad_rows.tolist()} do not sum to 1")
    adj = t > 0
    classes = _recurrent_classes(adj)
    if len(classes) != 1:
        v.append(f"not irreducible: {len(classes)} recurrent classes")
    else:
        period = _class_period(adj, classes[0])
        if period != 1:
            v.append(f"not aperiodic: recurrent class has period {period}")
    pi = model.stationary
    if pi.shape != (s,):
        v.append(f"stationary length {pi.shape[0]} != q^k = {s}")
    else:
        if (pi < -STATIONARY_TOL).any():
            v.append("stationary negative entry")
        if abs(float(pi.sum()) - 1.0) > PMF_SUM_TOL:
            v.append("stationary does not sum to 1")
        resid = float(np.abs(pi @ t - pi).sum())
        if resid > STATIONARY_TOL:
            v.append(f"stationary fixed-point residual {resid:.3g} exceeds {STATIONARY_TOL:g}")
    return report


def require_valid(model: SourceModel) -> None:
    """Raise ModelValidationError if the model has any invariant violation."""
    report = validate_model(model)
    if not report.ok:
        raise ModelValidationError(
            "invalid source model: " + "; ".join(report.violations), report.violations
        )


def stationary_distribution(
    transition: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Stationary pmf of a row-stochastic matrix by power iteration.

    Requires a single aperiodic recurrent class; converges to the unique pi
    with pi T = pi.  Raises NumericalError with the residual on failure.
    """
    t = np.asarray(transition, dtype=float)
    s = t.shape[0]
    pi = np.full(s, 1.0 / s)
    for _ in range(max_iter):
        nxt = pi @ t
        if float(np.abs(nxt - pi).sum()) < tol:
            nxt = np.maximum(nxt, 0.0)
            return nxt / nxt.sum()
        pi = nxt
    resid = float(np.abs(pi @ t - pi).sum())
    raise NumericalError(f"stationary distribution failed: residual {resid:.3g} after {max_iter} iterations")


def as_column_chain(model: SourceModel) -> tuple[np.ndarray, np.ndarray]:
    """View any source as (initial pmf, transition) over column states.

    An i.i.d. source becomes the equivalent chain whose rows all equal the
    column pmf; a Markov source returns (stationary, transition).
    """
    if isinstance(model, ColumnPmf):
        return model.probs, np.tile(model.probs, (model.num_states, 1))
    return model.stationary, model.transition


def _inverse_cdf(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cum <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, cum.shape[-1] - 1)


def _sample_state_paths(model: SourceModel, n: int, trials: int, seed: int) -> np.ndarray:
    """(trials, n) array of column-state paths; stationary for Markov sources."""
    rng = np.random.default_rng(seed)
    u = rng.random((trials, n))
    if isinstance(model, ColumnPmf):
        return _inverse_cdf(np.cumsum(model.probs), u)
    cum_pi = np.cumsum(model.stationary)
    cum_t = np.cumsum(model.transition, axis=1)
    paths = np.empty((trials, n), dtype=np.int64)
    paths[:, 0] = _inverse_cdf(cum_pi, u[:, 0])
    for i in range(1, n):
        rows = cum_t[paths[:, i - 1]]
        paths[:, i] = _inverse_cdf(rows, u[:, i])
    return paths


def sample_matrix(model: SourceModel, n: int, seed: int) -> MatrixSample:
    """Draw one k x n matrix; bit-identical for identical (model, n, seed)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    path = _sample_state_paths(model, n, 1, seed)[0]
    return MatrixSample(model.symbol_table[path].T)


def row_marginal_pmf(pmf: ColumnPmf | np.ndarray, rows: Sequence[int], k: int | None = None, q: int | None = None) -> np.ndarray:
    """Exact marginal pmf of a subset of rows (0-indexed, any order-free subset).

    Accepts either a ColumnPmf or a raw length-q**k vector plus explicit k, q.
    The result is indexed over q**len(rows) tuples, subset rows in ascending
    order, first listed row most significant.
    """
    if isinstance(pmf, ColumnPmf):
        probs, k, q = pmf.probs, pmf.k, pmf.q
    else:
        if k is None or q is None:
            raise UsageError("raw pmf vectors need explicit k and q")
        probs = np.asarray(pmf, dtype=float)
    rows = sorted(set(int(r) for r in rows))
    if not rows:
        raise UsageError("row subset must be nonempty")
    if rows[0] < 0 or rows[-1] >= k:
        raise UsageError(f"row subset {rows} out of range for k={k}")
    cube = probs.reshape((q,) * k)
    drop = tuple(j for j in range(k) if j not in rows)
    return cube.sum(axis=drop).ravel() if drop else cube.ravel()


def _emission_indicator(model: SourceModel, row: int) -> np.ndarray:
    """(q, S) boolean table: symbol x versus column states whose row emits x."""
    emit = model.symbol_table[:, row]
    return np.arange(model.q)[:, None] == emit[None, :]


def _batched_row_log_prob(model: SourceModel, row: int, xs: np.ndarray) -> np.ndarray:
    """log2 probability of each row-``row`` symbol sequence in ``xs`` (b, n).

    Markov sources need the scaled forward recursion over hidden column
    states; i.i.d. sources reduce to a marginal lookup.
    """
    xs = np.asarray(xs, dtype=np.int64)
    b, n = xs.shape
    if isinstance(model, ColumnPmf):
        marg = row_marginal_pmf(model, [row])
        with np.errstate(divide="ignore"):
            logs = np.log2(marg)
        return logs[xs].sum(axis=1)
    ind = _emission_indicator(model, row)
    t = model.transition
    alpha = model.stationary[None, :] * ind[xs[:, 0]]
    total = np.zeros(b)
    for i in range(n):
        if i > 0:
            alpha = (alpha @ t) * ind[xs[:, i]]
        c = alpha.sum(axis=1)
        dead = c <= 0.0
        total[dead] = NEG_INF
        c_safe = np.where(dead, 1.0, c)
        alpha = alpha / c_safe[:, None]
        total = np.where(dead, NEG_INF, total + np.log2(c_safe))
    return total


def row_sequence_log_prob(model: SourceModel, row: int, x: Sequence[int]) -> float:
    """log2 P(row ``row`` of the matrix equals ``x``); -inf off the support."""
    x = np.asarray(x, dtype=np.int64)
    if row < 0 or row >= model.k:
        raise UsageError(f"row {row} out of range for k={model.k}")
    if x.size and (x.min() < 0 or x.max() >= model.q):
        raise UsageError("symbols out of alphabet range")
    return float(_batched_row_log_prob(model, row, x[None, :])[0])


def _batched_matrix_log_prob(model: SourceModel, paths: np.ndarray) -> np.ndarray:
    """log2 probability of whole matrices given their column-state paths (b, n)."""
    with np.errstate(divide="ignore"):
        if isinstance(model, ColumnPmf):
            logs = np.log2(model.probs)
            return logs[paths].sum(axis=1)
        log_pi = np.log2(model.stationary)
        log_t = np.log2(model.transition)
    return log_pi[paths[:, 0]] + log_t[paths[:, :-1], paths[:, 1:]].sum(axis=1)


def sequence_log_prob(model: SourceModel, sample: MatrixSample) -> float:
    """Exact log2 probability of the full k x n matrix (no hidden-state sum)."""
    if sample.k != model.k:
        raise UsageError(f"sample has {sample.k} rows, model expects {model.k}")
    if sample.cells.size and (sample.cells.min() < 0 or sample.cells.max() >= model.q):
        raise UsageError("symbols out of alphabet range")
    path = sample.column_states(model.q)
    return float(_batched_matrix_log_prob(model, path[None, :])[0])
