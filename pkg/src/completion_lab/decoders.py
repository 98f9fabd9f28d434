"""Matrix reconstruction from partial, possibly noisy observations.

Three decoders:

* ``map_decode_viterbi``: exact maximum-a-posteriori reconstruction by
  dynamic programming over column states (per-column argmax for i.i.d.
  sources, a max-product recursion for Markov sources), O(n q^2k);
* ``map_decode_exhaustive``: full-enumeration oracle used to cross-validate
  the dynamic program on small instances;
* ``typicality_decode``: the existence-proof decoder, which accepts a
  completion only when every row, every (row, observation) pair, and the full
  tuple have empirical per-symbol log-probabilities within epsilon of their
  reference rates.

Ties are broken deterministically toward the lexicographically smallest
matrix, reading columns left to right and rows top to bottom within a column.
Any tie is surfaced on the outcome, since a tied argmax is a coin that the
deterministic rule silently calls.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .channels import Dmc, ObservedMatrix, observation_log_likelihood
from .errors import UsageError, WorkCapExceeded
from .measures import (
    _chain_string_tensor,
    entropy,
    hidden_marginal_entropy_rate_bounds,
    markov_entropy_rate,
)
from .models import (
    NEG_INF,
    ColumnPmf,
    MatrixSample,
    SourceModel,
    as_column_chain,
    require_valid,
    row_marginal_pmf,
    row_sequence_log_prob,
    sequence_log_prob,
)

DEFAULT_CANDIDATE_CAP = 1 << 20
DEFAULT_TYPICALITY_CAP = 4096


@dataclass(frozen=True, eq=False)
class DecodeOutcome:
    """Result of one reconstruction attempt.

    ``score`` is the log2 joint probability of the estimate together with the
    observation (prior times channel likelihood), present when decoded;
    ``candidates`` counts typical completions for the typicality decoder and
    is 1 for a MAP decode.
    """

    status: Literal["decoded", "ambiguous", "no_candidate"]
    estimate: MatrixSample | None = None
    score: float | None = None
    candidates: int = 0
    tied: bool = False


def posterior_score(
    model: SourceModel, dmc: Dmc, p: float, estimate: MatrixSample, obs: ObservedMatrix
) -> float:
    """log2 P(matrix, observation): the quantity every MAP decoder maximizes."""
    total = sequence_log_prob(model, estimate)
    for ell in range(estimate.k):
        total += observation_log_likelihood(estimate.cells[ell], obs.row(ell), dmc, p)
    return total


def _check_decode_inputs(obs: ObservedMatrix, model: SourceModel, dmc: Dmc, p: float) -> None:
    if obs.k != model.k:
        raise UsageError(f"observation has {obs.k} rows, model expects {model.k}")
    if dmc.q_in != model.q:
        raise UsageError(f"channel q_in={dmc.q_in} does not match model alphabet q={model.q}")
    if not (0.0 <= p <= 1.0):
        raise UsageError(f"observation rate p={p} outside [0, 1]")
    if obs.observed.any() and int(obs.symbols[obs.observed].max()) >= dmc.q_out:
        raise UsageError("observed symbols exceed the channel output alphabet")


def _emission_log_table(obs: ObservedMatrix, model: SourceModel, dmc: Dmc, p: float) -> np.ndarray:
    """(n, S) table of per-column observation log-likelihoods per state."""
    n, s = obs.n, model.num_states
    table = model.symbol_table
    with np.errstate(divide="ignore"):
        log_w = np.log2(dmc.w)
        log_p = np.log2(p) if p > 0 else NEG_INF
        log_e = np.log2(1.0 - p) if p < 1 else NEG_INF
    g = np.zeros((n, s))
    for ell in range(model.k):
        sym, ob = obs.symbols[ell], obs.observed[ell]
        xs = table[:, ell]
        if ob.any():
            g[ob, :] += log_p + log_w[xs[None, :], sym[ob][:, None]]
        if (~ob).any():
            g[~ob, :] += log_e
    return g


def map_decode_viterbi(
    obs: ObservedMatrix, model: SourceModel, dmc: Dmc | None, p: float
) -> DecodeOutcome:
    """Exact MAP reconstruction via dynamic programming over column states.

    Among score-tied optima the lexicographically smallest matrix is chosen
    by a backward pass plus a greedy forward walk, so the result matches the
    exhaustive oracle's tie-break.  Returns no_candidate only when every
    matrix has zero likelihood (observation outside the model support).
    """
    require_valid(model)
    dmc = dmc or Dmc.identity(model.q)
    _check_decode_inputs(obs, model, dmc, p)
    n, s = obs.n, model.num_states
    g = _emission_log_table(obs, model, dmc, p)
    tied = False
    if isinstance(model, ColumnPmf):
        with np.errstate(divide="ignore"):
            head = np.log2(model.probs)
        totals = head[None, :] + g
        best = totals.max(axis=1)
        if not np.isfinite(best.sum()):
            return DecodeOutcome("no_candidate")
        states = totals.argmax(axis=1)
        tied = bool(((totals == best[:, None]).sum(axis=1) > 1).any())
    else:
        pi, t = as_column_chain(model)
        with np.errstate(divide="ignore"):
            log_pi, log_t = np.log2(pi), np.log2(t)
        betas = np.empty((n, s))
        betas[n - 1] = 0.0
        for i in range(n - 2, -1, -1):
            betas[i] = (log_t + (g[i + 1] + betas[i + 1])[None, :]).max(axis=1)
        states = np.empty(n, dtype=np.int64)
        scores = log_pi + g[0] + betas[0]
        if scores.max() == NEG_INF:
            return DecodeOutcome("no_candidate")
        for i in range(n):
            if i > 0:
                scores = log_t[states[i - 1]] + g[i] + betas[i]
            m = scores.max()
            tied = tied or int((scores == m).sum()) > 1
            states[i] = int(scores.argmax())
    estimate = MatrixSample(model.symbol_table[states].T)
    score = posterior_score(model, dmc, p, estimate, obs)
    return DecodeOutcome("decoded", estimate, score, candidates=1, tied=tied)


def _score_tensor(obs: ObservedMatrix, model: SourceModel, dmc: Dmc, p: float) -> np.ndarray:
    """(S,)*n tensor of log2 P(matrix, observation) for every candidate."""
    pi, t = as_column_chain(model)
    n, s = obs.n, model.num_states
    chain_t = _chain_string_tensor(pi, t, n)
    with np.errstate(divide="ignore"):
        total = np.log2(chain_t)
    g = _emission_log_table(obs, model, dmc, p)
    for i in range(n):
        total = total + g[i].reshape((1,) * i + (s,) + (1,) * (n - 1 - i))
    return total


def map_decode_exhaustive(
    obs: ObservedMatrix,
    model: SourceModel,
    dmc: Dmc | None,
    p: float,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
) -> DecodeOutcome:
    """Brute-force MAP oracle over all q^(kn) matrices.

    Candidates are scanned in lexicographic matrix order (columns outer, rows
    inner), so the first argmax is the same tie-break the dynamic program
    applies.
    """
    require_valid(model)
    dmc = dmc or Dmc.identity(model.q)
    _check_decode_inputs(obs, model, dmc, p)
    n, s = obs.n, model.num_states
    if float(s) ** n > candidate_cap:
        raise WorkCapExceeded("exhaustive decode", float(s) ** n, candidate_cap)
    flat = _score_tensor(obs, model, dmc, p).ravel()
    best_idx = int(flat.argmax())
    best = float(flat[best_idx])
    if best == NEG_INF:
        return DecodeOutcome("no_candidate")
    ties = int((flat == best).sum())
    digits = np.empty(n, dtype=np.int64)
    rem = best_idx
    for i in range(n - 1, -1, -1):
        digits[i] = rem % s
        rem //= s
    estimate = MatrixSample(model.symbol_table[digits].T)
    score = posterior_score(model, dmc, p, estimate, obs)
    return DecodeOutcome("decoded", estimate, score, candidates=1, tied=ties > 1)


@dataclass(frozen=True)
class TypicalityParams:
    """Typicality slack plus the reference rates the tests are centered on.

    ``row_rates[l]`` is the per-symbol entropy (rate) of row l and
    ``joint_rate`` that of the whole column process; ``obs_rate`` is the
    erasure observation rate p, which fixes the (row, observation) pair
    reference at row_rate + H_b(1-p).
    """

    epsilon: float
    row_rates: tuple[float, ...]
    joint_rate: float
    obs_rate: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise UsageError("typicality slack epsilon must be >= 0")
        if not (0.0 <= self.obs_rate <= 1.0):
            raise UsageError("observation rate outside [0, 1]")

    @classmethod
    def for_model(
        cls,
        model: SourceModel,
        p: float,
        epsilon: float = 0.1,
        horizon: int = 8,
    ) -> "TypicalityParams":
        require_valid(model)
        if isinstance(model, ColumnPmf):
            rows = tuple(
                entropy(row_marginal_pmf(model, [ell]), validate=False) for ell in range(model.k)
            )
            joint = entropy(model.probs, validate=False)
        else:
            rows = tuple(
                hidden_marginal_entropy_rate_bounds(model, ell, horizon).mid
                for ell in range(model.k)
            )
            joint = markov_entropy_rate(model)
        return cls(epsilon, rows, joint, p)


def _erasure_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p))


def typicality_decode(
    obs: ObservedMatrix,
    model: SourceModel,
    params: TypicalityParams,
    candidate_cap: int = DEFAULT_TYPICALITY_CAP,
) -> DecodeOutcome:
    """Joint-typicality reconstruction over the noiseless erasure pipeline.

    Enumerates every completion of the erased cells and keeps those passing
    all three tests (per row, per row paired with its observation, and the
    full tuple) at slack epsilon.  Decodes only when exactly one candidate
    survives; several survivors are ambiguous, none is no_candidate.  Both of
    the latter count as errors in the harness accounting.
    """
    require_valid(model)
    if obs.k != model.k:
        raise UsageError(f"observation has {obs.k} rows, model expects {model.k}")
    if obs.observed.any() and int(obs.symbols[obs.observed].max()) >= model.q:
        raise UsageError(
            "observed symbols outside the source alphabet: typicality decoding "
            "supports only the noiseless pipeline"
        )
    k, n, q = obs.k, obs.n, model.q
    erased = np.argwhere(~obs.observed)
    n_cand = float(q) ** len(erased)
    if n_cand > candidate_cap:
        raise WorkCapExceeded("typicality candidate enumeration", n_cand, candidate_cap)

    p = params.obs_rate
    eps = params.epsilon
    pair_offset = _erasure_entropy(p)
    log_p = math.log2(p) if p > 0 else NEG_INF
    log_e = math.log2(1.0 - p) if p < 1 else NEG_INF
    obs_counts = obs.observed.sum(axis=1)

    def channel_rate(ell: int) -> float:
        o = int(obs_counts[ell])
        total = 0.0
        if o:
            total += o * log_p
        if n - o:
            total += (n - o) * log_e
        return -total / n

    cells = np.array(obs.symbols, dtype=np.int64)
    cells[~obs.observed] = 0
    survivors: list[np.ndarray] = []
    for assignment in itertools.product(range(q), repeat=len(erased)):
        for (ell, i), v in zip(erased, assignment):
            cells[ell, i] = v
        ok = True
        for ell in range(k):
            lp = row_sequence_log_prob(model, ell, cells[ell])
            emp = -lp / n
            if not abs(emp - params.row_rates[ell]) <= eps:
                ok = False
                break
            pair_emp = emp + channel_rate(ell)
            if not abs(pair_emp - (params.row_rates[ell] + pair_offset)) <= eps:
                ok = False
                break
        if ok:
            joint_emp = -sequence_log_prob(model, MatrixSample(cells)) / n
            ok = abs(joint_emp - params.joint_rate) <= eps
        if ok:
            survivors.append(cells.copy())
    if not survivors:
        return DecodeOutcome("no_candidate")
    if len(survivors) > 1:
        return DecodeOutcome("ambiguous", candidates=len(survivors))
    estimate = MatrixSample(survivors[0])
    score = posterior_score(model, Dmc.identity(q), p, estimate, obs)
    return DecodeOutcome("decoded", estimate, score, candidates=1)
