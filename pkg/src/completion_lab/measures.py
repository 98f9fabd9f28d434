"""Exact and estimated information quantities, all in bits (log base 2).

Three layers live here:

* single-table measures (entropy, mutual information) and the closed-form
  Markov entropy rate;
* sandwich bounds for the entropy rate of one matrix row, which is a
  deterministic function of the hidden column chain and has no closed form;
* an exact finite-n enumeration oracle that computes, by full summation over
  source matrices, noise outcomes, and erasure patterns, the per-row sequence
  entropies and mutual informations together with the temporal correction
  terms a_l(n), b_l(n) and the cross-row term c_l(n).

The enumeration treats the erasure mark as one extra output symbol, so every
mutual information is a finite exact sum.  Work caps are explicit: oversized
requests are refused with an estimate, never silently truncated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import Dmc, validate_dmc
from .errors import ModelValidationError, UsageError, WorkCapExceeded
from .models import (
    ColumnPmf,
    MarkovColumnSource,
    SourceModel,
    _batched_matrix_log_prob,
    _batched_row_log_prob,
    _sample_state_paths,
    as_column_chain,
    require_valid,
)

DEFAULT_CELL_CAP = 20_000_000

PMF_SUM_TOL = 1e-9


def _xlogx_sum(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    pos = a > 0
    return float((a[pos] * np.log2(a[pos])).sum())


def _entropy_bits(a: np.ndarray) -> float:
    return -_xlogx_sum(a)


def _nonneg(x: float) -> float:
    # absorb roundoff only; a genuinely negative value is a bug worth seeing
    return max(x, 0.0) if x > -1e-9 else x


def entropy(probs: Sequence[float] | np.ndarray, validate: bool = True) -> float:
    """Shannon entropy -sum p log2 p with the 0 log 0 = 0 convention."""
    a = np.ravel(np.asarray(probs, dtype=float))
    if validate:
        if (a < 0).any():
            raise UsageError("distribution has a negative entry")
        if abs(float(a.sum()) - 1.0) > PMF_SUM_TOL:
            raise UsageError(f"distribution sums to {float(a.sum()):.12g}, not 1")
    return _entropy_bits(a)


def mutual_information(
    joint: Sequence[float] | np.ndarray, split: tuple[int, int], validate: bool = True
) -> float:
    """I(A;B) from a joint pmf over pairs, flattened with A most significant."""
    sa, sb = split
    a = np.ravel(np.asarray(joint, dtype=float))
    if a.size != sa * sb:
        raise UsageError(f"joint support {a.size} inconsistent with split {split}")
    if validate:
        if (a < 0).any():
            raise UsageError("distribution has a negative entry")
        if abs(float(a.sum()) - 1.0) > PMF_SUM_TOL:
            raise UsageError(f"distribution sums to {float(a.sum()):.12g}, not 1")
    table = a.reshape(sa, sb)
    return _entropy_bits(table.sum(1)) + _entropy_bits(table.sum(0)) - _entropy_bits(table)


def _chain_rate(pi: np.ndarray, t: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(t > 0, np.log2(np.where(t > 0, t, 1.0)), 0.0)
    row_h = -(t * logs).sum(axis=1)
    return float(pi @ row_h)


def markov_entropy_rate(model: MarkovColumnSource) -> float:
    """Exact entropy rate of the column chain: sum_s pi(s) H(T(.|s))."""
    require_valid(model)
    return _chain_rate(model.stationary, model.transition)


@dataclass(frozen=True)
class RateBounds:
    """Conditional-entropy sandwich around a hidden-function entropy rate."""

    lower: float
    upper: float
    horizon: int

    @property
    def mid(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _functional_rate_bounds(
    pi: np.ndarray,
    t: np.ndarray,
    emit: np.ndarray,
    n_symbols: int,
    horizon: int,
    cell_cap: float = DEFAULT_CELL_CAP,
) -> RateBounds:
    """Bounds on the entropy rate of x_i = emit(s_i) for a Markov chain s.

    upper  = H(X_m | X^{m-1})        (nonincreasing in the horizon m)
    lower  = H(X_m | X^{m-1}, S_1)   (nondecreasing; S_1 is the state at time 1)

    Both are evaluated exactly by enumerating the length-m emission strings
    with forward probabilities.  When the emission map is injective the
    process is itself Markov and both bounds collapse to the closed form.
    """
    s = len(pi)
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    if len(np.unique(emit)) == s:
        rate = _chain_rate(pi, t)
        return RateBounds(rate, rate, horizon)
    cells = float(s) * s * float(n_symbols) ** horizon
    if cells > cell_cap:
        raise WorkCapExceeded("entropy-rate sandwich horizon", cells, cell_cap)

    ind = np.arange(n_symbols)[:, None] == emit[None, :]  # (L, S)
    step = t[:, None, :] * ind[None, :, :]  # (s, x, t)

    # alpha[s1, string, s_cur] = P(S_1=s1, X^j=string, S_j=s_cur)
    alpha = np.zeros((s, n_symbols, s))
    alpha[np.arange(s), emit, np.arange(s)] = pi
    h_prev, h_prev_s1 = 0.0, _entropy_bits(pi)
    h_cur = h_cur_s1 = 0.0
    for j in range(1, horizon + 1):
        if j > 1:
            alpha = np.einsum("ius,sxt->iuxt", alpha, step).reshape(s, -1, s)
        joint_s1 = alpha.sum(axis=2)
        h_cur_s1 = _entropy_bits(joint_s1)
        h_cur = _entropy_bits(joint_s1.sum(axis=0))
        if j < horizon:
            h_prev, h_prev_s1 = h_cur, h_cur_s1
    return RateBounds(h_cur_s1 - h_prev_s1, h_cur - h_prev, horizon)


def hidden_marginal_entropy_rate_bounds(
    model: MarkovColumnSource, row: int, horizon: int, cell_cap: float = DEFAULT_CELL_CAP
) -> RateBounds:
    """Entropy-rate sandwich for a single matrix row of a Markov column source."""
    require_valid(model)
    if not isinstance(model, MarkovColumnSource):
        raise UsageError("rate bounds apply to Markov column sources")
    if row < 0 or row >= model.k:
        raise UsageError(f"row {row} out of range for k={model.k}")
    emit = model.symbol_table[:, row]
    return _functional_rate_bounds(
        model.stationary, model.transition, emit, model.q, horizon, cell_cap
    )


def _subset_rate_bounds(
    model: MarkovColumnSource, rows: Sequence[int], horizon: int, cell_cap: float = DEFAULT_CELL_CAP
) -> RateBounds:
    """Sandwich for the joint process of a subset of rows (composite symbols)."""
    rows = sorted(set(int(r) for r in rows))
    table = model.symbol_table[:, rows]
    weights = model.q ** np.arange(len(rows) - 1, -1, -1)
    emit = table @ weights
    return _functional_rate_bounds(
        model.stationary, model.transition, emit, model.q ** len(rows), horizon, cell_cap
    )


@dataclass(frozen=True, eq=False)
class SmbEstimate:
    """Monte Carlo estimate of per-symbol log-probabilities (AEP check)."""

    n: int
    trials: int
    joint_mean: float
    joint_stderr: float
    row_means: np.ndarray
    row_stderrs: np.ndarray


def smb_estimate(model: SourceModel, n: int, trials: int, seed: int) -> SmbEstimate:
    """Sample mean and standard error of -(1/n) log2 p over fresh samples.

    Covers both the joint matrix probability and the per-row marginal
    probabilities (the row variant needs the hidden-state forward sum).
    """
    require_valid(model)
    if trials < 1:
        raise UsageError("trials must be >= 1")
    paths = _sample_state_paths(model, n, trials, seed)
    table = model.symbol_table

    def _mean_se(vals: np.ndarray) -> tuple[float, float]:
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
        return mean, se

    joint_mean, joint_se = _mean_se(-_batched_matrix_log_prob(model, paths) / n)
    row_means = np.empty(model.k)
    row_ses = np.empty(model.k)
    for ell in range(model.k):
        vals = -_batched_row_log_prob(model, ell, table[paths][:, :, ell]) / n
        row_means[ell], row_ses[ell] = _mean_se(vals)
    return SmbEstimate(n, trials, joint_mean, joint_se, row_means, row_ses)


# ---------------------------------------------------------------------------
# exact finite-n enumeration
# ---------------------------------------------------------------------------


def _push_axis(t: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Contract one axis of a probability tensor with a (in, out) kernel."""
    t = np.moveaxis(t, axis, -1)
    t = t @ kernel
    return np.moveaxis(t, -1, axis)


def _push_axes(t: np.ndarray, kernel: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    for ax in axes:
        t = _push_axis(t, kernel, ax)
    return t


def _chain_string_tensor(pi: np.ndarray, t: np.ndarray, n: int) -> np.ndarray:
    """Tensor of shape (S,)*n holding the probability of each state string."""
    out = np.asarray(pi, dtype=float)
    for _ in range(n - 1):
        out = np.einsum("...s,st->...st", out, t)
    return out


def _prefix_entropies(tensor: np.ndarray) -> list[float]:
    """[H(A^0), H(A^1), ..., H(A^n)] from marginals of a string tensor."""
    n = tensor.ndim
    out = [0.0] * (n + 1)
    cur = tensor
    for j in range(n, 0, -1):
        out[j] = _entropy_bits(cur)
        cur = cur.sum(axis=j - 1)
    return out


def _temporal_cmi_sum(
    px: np.ndarray, pre_kernel: np.ndarray | None, suf_kernel: np.ndarray
) -> float:
    """sum_i I(A_i; B_{i+1..n} | A^{i-1}) for one row-sequence law ``px``.

    A is the row sequence pushed through ``pre_kernel`` (identity when None),
    B the same law pushed through ``suf_kernel``; prefix and suffix kernels are
    applied per position, matching the memoryless observation pipeline.
    """
    n = px.ndim
    pa = px if pre_kernel is None else _push_axes(px, pre_kernel, range(n))
    h_pre = _prefix_entropies(pa)
    total = 0.0
    for i in range(1, n):  # the i=n term conditions on an empty future: zero
        j = px
        if pre_kernel is not None:
            j = _push_axes(j, pre_kernel, range(i))
        j = _push_axes(j, suf_kernel, range(i, n))
        h_full = _entropy_bits(j)
        h_drop = _entropy_bits(j.sum(axis=i - 1))
        total += h_pre[i] - h_pre[i - 1] - h_full + h_drop
    return total


def _erasure_kernel(w: np.ndarray, p: float) -> np.ndarray:
    """Per-entry kernel from source symbol to (channel output or erasure mark)."""
    q_in, q_out = w.shape
    out = np.empty((q_in, q_out + 1))
    out[:, :q_out] = p * w
    out[:, q_out] = 1.0 - p
    return out


def _rows_law(chain_t: np.ndarray, model: SourceModel, n: int) -> np.ndarray:
    """Reindex the state-string law as a (q^n,)*k law over per-row strings."""
    k, q, s = model.k, model.q, model.num_states
    flat = chain_t.ravel()
    if k == 1:
        return flat
    idx = np.arange(flat.size, dtype=np.int64)
    digits = (idx[:, None] // s ** np.arange(n - 1, -1, -1, dtype=np.int64)) % s
    syms = model.symbol_table[digits]  # (N, n, k)
    pos_w = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    row_strings = np.einsum("inj,n->ij", syms, pos_w)  # (N, k)
    row_w = (q**n) ** np.arange(k - 1, -1, -1, dtype=np.int64)
    target = row_strings @ row_w
    out = np.empty(flat.size)
    out[target] = flat
    return out.reshape((q**n,) * k)


@dataclass(frozen=True, eq=False)
class FiniteNTable:
    """Every finite-n information quantity of one (model, channel, p) instance.

    Per-row arrays hold sequence totals H(X_l^n), I(X_l^n;Y_l^n) with Y the
    pre-erasure channel output, and I(X_l^n;Z_l^n) with Z the erased output.
    ``a_row`` and ``b_row`` are the per-symbol temporal corrections
    (1/n) sum_i I(X_li; E_{l,i+1..n} | X_l^{i-1}) for the noiseless pipeline
    and (1/n) sum_i I(Y_li; Z_{l,i+1..n} | Y_l^{i-1}) for the noisy one;
    ``c_row[l]`` is I(Z_l^n; Z_0^n..Z_{l-1}^n) in the given row order.
    """

    n: int
    p: float
    k: int
    h_row: np.ndarray
    i_xy_row: np.ndarray
    i_xz_row: np.ndarray
    a_row: np.ndarray
    b_row: np.ndarray
    c_row: np.ndarray
    h_joint: float
    i_xz_joint: float
    identity_dmc: bool
    iid_model: bool

    def residuals(self) -> dict[str, float]:
        """Worst absolute residual of each exact decomposition identity.

        erasure_mi_decomposition:  I(X;Z) = p H(X) + (1-p) n a     (identity channel)
        noisy_mi_decomposition:    I(X;Z) = p I(X;Y) + (1-p) n b   (any channel)
        cross_row_chain_rule:      sum_l I(X_l;Z_l) - I(all;all) = sum_l c_l
        iid_factorization:         I(X;Z) = p I(X;Y)               (i.i.d. model)
        """
        out: dict[str, float] = {}
        n, p = self.n, self.p
        if self.identity_dmc:
            r = self.i_xz_row - (p * self.h_row + (1.0 - p) * n * self.a_row)
            out["erasure_mi_decomposition"] = float(np.abs(r).max())
        r = self.i_xz_row - (p * self.i_xy_row + (1.0 - p) * n * self.b_row)
        out["noisy_mi_decomposition"] = float(np.abs(r).max())
        out["cross_row_chain_rule"] = abs(
            float(self.i_xz_row.sum()) - self.i_xz_joint - float(self.c_row.sum())
        )
        if self.iid_model:
            r = self.i_xz_row - p * self.i_xy_row
            out["iid_factorization"] = float(np.abs(r).max())
        return out

    def to_csv_rows(self) -> list[tuple[str, str, int, float]]:
        rows: list[tuple[str, str, int, float]] = []
        per_row = [
            ("h_row", self.h_row),
            ("i_xy_row", self.i_xy_row),
            ("i_xz_row", self.i_xz_row),
            ("a_row", self.a_row),
            ("b_row", self.b_row),
            ("c_row", self.c_row),
        ]
        for name, arr in per_row:
            for ell in range(self.k):
                rows.append((name, str(ell), self.n, float(arr[ell])))
        rows.append(("h_joint", "", self.n, self.h_joint))
        rows.append(("i_xz_joint", "", self.n, self.i_xz_joint))
        return rows

    def csv_text(self) -> str:
        lines = ["quantity,row_index,n,value"]
        for name, ell, n, value in self.to_csv_rows():
            lines.append(f"{name},{ell},{n},{value!r}")
        return "\n".join(lines) + "\n"


def finite_n_work_estimate(model: SourceModel, dmc: Dmc, n: int) -> float:
    """Largest table (in cells) the enumeration would materialize."""
    s, q, qo = model.num_states, model.q, dmc.q_out
    return float(
        max(
            float(s) ** n,
            float(qo + 1) ** (n * model.k),
            float(q) ** n * float(qo + 1) ** n,
            float(max(q + 1, qo + 1)) ** n,
        )
    )


def exact_finite_n(
    model: SourceModel,
    dmc: Dmc | None,
    p: float,
    n: int,
    cell_cap: float = DEFAULT_CELL_CAP,
) -> FiniteNTable:
    """Exact finite-n table by full enumeration; refuses oversized requests.

    ``a_row`` always refers to the noiseless pipeline (erasure applied to the
    source symbols directly); ``b_row`` and all Z quantities use the supplied
    channel.  With the identity channel the two pipelines coincide.
    """
    require_valid(model)
    if dmc is None:
        dmc = Dmc.identity(model.q)
    bad = validate_dmc(dmc)
    if not bad.ok:
        raise ModelValidationError("invalid channel: " + "; ".join(bad.violations), bad.violations)
    if dmc.q_in != model.q:
        raise UsageError(f"channel q_in={dmc.q_in} does not match model alphabet q={model.q}")
    if not (0.0 <= p <= 1.0):
        raise UsageError(f"observation rate p={p} outside [0, 1]")
    if n < 1:
        raise UsageError("n must be >= 1")
    estimate = finite_n_work_estimate(model, dmc, n)
    if estimate > cell_cap:
        raise WorkCapExceeded("exact finite-n enumeration", estimate, cell_cap)

    k, q, qo = model.k, model.q, dmc.q_out
    pi, t = as_column_chain(model)
    chain_t = _chain_string_tensor(pi, t, n)
    h_joint = _entropy_bits(chain_t)

    w = dmc.w
    kz = _erasure_kernel(w, p)  # source -> erased channel output
    ke = _erasure_kernel(np.eye(q), p)  # source -> erased source (noiseless pipeline)
    h_w_given = -np.array([_xlogx_sum(w[x]) for x in range(q)])
    h_kz_given = -np.array([_xlogx_sum(kz[x]) for x in range(q)])

    h_row = np.empty(k)
    i_xy_row = np.empty(k)
    i_xz_row = np.empty(k)
    a_row = np.empty(k)
    b_row = np.empty(k)
    hz_rows = np.empty(k)
    h_z_given_x_rows = np.empty(k)
    for ell in range(k):
        ind = (model.symbol_table[:, ell][:, None] == np.arange(q)[None, :]).astype(float)
        px = _push_axes(chain_t, ind, range(n))
        h_row[ell] = _entropy_bits(px)
        cell_marginals = [
            px.sum(axis=tuple(ax for ax in range(n) if ax != i)) for i in range(n)
        ]
        py = _push_axes(px, w, range(n))
        h_y_given_x = float(sum(m @ h_w_given for m in cell_marginals))
        i_xy_row[ell] = _nonneg(_entropy_bits(py) - h_y_given_x)
        pz = _push_axes(px, kz, range(n))
        hz_rows[ell] = _entropy_bits(pz)
        h_z_given_x_rows[ell] = float(sum(m @ h_kz_given for m in cell_marginals))
        i_xz_row[ell] = _nonneg(hz_rows[ell] - h_z_given_x_rows[ell])
        a_row[ell] = _temporal_cmi_sum(px, None, ke) / n
        b_row[ell] = _temporal_cmi_sum(px, w, kz) / n

    rows_t = _rows_law(chain_t, model, n)
    kz_row_kernel = kz
    for _ in range(n - 1):
        kz_row_kernel = np.kron(kz_row_kernel, kz)
    h_prefix = [0.0]  # H(Z_0..Z_{j-1}) for j rows
    for j in range(1, k + 1):
        marg = rows_t.sum(axis=tuple(range(j, k))) if j < k else rows_t
        zt = _push_axes(marg, kz_row_kernel, range(j))
        h_prefix.append(_entropy_bits(zt))
    c_row = np.array(
        [_nonneg(hz_rows[ell] + h_prefix[ell] - h_prefix[ell + 1]) for ell in range(k)]
    )
    i_xz_joint = _nonneg(h_prefix[k] - float(h_z_given_x_rows.sum()))

    return FiniteNTable(
        n=n,
        p=p,
        k=k,
        h_row=h_row,
        i_xy_row=i_xy_row,
        i_xz_row=i_xz_row,
        a_row=a_row,
        b_row=b_row,
        c_row=c_row,
        h_joint=h_joint,
        i_xz_joint=i_xz_joint,
        identity_dmc=dmc.is_identity,
        iid_model=isinstance(model, ColumnPmf),
    )
