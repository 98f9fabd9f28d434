import math

import numpy as np
import pytest

from completion_lab.channels import Dmc, ObservedMatrix, apply_erasure, observe
from completion_lab.decoders import (
    DecodeOutcome,
    TypicalityParams,
    _score_tensor,
    map_decode_exhaustive,
    map_decode_viterbi,
    posterior_score,
    typicality_decode,
)
from completion_lab.errors import UsageError, WorkCapExceeded
from completion_lab.models import (
    ColumnPmf,
    MatrixSample,
    row_sequence_log_prob,
    sample_matrix,
    sequence_log_prob,
)

from conftest import identical_rows_chain, random_model


def _random_instance(rng, allow_noise=True):
    k = int(rng.integers(1, 3))
    n = int(rng.integers(1, 7))
    p = float(rng.uniform(0.1, 0.95))
    model = random_model(rng, k)
    if allow_noise and rng.random() < 0.5:
        dmc = Dmc.bsc(float(rng.uniform(0.05, 0.4)))
    else:
        dmc = Dmc.identity(2)
    truth = sample_matrix(model, n, int(rng.integers(1 << 30)))
    obs = observe(truth, dmc, p, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
    return model, dmc, p, truth, obs


class TestMapDecoders:
    def test_full_observation_returns_observed(self, generic_pmf):
        truth = sample_matrix(generic_pmf, 12, 3)
        obs = apply_erasure(truth, 1.0, 4)
        out = map_decode_viterbi(obs, generic_pmf, None, 1.0)
        assert out.status == "decoded"
        assert (out.estimate.cells == truth.cells).all()

    def test_identical_rows_copy(self, identical_rows_uniform):
        obs = ObservedMatrix(
            [[0, 1, 1, 0], [0, 0, 0, 0]], [[True] * 4, [False] * 4]
        )
        out = map_decode_viterbi(obs, identical_rows_uniform, None, 0.6)
        assert (out.estimate.cells[1] == [0, 1, 1, 0]).all()

    def test_uniform_tie_breaks_to_zero(self, uniform_pair):
        obs = ObservedMatrix([[1, 1, 0], [1, -1, 1]], [[True] * 3, [True, False, True]])
        out = map_decode_viterbi(obs, uniform_pair, None, 0.7)
        assert out.tied
        assert out.estimate.cells[1, 1] == 0

    def test_markov_decode_uses_neighbors(self, stay9_chain):
        obs = ObservedMatrix([[0, -1, 0]], [[True, False, True]])
        out = map_decode_viterbi(obs, stay9_chain, None, 0.6)
        assert out.estimate.cells[0, 1] == 0  # staying is 0.9/0.1 likely

    def test_no_candidate_outside_support(self, identical_rows_uniform):
        obs = ObservedMatrix([[0, 0], [1, 0]], [[True] * 2, [True] * 2])
        assert map_decode_viterbi(obs, identical_rows_uniform, None, 0.9).status == "no_candidate"
        assert map_decode_exhaustive(obs, identical_rows_uniform, None, 0.9).status == "no_candidate"

    def test_exhaustive_cap(self, uniform_pair):
        obs = apply_erasure(sample_matrix(uniform_pair, 30, 0), 0.5, 1)
        with pytest.raises(WorkCapExceeded):
            map_decode_exhaustive(obs, uniform_pair, None, 0.5, candidate_cap=1 << 10)

    @pytest.mark.parametrize("seed", range(6))
    def test_oracle_equivalence_batch(self, seed):
        rng = np.random.default_rng(7000 + seed)
        for _ in range(25):
            model, dmc, p, truth, obs = _random_instance(rng)
            a = map_decode_viterbi(obs, model, dmc, p)
            b = map_decode_exhaustive(obs, model, dmc, p)
            assert a.status == b.status == "decoded"
            assert (a.estimate.cells == b.estimate.cells).all()
            assert a.score == pytest.approx(b.score, abs=1e-9)

    def test_map_optimality_by_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            model, dmc, p, truth, obs = _random_instance(rng)
            out = map_decode_viterbi(obs, model, dmc, p)
            best = float(_score_tensor(obs, model, dmc, p).max())
            assert out.score >= best - 1e-9

    def test_monotone_in_evidence(self):
        # revealing a true cell never lowers the truth's posterior (noiseless)
        rng = np.random.default_rng(21)
        checked = 0
        while checked < 40:
            model, dmc, p, truth, obs = _random_instance(rng, allow_noise=False)
            erased = np.argwhere(~obs.observed)
            if not len(erased):
                continue
            posterior_before = _truth_posterior(model, p, truth, obs)
            ell, i = erased[int(rng.integers(len(erased)))]
            symbols = np.array(obs.symbols)
            observed = np.array(obs.observed)
            symbols[ell, i] = truth.cells[ell, i]
            observed[ell, i] = True
            obs_more = ObservedMatrix(symbols, observed)
            posterior_after = _truth_posterior(model, p, truth, obs_more)
            assert posterior_after >= posterior_before - 1e-12
            checked += 1


def _truth_posterior(model, p, truth, obs) -> float:
    scores = _score_tensor(obs, model, Dmc.identity(model.q), p).ravel()
    finite = scores[scores > -math.inf]
    log_norm = float(np.logaddexp2.reduce(finite))
    truth_score = posterior_score(model, Dmc.identity(model.q), p, truth, obs)
    return 2.0 ** (truth_score - log_norm)


class TestTypicality:
    def test_no_erasures_decodes_truth(self, generic_pmf):
        truth = sample_matrix(generic_pmf, 30, 8)
        obs = apply_erasure(truth, 1.0, 9)
        params = TypicalityParams.for_model(generic_pmf, 1.0, epsilon=0.5)
        out = typicality_decode(obs, generic_pmf, params)
        assert out.status == "decoded"
        assert (out.estimate.cells == truth.cells).all()

    def test_uniform_single_erasure_ambiguous(self, uniform_pair):
        obs = ObservedMatrix(
            [[1, 1, 0, 1], [1, -1, 1, 0]], [[True] * 4, [True, False, True, True]]
        )
        params = TypicalityParams.for_model(uniform_pair, 0.5, epsilon=0.5)
        out = typicality_decode(obs, uniform_pair, params)
        assert out.status == "ambiguous"
        assert out.candidates == 2

    def test_zero_slack_empty_typical_set(self, generic_pmf):
        truth = MatrixSample([[0, 0, 0, 0], [0, 0, 0, 0]])  # atypical under the model
        obs = apply_erasure(truth, 1.0, 1)
        params = TypicalityParams.for_model(generic_pmf, 1.0, epsilon=0.0)
        assert typicality_decode(obs, generic_pmf, params).status == "no_candidate"

    def test_candidate_cap(self, uniform_pair):
        truth = sample_matrix(uniform_pair, 30, 2)
        obs = apply_erasure(truth, 0.3, 3)
        params = TypicalityParams.for_model(uniform_pair, 0.3)
        with pytest.raises(WorkCapExceeded):
            typicality_decode(obs, uniform_pair, params, candidate_cap=16)

    def test_noisy_alphabet_rejected(self, generic_pmf):
        obs = ObservedMatrix([[2, 1]], [[True, True]])
        params = TypicalityParams(0.1, (1.0,), 1.0, 0.5)
        with pytest.raises(UsageError):
            typicality_decode(obs, ColumnPmf(1, 2, [0.5, 0.5]), params)

    def test_soundness_decoded_truth_typical_implies_equal(self):
        # whenever the decoder answers and the truth itself is typical,
        # the answer must be the truth (otherwise the trial counts as error)
        model = ColumnPmf(2, 2, [0.49, 0.01, 0.01, 0.49])
        params = TypicalityParams.for_model(model, 0.9, epsilon=0.25)
        decoded = agreed = 0
        for trial in range(80):
            truth = sample_matrix(model, 24, 4000 + trial)
            obs = apply_erasure(truth, 0.9, 5000 + trial)
            try:
                out = typicality_decode(obs, model, params, candidate_cap=1 << 14)
            except WorkCapExceeded:
                continue
            if out.status != "decoded":
                continue
            decoded += 1
            if _truth_is_typical(model, truth, obs, params):
                assert (out.estimate.cells == truth.cells).all()
                agreed += 1
        assert decoded > 0 and agreed > 0

    def test_for_model_markov_references(self):
        chain = identical_rows_chain()
        params = TypicalityParams.for_model(chain, 0.6, epsilon=0.2, horizon=6)
        assert params.joint_rate == pytest.approx(0.468996, abs=1e-6)
        assert params.row_rates[0] == pytest.approx(0.468996, abs=1e-6)


def _truth_is_typical(model, truth, obs, params) -> bool:
    n = truth.n
    p = params.obs_rate
    pair_offset = -(p * math.log2(p) + (1 - p) * math.log2(1 - p)) if 0 < p < 1 else 0.0
    for ell in range(truth.k):
        emp = -row_sequence_log_prob(model, ell, truth.cells[ell]) / n
        if abs(emp - params.row_rates[ell]) > params.epsilon:
            return False
        o = int(obs.observed[ell].sum())
        chan = -(o * math.log2(p) + (n - o) * math.log2(1 - p)) / n if 0 < p < 1 else 0.0
        if abs(emp + chan - (params.row_rates[ell] + pair_offset)) > params.epsilon:
            return False
    joint = -sequence_log_prob(model, truth) / n
    return abs(joint - params.joint_rate) <= params.epsilon


def test_decode_outcome_invariants():
    out = DecodeOutcome("no_candidate")
    assert out.estimate is None and out.score is None and out.candidates == 0
