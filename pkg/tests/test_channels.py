import itertools
import math

import numpy as np
import pytest

from completion_lab.channels import (
    Dmc,
    ErasureSpec,
    ObservedMatrix,
    apply_dmc,
    apply_erasure,
    observation_log_likelihood,
    observe,
    validate_dmc,
)
from completion_lab.errors import UsageError
from completion_lab.models import ColumnPmf, MatrixSample, sample_matrix

NEG_INF = float("-inf")


class TestDmc:
    def test_identity_returns_input_unchanged(self):
        sample = MatrixSample(np.random.default_rng(0).integers(0, 3, (2, 500)))
        out = apply_dmc(sample, Dmc.identity(3), seed=42)
        assert (out.cells == sample.cells).all()

    def test_input_independent_channel(self):
        w = Dmc(2, 2, [[0.3, 0.7], [0.3, 0.7]])
        zeros = MatrixSample(np.zeros((1, 100_000), dtype=int))
        ones = MatrixSample(np.ones((1, 100_000), dtype=int))
        out0 = apply_dmc(zeros, w, seed=7)
        out1 = apply_dmc(ones, w, seed=7)
        # same seed and input-independent rows: identical output streams
        assert (out0.cells == out1.cells).all()
        frac = out0.cells.mean()
        sigma = math.sqrt(0.7 * 0.3 / 100_000)
        assert abs(frac - 0.7) <= 3 * sigma

    def test_bsc_flip_fraction(self):
        zeros = MatrixSample(np.zeros((1, 100_000), dtype=int))
        out = apply_dmc(zeros, Dmc.bsc(0.1), seed=3)
        sigma = math.sqrt(0.1 * 0.9 / 100_000)
        assert abs(out.cells.mean() - 0.1) <= 3 * sigma

    def test_alphabet_mismatch_rejected(self):
        sample = MatrixSample([[0, 1, 2]])
        with pytest.raises(UsageError):
            apply_dmc(sample, Dmc.bsc(0.1), seed=0)

    def test_validate_dmc(self):
        assert validate_dmc(Dmc.bsc(0.25)).ok
        bad = Dmc(2, 2, [[0.7, 0.7], [0.5, 0.5]])
        assert any("sum to 1" in v for v in validate_dmc(bad).violations)


class TestErasure:
    def test_p_one_no_erasures(self):
        sample = MatrixSample(np.ones((3, 50), dtype=int))
        obs = apply_erasure(sample, 1.0, seed=1)
        assert obs.observed.all()
        assert (obs.symbols == sample.cells).all()

    def test_p_zero_all_erased(self):
        sample = MatrixSample(np.ones((3, 50), dtype=int))
        obs = apply_erasure(sample, 0.0, seed=1)
        assert not obs.observed.any()
        assert (obs.symbols == -1).all()

    def test_observed_fraction(self):
        sample = MatrixSample(np.zeros((2, 50_000), dtype=int))
        obs = apply_erasure(sample, ErasureSpec(0.5), seed=9)
        frac = obs.observed.mean()
        sigma = math.sqrt(0.25 / 100_000)
        assert abs(frac - 0.5) <= 3 * sigma

    def test_erasure_independent_of_values(self):
        model = ColumnPmf(1, 2, [0.3, 0.7])
        sample = sample_matrix(model, 100_000, 5)
        obs = apply_erasure(sample, 0.6, seed=6)
        for symbol in (0, 1):
            cells = sample.cells == symbol
            rate = obs.observed[cells].mean()
            count = int(cells.sum())
            sigma = math.sqrt(0.6 * 0.4 / count)
            assert abs(rate - 0.6) <= 3 * sigma

    def test_invalid_rate_rejected(self):
        with pytest.raises(UsageError):
            ErasureSpec(1.5)


def test_identity_pipeline_matches_plain_erasure():
    model = ColumnPmf(2, 2, [0.4, 0.1, 0.1, 0.4])
    sample = sample_matrix(model, 300, 11)
    direct = apply_erasure(sample, 0.7, seed=22)
    piped = observe(sample, Dmc.identity(2), 0.7, noise_seed=33, erasure_seed=22)
    assert (direct.symbols == piped.symbols).all()
    assert (direct.observed == piped.observed).all()


class TestObservationLogLikelihood:
    def test_identity_full_observation(self):
        x = np.array([0, 1, 1, 0])
        obs = ObservedMatrix([x], [[True] * 4])
        assert observation_log_likelihood(x, obs.row(0), Dmc.identity(2), 1.0) == 0.0

    def test_impossible_observation(self):
        x = np.array([0, 1])
        obs = ObservedMatrix([[1, 1]], [[True, True]])
        assert observation_log_likelihood(x, obs.row(0), Dmc.identity(2), 0.9) == NEG_INF

    def test_match_plus_erasure(self):
        x = np.array([0, 1])
        obs = ObservedMatrix([[0, -1]], [[True, False]])
        ll = observation_log_likelihood(x, obs.row(0), Dmc.identity(2), 0.5)
        assert ll == pytest.approx(-2.0, abs=1e-12)

    @pytest.mark.parametrize("dmc", [Dmc.identity(2), Dmc.bsc(0.2)])
    @pytest.mark.parametrize("p", [0.0, 0.3, 1.0])
    def test_likelihood_normalizes(self, dmc, p):
        # sum over all observation outcomes of one row must be 1
        n = 6
        x = np.array([0, 1, 1, 0, 1, 0])
        total = 0.0
        for z in itertools.product(range(dmc.q_out + 1), repeat=n):
            z = np.array(z)
            observed = z < dmc.q_out
            obs = ObservedMatrix([np.where(observed, z, -1)], [observed])
            total += 2.0 ** observation_log_likelihood(x, obs.row(0), dmc, p)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_length_mismatch(self):
        obs = ObservedMatrix([[0, 1]], [[True, True]])
        with pytest.raises(UsageError):
            observation_log_likelihood(np.array([0]), obs.row(0), Dmc.identity(2), 0.5)
