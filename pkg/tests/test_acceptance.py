"""Acceptance gate: one test per shipping criterion, each printing a
pass/fail line with its runtime (run with ``pytest -s`` to see them inline).

Expected values tagged as derived were computed from independent closed forms
inside this module (entropy sums, hand enumerations), never from the code
under test.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from completion_lab.capacity import (
    EstimatorConfig,
    capacity_iid,
    capacity_iid_noisy,
    upper_bound_arbitrary,
)
from completion_lab.channels import Dmc, observe
from completion_lab.decoders import map_decode_exhaustive, map_decode_viterbi
from completion_lab.errors import CapacityZeroError
from completion_lab.harness import (
    ExperimentConfig,
    exact_map_error,
    run_sweep,
    run_trial,
    sweep_csv_text,
    sweep_summary_text,
)
from completion_lab.measures import (
    exact_finite_n,
    hidden_marginal_entropy_rate_bounds,
    markov_entropy_rate,
    smb_estimate,
)
from completion_lab.models import ColumnPmf, sample_matrix

from conftest import GENERIC_PROBS, random_model, random_pmf


def _h(probs) -> float:
    return -sum(p * math.log2(p) for p in probs if p > 0)


H_JOINT = _h(GENERIC_PROBS)  # 1.7219280948873623
BSC01_INFO = 1.0 - _h([0.1, 0.9])  # single-letter information of a 0.1-flip channel


@contextmanager
def criterion(cid: int, desc: str):
    t0 = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"criterion {cid:02d} FAIL: {desc}")
        raise
    print(f"criterion {cid:02d} PASS ({time.monotonic() - t0:.1f}s): {desc}")


def test_c01_iid_capacity_special_cases(product_pmf, identical_rows_uniform):
    with criterion(1, "i.i.d. capacity special cases (independent rows, identical rows)"):
        t0 = time.monotonic()
        assert capacity_iid(product_pmf).capacity == pytest.approx(1.0, abs=1e-12)
        assert capacity_iid(identical_rows_uniform).capacity == pytest.approx(2.0, abs=1e-12)
        assert time.monotonic() - t0 < 1.0


def test_c02_iid_capacity_generic_value(generic_pmf):
    with criterion(2, "i.i.d. capacity generic value and threshold"):
        t0 = time.monotonic()
        report = capacity_iid(generic_pmf)
        assert report.capacity == pytest.approx(2.0 / H_JOINT, abs=1e-9)
        assert report.capacity == pytest.approx(1.161488, abs=1e-6)
        assert report.p_star == pytest.approx(H_JOINT / 2.0, abs=1e-9)
        assert report.p_star == pytest.approx(0.860964, abs=1e-6)
        assert time.monotonic() - t0 < 1.0


def test_c03_noisy_capacity_reductions(generic_pmf):
    with criterion(3, "noisy capacity: identity reduction, useless channel, 0.1-flip value"):
        t0 = time.monotonic()
        identity = capacity_iid_noisy(generic_pmf, Dmc.identity(2))
        assert identity.capacity == pytest.approx(capacity_iid(generic_pmf).capacity, abs=1e-12)
        with pytest.raises(CapacityZeroError):
            capacity_iid_noisy(generic_pmf, Dmc.bsc(0.5))
        noisy = capacity_iid_noisy(generic_pmf, Dmc.bsc(0.1))
        assert noisy.capacity == pytest.approx(2.0 * BSC01_INFO / H_JOINT, abs=1e-6)
        assert time.monotonic() - t0 < 1.0


def test_c04_identity_suite_on_randomized_models():
    with criterion(4, "exact decomposition identities on 20 randomized models"):
        t0 = time.monotonic()
        rng = np.random.default_rng(20240811)
        for _ in range(20):
            k = int(rng.integers(1, 3))
            n = int(rng.integers(1, 6))
            p = float(rng.choice([0.3, 0.6, 0.9]))
            model = random_model(rng, k)
            noisy = Dmc.bsc(float(rng.uniform(0.05, 0.45)))
            for dmc in (None, noisy):
                for name, residual in exact_finite_n(model, dmc, p, n).residuals().items():
                    assert residual <= 1e-9, (name, residual)
        assert time.monotonic() - t0 < 120.0


def test_c05_iid_degeneracy_of_corrections(generic_pmf):
    with criterion(5, "i.i.d. temporal corrections vanish; independent rows have no cross term"):
        t0 = time.monotonic()
        rng = np.random.default_rng(7)
        models = [generic_pmf] + [random_pmf(rng, 2) for _ in range(3)]
        for model in models:
            for n in (1, 2, 3, 4, 5):
                for p in (0.3, 0.6, 0.9):
                    table = exact_finite_n(model, None, p, n)
                    assert np.abs(table.a_row).max() <= 1e-12
                    assert np.abs(table.b_row).max() <= 1e-12
        for _ in range(3):
            m0 = rng.dirichlet(np.ones(2))
            m1 = rng.dirichlet(np.ones(2))
            product = ColumnPmf.product([m0, m1])
            for n in (1, 3, 5):
                table = exact_finite_n(product, None, 0.6, n)
                assert np.abs(table.c_row).max() <= 1e-12
        assert time.monotonic() - t0 < 60.0


def test_c06_decoder_oracle_equivalence():
    with criterion(6, "dynamic-programming MAP equals exhaustive MAP on 120 instances"):
        t0 = time.monotonic()
        rng = np.random.default_rng(606)
        for _ in range(120):
            k = int(rng.integers(1, 3))
            n = int(rng.integers(1, 7))
            p = float(rng.uniform(0.1, 0.95))
            model = random_model(rng, k)
            dmc = Dmc.identity(2) if rng.random() < 0.5 else Dmc.bsc(float(rng.uniform(0.05, 0.4)))
            truth = sample_matrix(model, n, int(rng.integers(1 << 30)))
            obs = observe(truth, dmc, p, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
            fast = map_decode_viterbi(obs, model, dmc, p)
            slow = map_decode_exhaustive(obs, model, dmc, p)
            assert fast.status == slow.status == "decoded"
            assert (fast.estimate.cells == slow.estimate.cells).all()
            assert fast.score == pytest.approx(slow.score, abs=1e-9)
        assert time.monotonic() - t0 < 60.0


def test_c07_monte_carlo_matches_exact_error():
    with criterion(7, "Monte Carlo error rate within 3 sigma of the exact oracle"):
        t0 = time.monotonic()
        coin = ColumnPmf(1, 2, [0.5, 0.5])
        exact = exact_map_error(coin, None, 0.6, 3)
        assert exact == pytest.approx(1.0 - 0.8**3, abs=1e-12)  # hand product form
        trials = 10_000
        cfg = ExperimentConfig(model=coin, dmc=None, n=3, trials=1, p_grid=(0.6,), seed=1234)
        errors = sum(not run_trial(cfg, 0.6, t).success for t in range(trials))
        sigma = math.sqrt(exact * (1.0 - exact) / trials)
        assert abs(errors / trials - exact) <= 3.0 * sigma
        assert time.monotonic() - t0 < 30.0


def test_c08_entropy_rate_machinery(stay9_chain):
    with criterion(8, "entropy rate: closed form, sandwich bounds, sampling estimate"):
        t0 = time.monotonic()
        rate = markov_entropy_rate(stay9_chain)
        assert rate == pytest.approx(_h([0.1, 0.9]), abs=1e-12)
        assert rate == pytest.approx(0.468996, abs=1e-6)
        bounds = hidden_marginal_entropy_rate_bounds(stay9_chain, 0, 3)
        assert bounds.lower <= rate + 1e-12 <= bounds.upper + 2e-12
        assert bounds.width < 1e-6
        est = smb_estimate(stay9_chain, 3000, 150, 88)
        assert est.joint_stderr > 0
        assert abs(est.joint_mean - rate) <= 3.0 * est.joint_stderr
        assert time.monotonic() - t0 < 60.0


def test_c09_upper_bound_consistency(product_pmf, generic_pmf, identical_rows_uniform):
    with criterion(9, "general upper bound: product sources hit 1, correlated stay below"):
        t0 = time.monotonic()
        rng = np.random.default_rng(909)
        for p in (0.3, 0.6, 0.9):
            for point in upper_bound_arbitrary(product_pmf, None, p, [1, 2, 3, 4]).points:
                assert point.bound == pytest.approx(1.0, abs=1e-9)
        correlated = [generic_pmf, identical_rows_uniform] + [random_pmf(rng, 2) for _ in range(3)]
        for model in correlated:
            cap = capacity_iid(model).capacity
            for p in (0.3, 0.6, 0.9):
                for point in upper_bound_arbitrary(model, None, p, [1, 2, 3, 4]).points:
                    assert point.bound <= cap + 1e-9
        assert time.monotonic() - t0 < 120.0


@pytest.fixture(scope="module")
def full_sweep():
    cfg = ExperimentConfig(
        model=ColumnPmf(2, 2, GENERIC_PROBS),
        dmc=None,
        n=200,
        trials=500,
        decoder="map",
        p_grid=tuple(np.linspace(0.5, 1.0, 11).tolist()),
        seed=424242,
        est=EstimatorConfig(n=4),
    )
    t0 = time.monotonic()
    report = run_sweep(cfg, config_hash="acceptance")
    return cfg, report, time.monotonic() - t0


def test_c10_end_to_end_sweep(full_sweep):
    with criterion(10, "end-to-end sweep: 11 rates x 500 trials at n=200"):
        cfg, report, elapsed = full_sweep
        assert elapsed < 300.0
        assert len(report.rows) == 11
        last = report.rows[-1]
        assert last.p == 1.0 and last.errors == 0 and last.error_rate == 0.0
        fits = np.array(report.isotonic_fit)
        assert (np.diff(fits) <= 1e-12).all()
        assert report.prediction is not None
        assert report.p_star == pytest.approx(H_JOINT / 2.0, abs=1e-9)
        assert len(report.bound_points) == 11
        assert report.transition is not None
        band = report.transition.band
        assert band[0] <= report.transition.p_hat <= band[1]
        summary = sweep_summary_text(report)
        assert "predicted_p_star" in summary
        assert "upper_bound[" in summary
        assert "transition_p_hat" in summary


def test_c11_reproducibility(full_sweep):
    with criterion(11, "same seed reproduces the sweep CSV byte for byte"):
        cfg, report, _ = full_sweep
        again = run_sweep(cfg, config_hash="acceptance")
        assert sweep_csv_text(again) == sweep_csv_text(report)
        assert sweep_csv_text(report).encode() == sweep_csv_text(again).encode()
