import pytest
from fastapi.testclient import TestClient

from completion_lab.service import app

from conftest import GENERIC_PROBS


@pytest.fixture(scope="module")
def client() -> TestClient:
    return TestClient(app)


GENERIC_MODEL = {"type": "iid", "k": 2, "q": 2, "probs": list(GENERIC_PROBS)}
STAY9_MODEL = {
    "type": "markov",
    "k": 1,
    "q": 2,
    "transition": [0.9, 0.1, 0.1, 0.9],
}


def test_health(client):
    body = client.get("/v1/health").json()
    assert body["status"] == "ok"


class TestCapacityEndpoint:
    def test_generic_value(self, client):
        r = client.post("/v1/capacity", json={"model": GENERIC_MODEL})
        assert r.status_code == 200
        report = r.json()["report"]
        assert report["capacity"] == pytest.approx(1.161489, abs=1e-6)
        assert report["p_star"] == pytest.approx(0.860964, abs=1e-6)
        assert report["method"] == "exact"

    def test_with_region_check(self, client):
        r = client.post("/v1/capacity", json={"model": GENERIC_MODEL, "region_p": 0.87})
        region = r.json()["region"]
        assert region["feasible"] is True
        assert len(region["margins"]) == 3

    def test_noisy_channel(self, client):
        r = client.post(
            "/v1/capacity", json={"model": GENERIC_MODEL, "dmc": {"type": "bsc", "flip": 0.1}}
        )
        assert r.json()["report"]["capacity"] == pytest.approx(0.6167556, abs=1e-6)

    def test_markov_fixed_point(self, client):
        r = client.post(
            "/v1/capacity", json={"model": STAY9_MODEL, "estimator": {"n": 3, "horizon": 4}}
        )
        report = r.json()["report"]
        assert report["capacity"] == 1.0
        assert report["method"] == "fixed-point"

    def test_validation_error_maps_to_422(self, client):
        bad = {"type": "iid", "k": 2, "q": 2, "probs": [0.5, 0.5, 0.1, 0.0]}
        r = client.post("/v1/capacity", json={"model": bad})
        assert r.status_code == 422
        body = r.json()
        assert body["category"] == "validation"
        assert any("pmf sum" in v for v in body["violations"])

    def test_degenerate_source_maps_to_422(self, client):
        degenerate = {"type": "iid", "k": 1, "q": 2, "probs": [1.0, 0.0]}
        r = client.post("/v1/capacity", json={"model": degenerate})
        assert r.status_code == 422
        assert "unbounded" in r.json()["message"]

    def test_schema_violation_is_fastapi_422(self, client):
        r = client.post("/v1/capacity", json={"model": {"type": "iid", "k": 2}})
        assert r.status_code == 422
        assert "detail" in r.json()  # fastapi's own shape, no category


class TestSimulateEndpoint:
    BODY = {
        "model": GENERIC_MODEL,
        "n": 24,
        "trials": 1,
        "p": 0.7,
        "seed": 5,
        "trial_index": 2,
    }

    def test_deterministic(self, client):
        a = client.post("/v1/simulate", json=self.BODY).json()
        b = client.post("/v1/simulate", json=self.BODY).json()
        assert a == b
        assert a["trial"]["index"] == 2
        assert len(a["truth"]) == 2 and len(a["truth"][0]) == 24

    def test_estimate_matches_truth_at_full_observation(self, client):
        body = dict(self.BODY, p=1.0)
        out = client.post("/v1/simulate", json=body).json()
        assert out["trial"]["success"] is True
        assert out["estimate"] == out["truth"]


class TestSweepEndpoint:
    def test_small_sweep(self, client):
        body = {
            "model": GENERIC_MODEL,
            "n": 40,
            "trials": 30,
            "grid": {"p_min": 0.5, "p_max": 1.0, "steps": 4},
            "seed": 21,
            "estimator": {"n": 3},
        }
        r = client.post("/v1/sweep", json=body)
        assert r.status_code == 200
        out = r.json()
        assert len(out["rows"]) == 4
        assert out["rows"][-1]["error_rate"] == 0.0
        assert out["prediction"]["p_star"] == pytest.approx(0.860964, abs=1e-6)
        assert out["config_hash"]
        assert out["versions"]["completion_lab"]

    def test_grid_validation(self, client):
        body = {
            "model": GENERIC_MODEL,
            "n": 10,
            "trials": 5,
            "grid": {"p_min": 0.9, "p_max": 0.2, "steps": 3},
        }
        assert client.post("/v1/sweep", json=body).status_code == 422


class TestEstimateEndpoint:
    def test_markov_quantities(self, client):
        body = {"model": STAY9_MODEL, "p": 0.6, "n": 4, "horizons": [2, 3], "trials": 50, "smb_n": 400}
        out = client.post("/v1/estimate", json=body).json()
        assert out["markov_rate"] == pytest.approx(0.468996, abs=1e-6)
        assert len(out["rate_bounds"]) == 2
        for b in out["rate_bounds"]:
            assert b["lower"] == pytest.approx(b["upper"], abs=1e-12)
        fin = out["finite_n"]
        assert fin["csv"].startswith("quantity,row_index,n,value")
        assert all(v <= 1e-9 for v in fin["residuals"].values())
        smb = out["smb"]
        assert abs(smb["joint_mean"] - 0.468996) <= max(3 * smb["joint_stderr"], 0.05)

    def test_iid_has_no_rate_bounds(self, client):
        out = client.post("/v1/estimate", json={"model": GENERIC_MODEL, "n": 3}).json()
        assert out["markov_rate"] is None
        assert out["rate_bounds"] == []
        assert max(abs(v) for v in out["finite_n"]["a_row"]) <= 1e-12


class TestOracleEndpoint:
    def test_exact_error_value(self, client):
        body = {"model": {"type": "iid", "k": 1, "q": 2, "probs": [0.5, 0.5]}, "p": 0.6, "n": 3}
        out = client.post("/v1/oracle", json=body).json()
        assert out["exact_error"] == pytest.approx(0.488, abs=1e-12)

    def test_work_cap_maps_to_403(self, client):
        body = {"model": GENERIC_MODEL, "p": 0.5, "n": 12, "oracle_outcomes": 100}
        r = client.post("/v1/oracle", json=body)
        assert r.status_code == 403
        assert r.json()["category"] == "work_cap"
