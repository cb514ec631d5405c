import pathlib
import sys

import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))
from freqsynth import create_app
from freqsynth.config import ScenarioConfig

HEADER = "t,f_hz,g,l,p,u,w,phase"


def _csv(f_values, tau=1.0):
    rows = [f"{k * tau},{f},0,0,0,0,4.8,none" for k, f in enumerate(f_values)]
    return "\n".join([HEADER, *rows]) + "\n"


@pytest.fixture()
def client():
    app = create_app(ScenarioConfig())
    app.config.update({"TESTING": True})
    with app.test_client() as c:
        yield c


def test_health(client):
    res = client.get("/health")
    assert res.status_code == 200
    assert res.get_json()["status"] == "ok"


def test_check_passing_trace(client):
    body = _csv([50.0] * 3 + [49.4] * 10 + [49.9] * 20)
    res = client.post("/api/check?mode=bi&loss_mw=1800", data=body, content_type="text/csv")
    assert res.status_code == 200
    data = res.get_json()
    assert data["passed"] is True
    assert data["requirements"]["psi"]["holds"] is True
    assert data["min_f_hz"] == pytest.approx(49.4)
    assert data["samples"] == 33
    assert data["mode"] == "bi"


def test_check_reports_first_violation(client):
    body = _csv([50.0] * 4 + [48.9] * 5 + [49.9] * 5)
    res = client.post("/api/check?loss_mw=2000", data=body, content_type="text/csv")
    data = res.get_json()
    assert data["passed"] is False
    assert data["requirements"]["psi1"]["holds"] is False
    assert data["requirements"]["psi1"]["first_violation_s"] == pytest.approx(4.0)


def test_check_mode_changes_intervals(client):
    # 49.6 Hz is inside the unidirectional I1 but not the bidirectional one
    body = _csv([50.0, 49.6, 49.8, 49.8])
    uni = client.post("/api/check?mode=uni", data=body, content_type="text/csv").get_json()
    bi = client.post("/api/check?mode=bi", data=body, content_type="text/csv").get_json()
    assert uni["two_stage"]["reach_i1"]["holds"] is True
    assert bi["two_stage"]["reach_i1"]["holds"] is True
    assert uni["two_stage"]["reach_i2"]["holds"] is True
    assert bi["two_stage"]["reach_i2"]["holds"] is False


@pytest.mark.parametrize(
    "query,body",
    [
        ("mode=tri", _csv([50.0])),
        ("loss_mw=lots", _csv([50.0])),
        ("", ""),
        ("", "a,b\n1,2\n"),
        ("", HEADER + "\n"),
    ],
)
def test_check_rejects_bad_requests(client, query, body):
    res = client.post(f"/api/check?{query}", data=body, content_type="text/csv")
    assert res.status_code == 400
    assert "error" in res.get_json()


def test_steady_state(client):
    res = client.get("/api/steady-state?mode=uni&u=0")
    assert res.status_code == 200
    data = res.get_json()
    assert data["f_hz"] == pytest.approx(49.2)
    assert data["state"]["g"] == pytest.approx(4.0)

    full = client.get("/api/steady-state?mode=bi&u=1").get_json()
    assert full["f_hz"] == pytest.approx(50.4)

    none = client.get("/api/steady-state?u=0.5&loss_mw=0").get_json()
    assert none["w"] == 0.0


@pytest.mark.parametrize("query", ["u=2", "u=-0.1", "loss_mw=-5", "mode=x", "u=abc"])
def test_steady_state_rejects_bad_arguments(client, query):
    res = client.get(f"/api/steady-state?{query}")
    assert res.status_code == 400


def test_app_falls_back_to_defaults_on_bad_config(monkeypatch, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario]\nmode = 'tri'\n")
    monkeypatch.setenv("FREQSYNTH_CONFIG", str(bad))
    app = create_app()
    assert app.config["SCENARIO"].mode == "bi"


def test_app_reads_config_from_environment(monkeypatch, tmp_path):
    good = tmp_path / "uni.toml"
    good.write_text("[scenario]\nmode = 'uni'\nloss_mw = 1500\n")
    monkeypatch.setenv("FREQSYNTH_CONFIG", str(good))
    app = create_app()
    with app.test_client() as c:
        data = c.get("/api/steady-state").get_json()
    assert data["mode"] == "uni"
    assert data["loss_mw"] == 1500.0
