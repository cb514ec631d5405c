import pathlib
import sys

import numpy as np

sys.path.append(str(pathlib.Path(__file__).resolve().parents[2]))

from freqsynth import create_app
from freqsynth.abstraction import InputGrid, build_symbolic_model
from freqsynth.spec_monitor import SpecConfig, check_requirements
from freqsynth.synthesis import CellSet, solve_reach, solve_safety


def test_logging_abstraction_counts_emitted(caplog, coarse_grid, bi_model):
    caplog.set_level("INFO")
    build_symbolic_model(coarse_grid, InputGrid(levels=np.array([0.0, 1.0])), (4.56, 4.8), 0.25, bi_model, workers=1)
    messages = [r.getMessage() for r in caplog.records]
    assert any(m.startswith(f"abstraction_built cells={coarse_grid.n_cells} inputs=2 ood_pairs=") for m in messages)


def test_logging_synthesis_counts_emitted(caplog, toy_model):
    caplog.set_level("DEBUG")
    solve_reach(toy_model, CellSet.from_indices(3, [2]), name="toy")
    solve_safety(toy_model, CellSet.full(3), name="stay")
    messages = [r.getMessage() for r in caplog.records]
    assert any(m.startswith("reach_iteration it=1 new=1") for m in messages)
    assert "synthesis_done kind=reach name=toy iterations=2 winning=3 cells=3" in messages
    assert any(m.startswith("synthesis_done kind=safety name=stay") for m in messages)


def test_logging_requirement_verdicts_emitted(caplog, make_trace):
    caplog.set_level("INFO")
    check_requirements(make_trace([50.0, 49.0]), 1800.0, SpecConfig())
    messages = [r.getMessage() for r in caplog.records]
    assert "requirements_checked loss_mw=1800.0 psi1=False psi2=True psi3=False" in messages


def test_logging_api_check_emitted(caplog, make_trace):
    app = create_app()
    app.config.update({"TESTING": True})
    body = "t,f_hz,g,l,p,u,w,phase\n0.0,50.0,0,0,0,0,0,none\n0.25,50.0,0,0,0,0,0,none\n"
    with app.test_client() as client:
        caplog.set_level("INFO")
        res = client.post("/api/check?mode=bi", data=body, content_type="text/csv")
        assert res.status_code == 200
    messages = [r.getMessage() for r in caplog.records]
    assert any(m.startswith("api_check mode=bi samples=2 passed=True") for m in messages)
