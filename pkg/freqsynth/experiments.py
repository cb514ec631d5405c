"""Scenario-level building blocks shared by the command line and the HTTP app."""

from __future__ import annotations

import logging
import time
from dataclasses import replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .abstraction import SymbolicModel, build_symbolic_model, cells_within
from .config import ScenarioConfig, env_int
from .ev_baseline import SWEEP_TAU_S, run_baseline
from .grid_model import F, GridModel, Trace, step_loss, zero_controller
from .spec_monitor import SpecConfig, check_requirements, check_two_stage
from .synthesis import CellSet, Controller, solve_reach_avoid

logger = logging.getLogger(__name__)

TARGETS = ("i1", "i2")


def reach_sets(model: SymbolicModel, spec: SpecConfig, target: str) -> Tuple[CellSet, CellSet]:
    """Target cells inside I1 or I2 and avoid cells reaching below the containment floor."""
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS} (got {target!r})")
    grid = model.grid
    interval = spec.i1 if target == "i1" else spec.i2
    lo, hi = spec.deviation(interval)
    tmask = cells_within(grid, F, lo, hi)
    safe = cells_within(grid, F, spec.c_zone - spec.f_nom, np.inf)
    return CellSet(tmask), CellSet(~safe)


def build_model(cfg: ScenarioConfig, mode: Optional[str] = None) -> SymbolicModel:
    mode = mode or cfg.mode
    started = time.perf_counter()
    model = build_symbolic_model(
        cfg.abstraction.grid(),
        cfg.abstraction.inputs(),
        cfg.w_range(mode),
        cfg.abstraction.tau,
        GridModel(cfg.params(mode)),
        memory_budget_mb=env_int("FREQSYNTH_MEMORY_MB", 4096),
        config_hash=cfg.model_hash(mode),
    )
    logger.info(
        "model_ready mode=%s seconds=%.1f",
        mode,
        time.perf_counter() - started,
        extra={"mode": mode},
    )
    return model


def synthesize(model: SymbolicModel, cfg: ScenarioConfig, target: str, mode: Optional[str] = None) -> Controller:
    mode = mode or cfg.mode
    tset, avoid = reach_sets(model, cfg.spec(mode), target)
    ctrl = solve_reach_avoid(model, tset, avoid, rule=cfg.abstraction.rule, name=target)
    # stored controllers carry their own hash, not the model hash
    return replace(ctrl, config_hash=cfg.controller_hash(mode, target))


def baseline_trace(cfg: ScenarioConfig, mode: Optional[str] = None, *, tau: float = SWEEP_TAU_S) -> Trace:
    mode = mode or cfg.mode
    return run_baseline(cfg.params(mode), cfg.w(mode), cfg.horizon_s, tau, x0=cfg.x0)


def no_ev_trace(cfg: ScenarioConfig, *, tau: float = SWEEP_TAU_S) -> Trace:
    model = GridModel(cfg.params("uni").without_ev())
    return model.simulate(cfg.x0, zero_controller, step_loss(cfg.w("uni")), cfg.horizon_s, tau)


def verdict(trace: Trace, loss_mw: float, spec: SpecConfig, **extra: Any) -> Dict[str, Any]:
    """Both reports for ``trace``; ``passed`` is the two-stage verdict."""
    req = check_requirements(trace, loss_mw, spec)
    two = check_two_stage(trace, spec)
    payload: Dict[str, Any] = {
        "requirements": req.to_dict(),
        "two_stage": two.to_dict(),
        "passed": two.psi.holds,
        "loss_mw": float(loss_mw),
        "min_f_hz": float(trace.f_hz.min()),
        "final_f_hz": float(trace.f_hz[-1]),
        "spec": spec.as_dict(),
    }
    payload.update(extra)
    return payload


__all__ = [
    "TARGETS",
    "baseline_trace",
    "build_model",
    "no_ev_trace",
    "reach_sets",
    "synthesize",
    "verdict",
]
