"""Phase supervisor composing the two reach controllers, and robustness runs.

Phases:

* ``none``: the loss has not yet pushed ``f`` out of I1, EVs are idle.
* ``c1``: ``f`` is outside I1, the I1 controller drives the fleet.
* ``c2``: ``f`` is in I1 but not in I2, the I2 controller drives the fleet.
* ``fixed``: ``f`` is in I2, the last I2 command is held.
"""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .abstraction import OUTSIDE, growth_matrix, post_rect, rect_within, state_to_cell
from .errors import ContractViolation, GuaranteeViolation
from .grid_model import GridModel, StateVec, Trace, step_loss
from .spec_monitor import SpecConfig, check_two_stage
from .synthesis import HOLD, NO_INPUT, Controller

logger = logging.getLogger(__name__)

_HZ_TOL = 1e-9

# fraction of I2's width kept between the held steady state and either edge
DEFAULT_HOLD_MARGIN = 0.5


class Phase(str, enum.Enum):
    NONE = "none"
    C1 = "c1"
    C2 = "c2"
    FIXED = "fixed"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SupervisorState:
    phase: Phase = Phase.NONE
    held_u: float = 0.0
    last_u: float = 0.0
    # last command issued by the I2 controller, None until it has run
    last_c2_u: Optional[float] = None
    engaged: bool = False
    keeping: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.held_u <= 1.0):
            raise ContractViolation(f"held participation must lie in [0, 1] (got {self.held_u!r})")


KeepCheck = Callable[[Controller, int, float], bool]


def _inside(f_hz: float, interval: Tuple[float, float]) -> bool:
    return interval[0] - _HZ_TOL <= f_hz <= interval[1] + _HZ_TOL


def supervise(
    s: SupervisorState,
    x: StateVec,
    c1: Controller,
    c2: Controller,
    cfg: SpecConfig,
    *,
    hold_band: Tuple[float, float] = (0.0, 1.0),
    keep: Optional[KeepCheck] = None,
) -> Tuple[SupervisorState, float]:
    """One supervisor step: the next state and the participation to apply.

    Entering ``fixed`` holds the last I2 command (the last command of any
    phase if I2 never ran), clamped into ``hold_band``. When ``f`` drops out
    of I2 again, the I2 controller keeps the held value for as long as
    ``keep(c2, cell, held)`` confirms it stays inside its winning set, then
    falls back to its own table.
    """
    f_hz = x.f + cfg.f_nom
    in_i1 = _inside(f_hz, cfg.i1)
    if not s.engaged and in_i1:
        return replace(s, phase=Phase.NONE), 0.0

    if in_i1 and _inside(f_hz, cfg.i2):
        if s.phase is Phase.FIXED:
            held = s.held_u
        else:
            source = s.last_c2_u if s.last_c2_u is not None else s.last_u
            held = float(min(max(source, hold_band[0]), hold_band[1]))
        return replace(s, phase=Phase.FIXED, held_u=held, last_u=held, engaged=True, keeping=False), held

    phase, active = (Phase.C1, c1) if not in_i1 else (Phase.C2, c2)
    if active.grid is None:
        raise ContractViolation(f"controller {active.name or phase.value} has no grid attached")
    cell = state_to_cell(np.asarray(x), active.grid)
    if cell == OUTSIDE or not active.contains(cell):
        where = "outside the working region" if cell == OUTSIDE else f"cell {cell}"
        raise GuaranteeViolation(
            f"state {tuple(round(v, 4) for v in x)} is {where}, not in the winning set of {phase.value}",
            cell=cell,
            controller=phase.value,
        )

    if phase is Phase.C2 and keep is not None:
        resumed = s.phase is Phase.FIXED or (s.phase is Phase.C2 and s.keeping)
        if resumed and keep(c2, cell, s.held_u):
            u = s.held_u
            return replace(s, phase=phase, last_u=u, last_c2_u=u, engaged=True, keeping=True), u

    idx = active.input_index(cell)
    if idx == HOLD:
        u = s.last_u
    elif idx == NO_INPUT:
        raise GuaranteeViolation(f"no input recorded for winning cell {cell} of {phase.value}", cell=cell, controller=phase.value)
    else:
        u = float(active.input_levels[idx])
    last_c2 = u if phase is Phase.C2 else s.last_c2_u
    return replace(s, phase=phase, last_u=u, last_c2_u=last_c2, engaged=True, keeping=False), u


def perturb_participation(u_cmd, delta_max: float, rng: np.random.Generator):
    """``clamp(u_cmd * (1 + delta), 0, 1)`` with ``delta ~ U[-delta_max, delta_max]``.

    Arrays draw one ``delta`` per element.
    """
    if not (0.0 <= delta_max < 1.0):
        raise ContractViolation(f"delta_max must lie in [0, 1) (got {delta_max!r})")
    if delta_max == 0.0:
        return u_cmd
    u = np.asarray(u_cmd, dtype=float)
    delta = rng.uniform(-delta_max, delta_max, size=u.shape)
    out = np.clip(u * (1.0 + delta), 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def hold_band(model: GridModel, cfg: SpecConfig, w: float, margin: float = DEFAULT_HOLD_MARGIN) -> Tuple[float, float]:
    """Participation range whose steady state sits ``margin`` of I2's width inside I2.

    ``margin`` 0.5 collapses the band to the participation centring the steady
    state in I2. Levels are clipped to [0, 1]; without EV authority the band
    is left open.
    """
    if not (0.0 <= margin <= 0.5):
        raise ContractViolation(f"hold margin must lie in [0, 0.5] (got {margin!r})")
    f0 = model.steady_state(0.0, w).f
    slope = model.steady_state(1.0, w).f - f0
    if slope <= _HZ_TOL:
        return (0.0, 1.0)
    lo, hi = cfg.deviation(cfg.i2)
    width = hi - lo
    u_lo = (lo + margin * width - f0) / slope
    u_hi = (hi - margin * width - f0) / slope
    return (float(np.clip(u_lo, 0.0, 1.0)), float(np.clip(u_hi, 0.0, 1.0)))


def keeps_winning(model: GridModel) -> KeepCheck:
    """``keep`` check for :func:`supervise`: does holding ``u`` from ``cell`` stay winning?"""
    L = growth_matrix(model.matrices.A)

    def check(controller: Controller, cell: int, u: float) -> bool:
        grid = controller.grid
        if grid is None:
            return False
        center, radius = post_rect(cell, u, controller.w_range, controller.tau, model, L, grid)
        return rect_within(grid, controller.winning.mask, center, radius)

    return check


class MultiPhaseController:
    """Callable for ``GridModel.simulate``; the current phase is exposed as ``phase``."""

    def __init__(
        self,
        c1: Controller,
        c2: Controller,
        cfg: SpecConfig,
        *,
        delta_max: float = 0.0,
        seed: Optional[int] = None,
        hold_band: Tuple[float, float] = (0.0, 1.0),
        keep: Optional[KeepCheck] = None,
    ) -> None:
        self.c1 = c1
        self.c2 = c2
        self.cfg = cfg
        self.delta_max = float(delta_max)
        self.rng = np.random.default_rng(seed)
        self.hold_band = (float(hold_band[0]), float(hold_band[1]))
        self.keep = keep
        self.state = SupervisorState()

    @property
    def phase(self) -> str:
        return self.state.phase.value

    def __call__(self, t: float, x: StateVec) -> float:
        self.state, u = supervise(
            self.state, x, self.c1, self.c2, self.cfg, hold_band=self.hold_band, keep=self.keep
        )
        if self.delta_max > 0.0:
            u = perturb_participation(u, self.delta_max, self.rng)
        return u


def run_multiphase(
    model: GridModel,
    c1: Controller,
    c2: Controller,
    cfg: SpecConfig,
    w: float,
    horizon: float,
    *,
    x0: Optional[Sequence[float]] = None,
    delta_max: float = 0.0,
    seed: Optional[int] = None,
    hold_margin: float = DEFAULT_HOLD_MARGIN,
) -> Trace:
    """Closed loop under the supervisor, sampled at the controllers' tau."""
    if abs(c1.tau - c2.tau) > 1e-12:
        raise ContractViolation(f"controllers use different sampling periods ({c1.tau} vs {c2.tau})")
    controller = MultiPhaseController(
        c1,
        c2,
        cfg,
        delta_max=delta_max,
        seed=seed,
        hold_band=hold_band(model, cfg, w, hold_margin),
        keep=keeps_winning(model),
    )
    start = x0 if x0 is not None else np.zeros(4)
    return model.simulate(start, controller, step_loss(w), horizon, c1.tau)


def settle_time(trace: Trace, interval: Tuple[float, float]) -> Optional[float]:
    """Time from which ``f`` stays inside ``interval`` to the end of the trace."""
    inside = (trace.f_hz >= interval[0] - _HZ_TOL) & (trace.f_hz <= interval[1] + _HZ_TOL)
    if not inside.size or not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    return float(trace.t[outside[-1] + 1]) if outside.size else float(trace.t[0])


def first_entry_time(trace: Trace, interval: Tuple[float, float], after: float = 0.0) -> Optional[float]:
    inside = (trace.f_hz >= interval[0] - _HZ_TOL) & (trace.f_hz <= interval[1] + _HZ_TOL)
    # only count entries after the plant has left the interval once
    left = np.flatnonzero(~inside & (trace.t >= after))
    if not left.size:
        return None
    hits = np.flatnonzero(inside[left[0]:])
    return float(trace.t[left[0] + hits[0]]) if hits.size else None


@dataclass(frozen=True)
class RunSummary:
    seed: int
    delta_max: float
    passed: bool
    first_i2_entry_s: Optional[float]
    settle_i2_s: Optional[float]
    min_f_hz: float
    error: str = ""


@dataclass(frozen=True)
class DeltaSummary:
    delta_max: float
    runs: int
    pass_rate: float
    worst_settle_s: Optional[float]


def _one_run(model, c1, c2, cfg, w, horizon, x0, delta_max, seed, hold_margin) -> RunSummary:
    try:
        trace = run_multiphase(
            model, c1, c2, cfg, w, horizon, x0=x0, delta_max=delta_max, seed=seed, hold_margin=hold_margin
        )
        error = ""
    except GuaranteeViolation as exc:
        trace = exc.trace
        error = str(exc)
    if trace is None or len(trace) == 0:
        return RunSummary(seed, delta_max, False, None, None, float("nan"), error)
    passed = not error and check_two_stage(trace, cfg).psi.holds
    return RunSummary(
        seed=seed,
        delta_max=delta_max,
        passed=bool(passed),
        first_i2_entry_s=first_entry_time(trace, cfg.i2),
        settle_i2_s=settle_time(trace, cfg.i2),
        min_f_hz=float(trace.f_hz.min()),
        error=error,
    )


def run_robustness(
    model: GridModel,
    c1: Controller,
    c2: Controller,
    cfg: SpecConfig,
    w: float,
    horizon: float,
    *,
    seeds: Sequence[int],
    deltas: Sequence[float] = (0.1,),
    x0: Optional[Sequence[float]] = None,
    workers: Optional[int] = None,
    hold_margin: float = DEFAULT_HOLD_MARGIN,
) -> List[RunSummary]:
    """One closed-loop run per (delta, seed) pair, fanned out over a thread pool."""
    if workers is None:
        try:
            workers = int(os.environ.get("FREQSYNTH_THREADS", str(os.cpu_count() or 1)))
        except Exception:
            workers = 1
    model.discretize(c1.tau)
    jobs = [(float(d), int(s)) for d in deltas for s in seeds]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        futures = [ex.submit(_one_run, model, c1, c2, cfg, w, horizon, x0, d, s, hold_margin) for d, s in jobs]
        rows = [f.result() for f in futures]
    passed = sum(1 for r in rows if r.passed)
    logger.info(
        "robustness_done runs=%d passed=%d",
        len(rows),
        passed,
        extra={"runs": len(rows), "passed": passed},
    )
    return rows


def summarize_by_delta(rows: Sequence[RunSummary]) -> List[DeltaSummary]:
    grouped: Dict[float, List[RunSummary]] = {}
    for r in rows:
        grouped.setdefault(r.delta_max, []).append(r)
    out = []
    for delta in sorted(grouped):
        group = grouped[delta]
        settles = [r.settle_i2_s for r in group if r.settle_i2_s is not None]
        out.append(
            DeltaSummary(
                delta_max=delta,
                runs=len(group),
                pass_rate=sum(1 for r in group if r.passed) / len(group),
                worst_settle_s=max(settles) if settles else None,
            )
        )
    return out


__all__ = [
    "DEFAULT_HOLD_MARGIN",
    "DeltaSummary",
    "MultiPhaseController",
    "Phase",
    "RunSummary",
    "SupervisorState",
    "first_entry_time",
    "hold_band",
    "keeps_winning",
    "perturb_participation",
    "run_multiphase",
    "run_robustness",
    "settle_time",
    "summarize_by_delta",
    "supervise",
]
