"""Reference EV aggregation controller: deadband, droop, first-order lag, saturation.

The block operates on the Hz deviation directly. A frequency deficit produces a
positive participation demand through the ``-1/R_ev`` droop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation
from .grid_model import GridModel, GridParams, StateVec, Trace, step_loss

logger = logging.getLogger(__name__)

DEFAULT_HALF_WIDTHS: Tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35)
SWEEP_HORIZON_S = 200.0
SWEEP_TAU_S = 0.01
SETTLE_WINDOW_S = 10.0
SETTLE_PTP_HZ = 1e-4


class BaselineState(NamedTuple):
    lag: float = 0.0


def deadband(df_hz: float, half_width: float) -> float:
    if half_width < 0:
        raise ContractViolation(f"deadband half width must be non-negative (got {half_width!r})")
    if abs(df_hz) <= half_width:
        return 0.0
    return df_hz - math.copysign(half_width, df_hz)


def baseline_step(
    s: BaselineState, df_hz: float, params: GridParams, dt: float
) -> Tuple[BaselineState, float]:
    """Advance the lag block by ``dt`` and return the saturated participation."""
    if not (dt > 0):
        raise ContractViolation(f"dt must be positive (got {dt!r})")
    drive = -deadband(df_hz, params.deadband_hz) / params.r_ev
    target = drive / params.d
    decay = math.exp(-params.d * dt / params.t_ev)
    lag = target + (s.lag - target) * decay
    return BaselineState(lag=lag), min(max(lag, 0.0), 1.0)


class BaselineController:
    """Sampled-data wrapper of :func:`baseline_step` for ``GridModel.simulate``."""

    phase = "none"

    def __init__(self, params: GridParams, dt: float) -> None:
        self.params = params
        self.dt = dt
        self.state = BaselineState()

    def reset(self) -> None:
        self.state = BaselineState()

    def __call__(self, t: float, x: StateVec) -> float:
        self.state, u = baseline_step(self.state, x.f, self.params, self.dt)
        return u


@dataclass(frozen=True)
class SweepRow:
    half_width_hz: float
    mode: str
    steady_f_hz: float
    settled: bool


def run_baseline(
    params: GridParams,
    w: float,
    horizon: float,
    tau: float,
    x0: Optional[Sequence[float]] = None,
) -> Trace:
    model = GridModel(params)
    controller = BaselineController(params, dt=tau)
    start = x0 if x0 is not None else np.zeros(4)
    return model.simulate(start, controller, step_loss(w), horizon, tau)


def is_settled(trace: Trace, window_s: float = SETTLE_WINDOW_S, ptp_hz: float = SETTLE_PTP_HZ) -> bool:
    tail = trace.f_hz[trace.t >= trace.t[-1] - window_s - 1e-9]
    return bool(np.ptp(tail) <= ptp_hz)


def sweep_deadband(
    half_widths: Sequence[float],
    mode: str,
    scenario,
    *,
    horizon: float = SWEEP_HORIZON_S,
    tau: float = SWEEP_TAU_S,
) -> List[SweepRow]:
    """Steady-state frequency of the baseline loop for each deadband half width.

    ``scenario`` supplies ``params(mode)`` and ``w(mode)``.
    """
    base = scenario.params(mode)
    w = scenario.w(mode)
    rows: List[SweepRow] = []
    for hw in half_widths:
        params = replace(base, deadband_hz=float(hw))
        trace = run_baseline(params, w, horizon, tau)
        settled = is_settled(trace)
        row = SweepRow(
            half_width_hz=float(hw),
            mode=mode,
            steady_f_hz=float(trace.f_hz[-1]),
            settled=settled,
        )
        if not settled:
            logger.warning(
                "sweep_unsettled mode=%s half_width=%.3f",
                mode,
                hw,
                extra={"mode": mode, "half_width_hz": float(hw)},
            )
        rows.append(row)
    logger.info(
        "sweep_done mode=%s rows=%d",
        mode,
        len(rows),
        extra={"mode": mode, "rows": len(rows)},
    )
    return rows


@dataclass(frozen=True, eq=False)
class ChargingComparison:
    strategy: str
    trace: Trace
    min_f_hz: float
    final_f_hz: float


def compare_charging_modes(
    scenario,
    *,
    horizon: Optional[float] = None,
    tau: float = SWEEP_TAU_S,
) -> List[ChargingComparison]:
    """Baseline response with no EVs, unidirectional and bidirectional charging."""
    horizon = float(horizon if horizon is not None else scenario.horizon_s)
    out: List[ChargingComparison] = []
    cases = (
        ("no_ev", scenario.params("uni").without_ev(), scenario.w("uni")),
        ("uni", scenario.params("uni"), scenario.w("uni")),
        ("bi", scenario.params("bi"), scenario.w("bi")),
    )
    for name, params, w in cases:
        trace = run_baseline(params, w, horizon, tau)
        out.append(
            ChargingComparison(
                strategy=name,
                trace=trace,
                min_f_hz=float(trace.f_hz.min()),
                final_f_hz=float(trace.f_hz[-1]),
            )
        )
    logger.info(
        "compare_done %s",
        " ".join(f"{c.strategy}_min={c.min_f_hz:.3f}" for c in out),
    )
    return out


__all__ = [
    "DEFAULT_HALF_WIDTHS",
    "BaselineController",
    "BaselineState",
    "ChargingComparison",
    "SweepRow",
    "baseline_step",
    "compare_charging_modes",
    "deadband",
    "is_settled",
    "run_baseline",
    "sweep_deadband",
]
