"""Linear frequency-response model of the GB grid with aggregated EV support.

The whole state vector is scaled by the nominal frequency, so ``f`` is a
deviation in Hz and the governor (``g``), lead-lag (``l``) and turbine
(``p``) states are in the same Hz-scaled units. States are stored in the
order ``[f, g, l, p]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Callable, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .errors import ContractViolation, GuaranteeViolation, NumericalError, ParameterError

logger = logging.getLogger(__name__)

F, G, L, P = 0, 1, 2, 3
STATE_NAMES = ("f", "g", "l", "p")
N_STATES = 4

MODES = ("uni", "bi")
_MODE_DEFAULTS: Dict[str, Dict[str, float]] = {
    "uni": {"k_ev": 3.6, "p_av": 0.028},
    "bi": {"k_ev": 7.2, "p_av": 0.056},
}

# 2000 MW maps onto w = 4.8 on this base
DEFAULT_S_BASE_MW = 2000.0 * 50.0 / 4.8

_U_TOL = 1e-12


@dataclass(frozen=True)
class GridParams:
    """Physical constants of the plant and the EV aggregate.

    ``k_ev`` is the Hz-scaled power of the whole fleet at full participation.
    ``p_av``, ``n_ev`` and ``s_base`` are carried for report metadata and the
    MW to Hz-scaled loss conversion only.
    """

    r_eq_inv: float = -5.0
    t_g: float = 2.5
    t_t: float = 0.5
    t_1: float = 2.0
    t_2: float = 12.0
    d: float = 1.0
    h: float = 4.0
    k_ev: float = 3.6
    f_nom: float = 50.0
    t_ev: float = 0.035
    r_ev: float = 0.5
    deadband_hz: float = 0.15
    p_av: float = 0.028
    n_ev: int = 25_000
    s_base: float = DEFAULT_S_BASE_MW

    def __post_init__(self) -> None:
        for name in ("t_g", "t_t", "t_1", "t_2", "t_ev", "h"):
            value = getattr(self, name)
            if not (value > 0):
                raise ParameterError(f"{name} must be positive (got {value!r})")
        if not (self.d > 0):
            raise ParameterError(f"d must be positive (got {self.d!r})")
        if not (self.r_ev > 0):
            raise ParameterError(f"r_ev must be positive (got {self.r_ev!r})")
        if self.n_ev < 0:
            raise ParameterError(f"n_ev must be non-negative (got {self.n_ev!r})")
        if self.deadband_hz < 0:
            raise ParameterError(f"deadband_hz must be non-negative (got {self.deadband_hz!r})")
        if self.k_ev < 0:
            raise ParameterError(f"k_ev must be non-negative (got {self.k_ev!r})")
        if not (self.f_nom > 0):
            raise ParameterError(f"f_nom must be positive (got {self.f_nom!r})")
        if not (self.s_base > 0):
            raise ParameterError(f"s_base must be positive (got {self.s_base!r})")
        values = asdict(self).values()
        if not all(math.isfinite(float(v)) for v in values):
            raise ParameterError("grid parameters must be finite")

    @classmethod
    def for_mode(cls, mode: str, **overrides: Any) -> "GridParams":
        """Table values with the per-vehicle power and gain of ``mode``."""
        if mode not in _MODE_DEFAULTS:
            raise ParameterError(f"unknown charging mode {mode!r}; expected one of {MODES}")
        values: Dict[str, Any] = dict(_MODE_DEFAULTS[mode])
        values.update(overrides)
        return cls(**values)

    def without_ev(self) -> "GridParams":
        return replace(self, k_ev=0.0)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


class StateVec(NamedTuple):
    """Deviation state ``[f, g, l, p]`` (Hz-scaled)."""

    f: float = 0.0
    g: float = 0.0
    l: float = 0.0
    p: float = 0.0

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "StateVec":
        arr = np.asarray(x, dtype=float).reshape(N_STATES)
        return cls(*(float(v) for v in arr))

    def absolute_hz(self, f_nom: float = 50.0) -> float:
        return self.f + f_nom


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    A: np.ndarray
    B: np.ndarray
    Bw: np.ndarray


def build_matrices(params: GridParams) -> SystemMatrices:
    """Continuous-time matrices of ``x' = A x + B u + Bw w``."""
    p = params
    A = np.zeros((N_STATES, N_STATES))
    A[F, F] = -p.d / (2.0 * p.h)
    A[F, P] = 1.0 / (2.0 * p.h)
    A[G, F] = p.r_eq_inv / p.t_g
    A[G, G] = -1.0 / p.t_g
    A[L, F] = p.t_1 * p.r_eq_inv / (p.t_2 * p.t_g)
    A[L, G] = (p.t_g - p.t_1) / (p.t_g * p.t_2)
    A[L, L] = -1.0 / p.t_2
    A[P, L] = 1.0 / p.t_t
    A[P, P] = -1.0 / p.t_t

    B = np.zeros(N_STATES)
    B[F] = p.k_ev / (2.0 * p.h)
    Bw = np.zeros(N_STATES)
    Bw[F] = -1.0 / (2.0 * p.h)
    for arr in (A, B, Bw):
        arr.setflags(write=False)
    return SystemMatrices(A=A, B=B, Bw=Bw)


def loss_to_w(loss_mw: float, params: GridParams) -> float:
    """Convert an infeed loss in MW to the Hz-scaled disturbance ``w``."""
    return float(loss_mw) / params.s_base * params.f_nom


def step_loss(w0: float, t0: float = 0.0) -> Callable[[float], float]:
    """Loss profile that jumps from 0 to ``w0`` at ``t0``."""

    def profile(t: float) -> float:
        return w0 if t >= t0 - 1e-12 else 0.0

    return profile


@dataclass(frozen=True, eq=False)
class Trace:
    """Sampled closed-loop run; sample ``k`` holds the input applied on
    ``[t_k, t_k + tau)``."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    phase: Tuple[str, ...]
    tau: float
    f_nom: float = 50.0

    def __post_init__(self) -> None:
        n = len(self.t)
        if self.x.shape != (n, N_STATES) or len(self.u) != n or len(self.w) != n or len(self.phase) != n:
            raise ContractViolation("trace columns must all have the same length")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def f_hz(self) -> np.ndarray:
        return self.x[:, F] + self.f_nom

    def state(self, k: int) -> StateVec:
        return StateVec.from_array(self.x[k])


Controller = Callable[[float, StateVec], float]


class GridModel:
    """Plant wrapper holding the matrices and a per-``tau`` discretisation cache."""

    def __init__(self, params: GridParams) -> None:
        self.params = params
        self.matrices = build_matrices(params)
        self._disc: Dict[float, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def discretize(self, tau: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(Phi, Gamma_u, Gamma_w)`` of the exact zero-order-hold step."""
        if not (tau > 0):
            raise ParameterError(f"tau must be positive (got {tau!r})")
        key = float(tau)
        cached = self._disc.get(key)
        if cached is not None:
            return cached
        m = self.matrices
        n = N_STATES
        # M = [A  B  Bw]
        #     [0  0  0 ]
        #     [0  0  0 ]
        M = np.zeros((n + 2, n + 2))
        M[:n, :n] = m.A
        M[:n, n] = m.B
        M[:n, n + 1] = m.Bw
        E = expm(M * key)
        result = (E[:n, :n].copy(), E[:n, n].copy(), E[:n, n + 1].copy())
        for arr in result:
            arr.setflags(write=False)
        self._disc[key] = result
        return result

    def _deriv(self, x: np.ndarray, u: float, w: float) -> np.ndarray:
        m = self.matrices
        return m.A @ x + m.B * u + m.Bw * w

    def step(self, x: Sequence[float], u: float, w: float, tau: float, method: str = "exact") -> StateVec:
        """State after ``tau`` seconds with ``u`` and ``w`` held constant."""
        _check_participation(u)
        xv = np.asarray(x, dtype=float).reshape(N_STATES)
        if method == "exact":
            phi, gam_u, gam_w = self.discretize(tau)
            return StateVec.from_array(phi @ xv + gam_u * u + gam_w * w)
        if method == "rk4":
            if not (tau > 0):
                raise ParameterError(f"tau must be positive (got {tau!r})")
            n_sub = max(10, int(math.ceil(tau / 0.05)))
            h = tau / n_sub
            for _ in range(n_sub):
                k1 = self._deriv(xv, u, w)
                k2 = self._deriv(xv + 0.5 * h * k1, u, w)
                k3 = self._deriv(xv + 0.5 * h * k2, u, w)
                k4 = self._deriv(xv + h * k3, u, w)
                xv = xv + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            return StateVec.from_array(xv)
        raise ParameterError(f"unknown integration method {method!r}")

    def step_batch(self, X: np.ndarray, u, w, tau: float) -> np.ndarray:
        """Exact step for a ``(K, 4)`` batch; ``u`` and ``w`` broadcast."""
        phi, gam_u, gam_w = self.discretize(tau)
        X = np.asarray(X, dtype=float)
        u_arr = np.asarray(u, dtype=float)
        w_arr = np.asarray(w, dtype=float)
        return X @ phi.T + u_arr[..., None] * gam_u + w_arr[..., None] * gam_w

    def steady_state(self, u: float, w: float) -> StateVec:
        m = self.matrices
        rhs = -(m.B * u + m.Bw * w)
        try:
            x = np.linalg.solve(m.A, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"system matrix is singular: {exc}") from exc
        return StateVec.from_array(x)

    def simulate(
        self,
        x0: Sequence[float],
        controller: Controller,
        w_profile: Callable[[float], float],
        horizon: float,
        tau: float,
    ) -> Trace:
        """Sampled-data closed loop over ``floor(horizon / tau) + 1`` samples.

        The controller may expose a ``phase`` attribute; it is read after each
        call and stored with the sample.
        """
        if not (tau > 0):
            raise ParameterError(f"tau must be positive (got {tau!r})")
        if horizon < tau:
            raise ContractViolation(f"horizon {horizon} shorter than tau {tau}")
        n = int(math.floor(horizon / tau + 1e-9))
        phi, gam_u, gam_w = self.discretize(tau)

        xs = np.empty((n + 1, N_STATES))
        us = np.empty(n + 1)
        ws = np.empty(n + 1)
        phases: List[str] = []
        x = np.asarray(x0, dtype=float).reshape(N_STATES).copy()

        for k in range(n + 1):
            t = k * tau
            w = float(w_profile(t))
            try:
                u = float(controller(t, StateVec.from_array(x)))
            except GuaranteeViolation as exc:
                exc.trace = Trace(
                    t=np.arange(k) * tau,
                    x=xs[:k].copy(),
                    u=us[:k].copy(),
                    w=ws[:k].copy(),
                    phase=tuple(phases),
                    tau=tau,
                    f_nom=self.params.f_nom,
                )
                raise
            if not (-_U_TOL <= u <= 1.0 + _U_TOL) or not math.isfinite(u):
                raise ContractViolation(f"controller returned u={u!r} at t={t:.3f}; expected a value in [0, 1]")
            u = min(max(u, 0.0), 1.0)
            xs[k] = x
            us[k] = u
            ws[k] = w
            phases.append(str(getattr(controller, "phase", "none")))
            if k < n:
                x = phi @ x + gam_u * u + gam_w * w

        return Trace(
            t=np.arange(n + 1) * tau,
            x=xs,
            u=us,
            w=ws,
            phase=tuple(phases),
            tau=tau,
            f_nom=self.params.f_nom,
        )


def _check_participation(u: float) -> None:
    if not (-_U_TOL <= u <= 1.0 + _U_TOL):
        raise ContractViolation(f"participation must lie in [0, 1] (got {u!r})")


def zero_controller(t: float, x: StateVec) -> float:
    return 0.0


__all__ = [
    "F",
    "G",
    "L",
    "P",
    "MODES",
    "GridModel",
    "GridParams",
    "StateVec",
    "SystemMatrices",
    "Trace",
    "build_matrices",
    "loss_to_w",
    "step_loss",
    "zero_controller",
]
