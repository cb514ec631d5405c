"""Finite-trace temporal logic monitor and the grid-code requirements built on it.

Formulas are small trees. ``evaluate`` returns the truth value at every trace
position at once by working backwards over the samples. Next is strong: it is
false at the last sample. Until needs a witness inside the trace.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from .errors import ContractViolation, ParameterError
from .grid_model import Trace

logger = logging.getLogger(__name__)

_HZ_TOL = 1e-9


class Formula:
    """Base class for formulas."""

    def evaluate(self, trace: Trace) -> np.ndarray:
        raise NotImplementedError

    def __and__(self, other: "Formula") -> "Formula":
        return And(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return Or(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)

    def __repr__(self) -> str:
        return str(self)


class TrueF(Formula):
    def evaluate(self, trace: Trace) -> np.ndarray:
        return np.ones(len(trace), dtype=bool)

    def __str__(self) -> str:
        return "true"


class Const(Formula):
    """Position-independent truth value, e.g. a condition on the loss size."""

    def __init__(self, value: bool, label: str = "") -> None:
        self.value = bool(value)
        self.label = label

    def evaluate(self, trace: Trace) -> np.ndarray:
        return np.full(len(trace), self.value, dtype=bool)

    def __str__(self) -> str:
        return self.label or str(self.value).lower()


class Atom(Formula):
    """Sample predicate; ``fn`` maps a trace to one boolean per sample."""

    def __init__(self, name: str, fn: Callable[[Trace], np.ndarray]) -> None:
        self.name = name
        self.fn = fn

    def evaluate(self, trace: Trace) -> np.ndarray:
        out = np.asarray(self.fn(trace), dtype=bool)
        if out.shape != (len(trace),):
            raise ContractViolation(f"atom {self.name!r} returned shape {out.shape}, expected ({len(trace)},)")
        return out

    def __str__(self) -> str:
        return f'"{self.name}"'


class Not(Formula):
    def __init__(self, arg: Formula) -> None:
        self.arg = arg

    def evaluate(self, trace: Trace) -> np.ndarray:
        return ~self.arg.evaluate(trace)

    def __str__(self) -> str:
        return f"!{self.arg}"


class And(Formula):
    def __init__(self, left: Formula, right: Formula) -> None:
        self.left = left
        self.right = right

    def evaluate(self, trace: Trace) -> np.ndarray:
        return self.left.evaluate(trace) & self.right.evaluate(trace)

    def __str__(self) -> str:
        return f"({self.left} & {self.right})"


class Or(Formula):
    def __init__(self, left: Formula, right: Formula) -> None:
        self.left = left
        self.right = right

    def evaluate(self, trace: Trace) -> np.ndarray:
        return self.left.evaluate(trace) | self.right.evaluate(trace)

    def __str__(self) -> str:
        return f"({self.left} | {self.right})"


class Implies(Formula):
    def __init__(self, left: Formula, right: Formula) -> None:
        self.left = left
        self.right = right

    def evaluate(self, trace: Trace) -> np.ndarray:
        return ~self.left.evaluate(trace) | self.right.evaluate(trace)

    def __str__(self) -> str:
        return f"({self.left} -> {self.right})"


class Next(Formula):
    def __init__(self, arg: Formula) -> None:
        self.arg = arg

    def evaluate(self, trace: Trace) -> np.ndarray:
        inner = self.arg.evaluate(trace)
        out = np.zeros_like(inner)
        out[:-1] = inner[1:]
        return out

    def __str__(self) -> str:
        return f"X({self.arg})"


def _next_index(mask: np.ndarray) -> np.ndarray:
    """For each position, the first index at or after it where ``mask`` holds (``n`` if none)."""
    n = mask.size
    idx = np.where(mask, np.arange(n), n)
    return np.minimum.accumulate(idx[::-1])[::-1]


class Until(Formula):
    def __init__(self, left: Formula, right: Formula) -> None:
        self.left = left
        self.right = right

    def evaluate(self, trace: Trace) -> np.ndarray:
        a = self.left.evaluate(trace)
        b = self.right.evaluate(trace)
        witness = _next_index(b)
        breaks = _next_index(~a)
        return (witness < b.size) & (witness <= breaks)

    def __str__(self) -> str:
        return f"({self.left} U {self.right})"


class Eventually(Formula):
    def __init__(self, arg: Formula) -> None:
        self.arg = arg

    def evaluate(self, trace: Trace) -> np.ndarray:
        inner = self.arg.evaluate(trace)
        return _next_index(inner) < inner.size

    def __str__(self) -> str:
        return f"F({self.arg})"


class Always(Formula):
    def __init__(self, arg: Formula) -> None:
        self.arg = arg

    def evaluate(self, trace: Trace) -> np.ndarray:
        inner = self.arg.evaluate(trace)
        return _next_index(~inner) == inner.size

    def __str__(self) -> str:
        return f"G({self.arg})"


class EventuallyWithin(Formula):
    """Witness no more than ``floor(seconds / tau)`` samples ahead."""

    def __init__(self, arg: Formula, seconds: float) -> None:
        if not (seconds > 0):
            raise ParameterError(f"bound must be positive (got {seconds!r})")
        self.arg = arg
        self.seconds = float(seconds)

    def evaluate(self, trace: Trace) -> np.ndarray:
        inner = self.arg.evaluate(trace)
        n = inner.size
        k = int(math.floor(self.seconds / trace.tau + 1e-9))
        witness = _next_index(inner)
        return (witness < n) & (witness <= np.arange(n) + k)

    def __str__(self) -> str:
        return f"F[{self.seconds:g}s]({self.arg})"


def evaluate(phi: Formula, trace: Trace) -> np.ndarray:
    """Truth value of ``phi`` at every position of ``trace``."""
    if len(trace) == 0:
        raise ContractViolation("cannot evaluate a formula on an empty trace")
    return phi.evaluate(trace)


def eval_formula(phi: Formula, trace: Trace, position: int = 0) -> bool:
    if not (0 <= position < len(trace)):
        raise ContractViolation(f"position {position} outside trace of length {len(trace)}")
    return bool(evaluate(phi, trace)[position])


def f_at_least(hz: float) -> Atom:
    return Atom(f"f>={hz:g}", lambda tr: tr.f_hz >= hz - _HZ_TOL)


def f_within(lo: float, hi: float, name: str = "") -> Atom:
    label = name or f"f in [{lo:g},{hi:g}]"
    return Atom(label, lambda tr: (tr.f_hz >= lo - _HZ_TOL) & (tr.f_hz <= hi + _HZ_TOL))


@dataclass(frozen=True)
class SpecConfig:
    """Frequency limits (absolute Hz) and loss classes (MW)."""

    c_zone: float = 49.2
    stat_lim: Tuple[float, float] = (49.5, 50.5)
    n_loss: float = 1320.0
    i_loss: float = 1800.0
    i1: Tuple[float, float] = (49.70, 50.0)
    i2: Tuple[float, float] = (49.85, 50.0)
    return_window: float = 60.0
    f_nom: float = 50.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "stat_lim", tuple(float(v) for v in self.stat_lim))
        object.__setattr__(self, "i1", tuple(float(v) for v in self.i1))
        object.__setattr__(self, "i2", tuple(float(v) for v in self.i2))
        for name in ("stat_lim", "i1", "i2"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ParameterError(f"{name} must be an ordered interval (got {(lo, hi)})")
        if not (self.i1[0] <= self.i2[0] and self.i2[1] <= self.i1[1]):
            raise ParameterError(f"i2 {self.i2} must lie inside i1 {self.i1}")
        if not (self.stat_lim[0] <= self.f_nom <= self.stat_lim[1]):
            raise ParameterError(f"statutory limits {self.stat_lim} must contain {self.f_nom}")
        if not (self.return_window > 0):
            raise ParameterError("return_window must be positive")

    @classmethod
    def for_mode(cls, mode: str, **overrides: Any) -> "SpecConfig":
        if mode == "bi":
            values: Dict[str, Any] = {"i1": (49.70, 50.0), "i2": (49.85, 50.0)}
        elif mode == "uni":
            values = {"i1": (49.55, 50.0), "i2": (49.75, 50.0)}
        else:
            raise ParameterError(f"unknown charging mode {mode!r}")
        values.update(overrides)
        return cls(**values)

    def deviation(self, interval: Tuple[float, float]) -> Tuple[float, float]:
        """``interval`` as Hz deviation from nominal."""
        return (interval[0] - self.f_nom, interval[1] - self.f_nom)

    def as_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("stat_lim", "i1", "i2"):
            data[key] = list(data[key])
        return data


def psi_containment(cfg: SpecConfig) -> Formula:
    return Always(f_at_least(cfg.c_zone))


def psi_statutory(loss_mw: float, cfg: SpecConfig) -> Formula:
    normal = Const(loss_mw <= cfg.n_loss, "normal_loss")
    return Implies(normal, Always(f_within(*cfg.stat_lim, name="stat_lim")))


def psi_return(loss_mw: float, cfg: SpecConfig) -> Formula:
    infrequent = Const(loss_mw >= cfg.i_loss, "infrequent_loss")
    in_stat = f_within(*cfg.stat_lim, name="stat_lim")
    return Implies(infrequent, Always(Implies(Not(in_stat), EventuallyWithin(in_stat, cfg.return_window))))


def psi_two_stage(cfg: SpecConfig) -> Formula:
    in_i1 = f_within(*cfg.i1, name="I1")
    in_i2 = f_within(*cfg.i2, name="I2")
    return And(
        psi_containment(cfg),
        And(
            Always(Implies(Not(in_i1), Eventually(in_i1))),
            Always(Implies(And(in_i1, Not(in_i2)), Eventually(in_i2))),
        ),
    )


@dataclass(frozen=True)
class Verdict:
    name: str
    holds: bool
    first_violation_s: Optional[float] = None
    formula: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _verdict(name: str, phi: Formula, trace: Trace) -> Verdict:
    """Verdict of ``phi`` at position 0.

    For an ``Always`` (possibly under a true guard) the first violation is the
    first position where its body fails.
    """
    holds = bool(evaluate(phi, trace)[0])
    first = None
    if not holds:
        body = phi
        if isinstance(body, Implies):
            body = body.right
        if isinstance(body, Always):
            failing = np.flatnonzero(~evaluate(body.arg, trace))
            if failing.size:
                first = float(trace.t[failing[0]])
        if first is None:
            first = float(trace.t[0])
    return Verdict(name=name, holds=holds, first_violation_s=first, formula=str(phi))


def _conjoin(name: str, parts, formula: str = "") -> Verdict:
    holds = all(p.holds for p in parts)
    times = [p.first_violation_s for p in parts if p.first_violation_s is not None]
    return Verdict(name=name, holds=holds, first_violation_s=min(times) if times else None, formula=formula)


@dataclass(frozen=True)
class RequirementsReport:
    loss_mw: float
    psi1: Verdict
    psi2: Verdict
    psi3: Verdict
    psi: Verdict

    def to_dict(self) -> Dict[str, Any]:
        return {
            "loss_mw": self.loss_mw,
            "psi1": self.psi1.to_dict(),
            "psi2": self.psi2.to_dict(),
            "psi3": self.psi3.to_dict(),
            "psi": self.psi.to_dict(),
        }


@dataclass(frozen=True)
class TwoStageReport:
    containment: Verdict
    reach_i1: Verdict
    reach_i2: Verdict
    psi: Verdict

    def to_dict(self) -> Dict[str, Any]:
        return {
            "containment": self.containment.to_dict(),
            "reach_i1": self.reach_i1.to_dict(),
            "reach_i2": self.reach_i2.to_dict(),
            "psi": self.psi.to_dict(),
        }


def check_requirements(trace: Trace, loss_mw: float, cfg: SpecConfig) -> RequirementsReport:
    if len(trace) == 0:
        raise ContractViolation("trace must not be empty")
    psi1 = _verdict("psi1", psi_containment(cfg), trace)
    psi2 = _verdict("psi2", psi_statutory(loss_mw, cfg), trace)
    psi3 = _verdict("psi3", psi_return(loss_mw, cfg), trace)
    psi = _conjoin("psi", (psi1, psi2, psi3), "psi1 & psi2 & psi3")
    logger.info(
        "requirements_checked loss_mw=%s psi1=%s psi2=%s psi3=%s",
        loss_mw,
        psi1.holds,
        psi2.holds,
        psi3.holds,
        extra={"loss_mw": loss_mw, "psi": psi.holds},
    )
    return RequirementsReport(loss_mw=float(loss_mw), psi1=psi1, psi2=psi2, psi3=psi3, psi=psi)


def check_two_stage(trace: Trace, cfg: SpecConfig) -> TwoStageReport:
    if len(trace) == 0:
        raise ContractViolation("trace must not be empty")
    in_i1 = f_within(*cfg.i1, name="I1")
    in_i2 = f_within(*cfg.i2, name="I2")
    containment = _verdict("containment", psi_containment(cfg), trace)
    reach_i1 = _verdict("reach_i1", Always(Implies(Not(in_i1), Eventually(in_i1))), trace)
    reach_i2 = _verdict("reach_i2", Always(Implies(And(in_i1, Not(in_i2)), Eventually(in_i2))), trace)
    psi = _conjoin("psi", (containment, reach_i1, reach_i2), str(psi_two_stage(cfg)))
    logger.info(
        "two_stage_checked containment=%s reach_i1=%s reach_i2=%s",
        containment.holds,
        reach_i1.holds,
        reach_i2.holds,
        extra={"psi": psi.holds},
    )
    return TwoStageReport(containment=containment, reach_i1=reach_i1, reach_i2=reach_i2, psi=psi)


__all__ = [
    "Always",
    "And",
    "Atom",
    "Const",
    "Eventually",
    "EventuallyWithin",
    "Formula",
    "Implies",
    "Next",
    "Not",
    "Or",
    "RequirementsReport",
    "SpecConfig",
    "TrueF",
    "TwoStageReport",
    "Until",
    "Verdict",
    "check_requirements",
    "check_two_stage",
    "eval_formula",
    "evaluate",
    "f_at_least",
    "f_within",
    "psi_two_stage",
]
