"""Scenario configuration loaded from TOML, with environment overrides.

Every section is optional; missing keys fall back to the dataclass defaults.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

from .abstraction import DEFAULT_ETA, DEFAULT_LOWER, DEFAULT_TAU, DEFAULT_UPPER, GridSpec, InputGrid
from .errors import ConfigError, ParameterError
from .grid_model import MODES, GridParams, loss_to_w
from .multiphase import DEFAULT_HOLD_MARGIN
from .spec_monitor import SpecConfig
from .synthesis import RULES

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, str(default)))
    except ValueError:
        return default


def content_hash(data: Mapping[str, Any]) -> str:
    """SHA-1 of the canonical compact JSON form of ``data``."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AbstractionConfig:
    lower: Tuple[float, ...] = DEFAULT_LOWER
    upper: Tuple[float, ...] = DEFAULT_UPPER
    eta: Tuple[float, ...] = DEFAULT_ETA
    tau: float = DEFAULT_TAU
    input_levels: int = 21
    # fractions of the nominal post-event disturbance
    w_range_factor: Tuple[float, float] = (0.99, 1.0)
    rule: str = "max_participation"

    def __post_init__(self) -> None:
        if self.rule not in RULES:
            raise ConfigError(f"abstraction.rule must be one of {RULES} (got {self.rule!r})")

    def grid(self) -> GridSpec:
        return GridSpec.from_region(self.lower, self.upper, self.eta)

    def inputs(self) -> InputGrid:
        return InputGrid.uniform(self.input_levels)


@dataclass(frozen=True)
class SupervisorConfig:
    # held steady state keeps this fraction of I2's width from both edges
    hold_margin: float = DEFAULT_HOLD_MARGIN

    def __post_init__(self) -> None:
        if not (0.0 <= self.hold_margin <= 0.5):
            raise ConfigError(f"supervisor.hold_margin must lie in [0, 0.5] (got {self.hold_margin!r})")


@dataclass(frozen=True)
class RobustnessConfig:
    delta_max: float = 0.1
    seeds: int = 100
    base_seed: int = 0
    deltas: Tuple[float, ...] = (0.0, 0.05, 0.1)


@dataclass(frozen=True)
class ScenarioConfig:
    grid_params: GridParams = field(default_factory=GridParams)
    k_ev: Dict[str, float] = field(default_factory=lambda: {"uni": 3.6, "bi": 7.2})
    p_av: Dict[str, float] = field(default_factory=lambda: {"uni": 0.028, "bi": 0.056})
    mode: str = "bi"
    loss_mw: float = 2000.0
    horizon_s: float = 120.0
    x0: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    abstraction: AbstractionConfig = field(default_factory=AbstractionConfig)
    spec_overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)
    out_dir: str = "out"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES} (got {self.mode!r})")
        if self.loss_mw < 0:
            raise ConfigError(f"loss_mw must be non-negative (got {self.loss_mw!r})")
        if not (self.horizon_s > 0):
            raise ConfigError(f"horizon_s must be positive (got {self.horizon_s!r})")
        lo, hi = self.abstraction.w_range_factor
        if lo > hi or lo < 0:
            raise ConfigError(f"w_range_factor must be an ordered non-negative pair (got {(lo, hi)})")

    def params(self, mode: Optional[str] = None) -> GridParams:
        m = mode or self.mode
        if m not in MODES:
            raise ConfigError(f"unknown charging mode {m!r}")
        return replace(self.grid_params, k_ev=float(self.k_ev[m]), p_av=float(self.p_av[m]))

    def w(self, mode: Optional[str] = None) -> float:
        return loss_to_w(self.loss_mw, self.params(mode))

    def w_range(self, mode: Optional[str] = None) -> Tuple[float, float]:
        w = self.w(mode)
        lo, hi = self.abstraction.w_range_factor
        return (lo * w, hi * w)

    def spec(self, mode: Optional[str] = None) -> SpecConfig:
        m = mode or self.mode
        overrides = dict(self.spec_overrides.get("common", {}))
        overrides.update(self.spec_overrides.get(m, {}))
        try:
            return SpecConfig.for_mode(m, f_nom=self.grid_params.f_nom, **overrides)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"invalid [spec] section: {exc}") from exc

    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        return replace(self, **changes)

    def model_hash(self, mode: Optional[str] = None) -> str:
        """Hash of everything a symbolic model depends on."""
        a = self.abstraction
        return content_hash(
            {
                "version": FORMAT_VERSION,
                "params": self.params(mode).as_dict(),
                "grid": a.grid().to_dict(),
                "inputs": a.inputs().to_list(),
                "tau": a.tau,
                "w_range": list(self.w_range(mode)),
            }
        )

    def config_hash(self, mode: Optional[str] = None) -> str:
        """Hash of the whole scenario as seen by ``mode``; stamped on every artifact."""
        return content_hash({"version": FORMAT_VERSION, **config_summary(self, mode)})

    def controller_hash(self, mode: Optional[str], target: str) -> str:
        return content_hash(
            {
                "model": self.model_hash(mode),
                "target": target,
                "spec": self.spec(mode).as_dict(),
                "rule": self.abstraction.rule,
            }
        )


def _tuple(value: Any, name: str, length: Optional[int] = None) -> Tuple[float, ...]:
    try:
        out = tuple(float(v) for v in value)
    except TypeError as exc:
        raise ConfigError(f"{name} must be a list of numbers") from exc
    if length is not None and len(out) != length:
        raise ConfigError(f"{name} must have {length} entries (got {len(out)})")
    return out


def _pick(section: Mapping[str, Any], cls, name: str) -> Dict[str, Any]:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    return dict(section)


def from_mapping(data: Mapping[str, Any]) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from parsed TOML."""
    try:
        grid_sec = dict(data.get("grid", {}))
        ev_sec = dict(data.get("ev", {}))
        k_ev = {"uni": float(ev_sec.pop("k_ev_uni", 3.6)), "bi": float(ev_sec.pop("k_ev_bi", 7.2))}
        p_av = {"uni": float(ev_sec.pop("p_av_uni", 0.028)), "bi": float(ev_sec.pop("p_av_bi", 0.056))}
        grid_params = GridParams(**_pick({**grid_sec, **ev_sec}, GridParams, "grid/ev"))

        sc = dict(data.get("scenario", {}))
        scenario_kw: Dict[str, Any] = {}
        for key in ("mode", "out_dir"):
            if key in sc:
                scenario_kw[key] = str(sc.pop(key))
        for key in ("loss_mw", "horizon_s"):
            if key in sc:
                scenario_kw[key] = float(sc.pop(key))
        if "x0" in sc:
            scenario_kw["x0"] = _tuple(sc.pop("x0"), "scenario.x0", 4)
        if sc:
            raise ConfigError(f"unknown keys in [scenario]: {', '.join(sorted(sc))}")

        ab = _pick(dict(data.get("abstraction", {})), AbstractionConfig, "abstraction")
        for key in ("lower", "upper"):
            if key in ab:
                ab[key] = _tuple(ab[key], f"abstraction.{key}", 4)
        if "eta" in ab:
            ab["eta"] = (float(ab["eta"]),) * 4 if isinstance(ab["eta"], (int, float)) else _tuple(ab["eta"], "abstraction.eta", 4)
        if "w_range_factor" in ab:
            ab["w_range_factor"] = _tuple(ab["w_range_factor"], "abstraction.w_range_factor", 2)
        abstraction = AbstractionConfig(**ab)

        spec_sec = dict(data.get("spec", {}))
        spec_overrides: Dict[str, Dict[str, Any]] = {"common": {}}
        for key, value in spec_sec.items():
            if key in MODES and isinstance(value, Mapping):
                spec_overrides[key] = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            else:
                spec_overrides["common"][key] = tuple(value) if isinstance(value, list) else value

        sv = _pick(dict(data.get("supervisor", {})), SupervisorConfig, "supervisor")
        supervisor = SupervisorConfig(**{k: float(v) for k, v in sv.items()})

        rb = _pick(dict(data.get("robustness", {})), RobustnessConfig, "robustness")
        if "deltas" in rb:
            rb["deltas"] = _tuple(rb["deltas"], "robustness.deltas")
        robustness = RobustnessConfig(**rb)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc

    cfg = ScenarioConfig(
        grid_params=grid_params,
        k_ev=k_ev,
        p_av=p_av,
        abstraction=abstraction,
        spec_overrides=spec_overrides,
        robustness=robustness,
        supervisor=supervisor,
        **scenario_kw,
    )
    # surface interval mistakes at load time, not mid-run
    for mode in MODES:
        cfg.spec(mode)
    try:
        abstraction.grid()
        abstraction.inputs()
    except ParameterError as exc:
        raise ConfigError(f"invalid [abstraction] section: {exc}") from exc
    return cfg


def load_config(path: Optional[str | os.PathLike] = None) -> ScenarioConfig:
    """Read a TOML scenario; ``None`` gives the built-in defaults."""
    if path is None:
        return ScenarioConfig()
    p = Path(path)
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid TOML: {exc}") from exc
    cfg = from_mapping(data)
    logger.info("config_loaded path=%s mode=%s loss_mw=%s", p, cfg.mode, cfg.loss_mw, extra={"path": str(p)})
    return cfg


def config_summary(cfg: ScenarioConfig, mode: Optional[str] = None) -> Dict[str, Any]:
    m = mode or cfg.mode
    return {
        "mode": m,
        "loss_mw": cfg.loss_mw,
        "w": cfg.w(m),
        "horizon_s": cfg.horizon_s,
        "x0": list(cfg.x0),
        "params": cfg.params(m).as_dict(),
        "abstraction": asdict(cfg.abstraction),
        "spec": cfg.spec(m).as_dict(),
        "supervisor": asdict(cfg.supervisor),
        "robustness": asdict(cfg.robustness),
    }


__all__ = [
    "FORMAT_VERSION",
    "AbstractionConfig",
    "RobustnessConfig",
    "ScenarioConfig",
    "SupervisorConfig",
    "config_summary",
    "content_hash",
    "env_int",
    "from_mapping",
    "load_config",
]
