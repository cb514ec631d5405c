"""Reading and writing run artifacts.

Binary artifacts (symbolic models, controllers) are compressed ``.npz``
archives with a JSON ``header`` entry carrying the format version and the
config hash. Tables are CSV; reports are JSON. Every write goes to a
temporary file in the target directory first and is then renamed.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .abstraction import GridSpec, InputGrid, RectTransitions, SymbolicModel
from .config import FORMAT_VERSION
from .errors import ArtifactMismatch, ConfigError
from .grid_model import Trace
from .synthesis import CellSet, Controller, controller_rows

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "f_hz", "g", "l", "p", "u", "w", "phase")


def _atomic_write(path: Path, writer, binary: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        mode = "wb" if binary else "w"
        kwargs = {} if binary else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, mode, **kwargs) as fh:
            writer(fh)
        os.replace(tmp, path)
    except Exception:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def ensure_writable(path: str | os.PathLike, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise FileExistsError(f"{p} already exists; pass --force to overwrite")
    return p


def write_text(path: str | os.PathLike, text: str) -> Path:
    p = Path(path)
    _atomic_write(p, lambda fh: fh.write(text), binary=False)
    return p


def write_json(path: str | os.PathLike, payload: Mapping[str, Any]) -> Path:
    return write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str | os.PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_npz(path: Path, header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
    payload = {"header": np.array(json.dumps(header, sort_keys=True))}
    payload.update(arrays)
    _atomic_write(path, lambda fh: np.savez_compressed(fh, **payload), binary=True)


def _read_npz(path: Path, kind: str, expected_hash: Optional[str]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            arrays = {k: data[k] for k in data.files if k != "header"}
    except FileNotFoundError as exc:
        raise ConfigError(f"artifact not found: {path}") from exc
    except (KeyError, ValueError, OSError) as exc:
        raise ArtifactMismatch(f"{path} is not a readable {kind} artifact: {exc}") from exc
    if header.get("kind") != kind:
        raise ArtifactMismatch(f"{path} holds a {header.get('kind')!r} artifact, expected {kind!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ArtifactMismatch(f"{path} has format version {header.get('version')}, expected {FORMAT_VERSION}")
    if expected_hash is not None and header.get("config_hash") != expected_hash:
        raise ArtifactMismatch(
            f"{path} was built for config {header.get('config_hash')}, current config is {expected_hash}; rebuild it"
        )
    return header, arrays


def save_model(path: str | os.PathLike, model: SymbolicModel) -> Path:
    if model.grid is None or not isinstance(model.transitions, RectTransitions):
        raise ArtifactMismatch("only grid-based symbolic models can be saved")
    rel = model.transitions
    header = {
        "kind": "symbolic_model",
        "version": FORMAT_VERSION,
        "config_hash": model.config_hash,
        "grid": model.grid.to_dict(),
        "inputs": model.inputs.to_list(),
        "tau": model.tau,
        "w_range": list(model.w_range),
    }
    p = Path(path)
    _write_npz(p, header, {"lo": rel.lo, "hi": rel.hi, "ood": rel.ood})
    logger.info("model_saved path=%s cells=%d", p, model.n_cells, extra={"path": str(p)})
    return p


def load_model(path: str | os.PathLike, expected_hash: Optional[str] = None) -> SymbolicModel:
    header, arrays = _read_npz(Path(path), "symbolic_model", expected_hash)
    grid = GridSpec.from_dict(header["grid"])
    return SymbolicModel(
        grid=grid,
        inputs=InputGrid(levels=np.asarray(header["inputs"], dtype=float)),
        tau=float(header["tau"]),
        w_range=tuple(float(v) for v in header["w_range"]),
        transitions=RectTransitions(grid.shape, arrays["lo"], arrays["hi"], arrays["ood"]),
        config_hash=header["config_hash"],
    )


def save_controller(path: str | os.PathLike, controller: Controller) -> Path:
    n = controller.n_cells
    header = {
        "kind": "controller",
        "version": FORMAT_VERSION,
        "config_hash": controller.config_hash,
        "controller_kind": controller.kind,
        "name": controller.name,
        "rule": controller.rule,
        "iterations": controller.iterations,
        "n_cells": n,
        "tau": controller.tau,
        "w_range": list(controller.w_range),
        "inputs": [float(v) for v in controller.input_levels],
        "grid": controller.grid.to_dict() if controller.grid is not None else None,
    }
    arrays: Dict[str, np.ndarray] = {
        "winning": controller.winning.packed(),
        "policy": controller.policy.astype(np.int16),
    }
    if controller.rank is not None:
        arrays["rank"] = controller.rank.astype(np.int32)
    if controller.target is not None:
        arrays["target"] = controller.target.packed()
    if controller.avoid is not None:
        arrays["avoid"] = controller.avoid.packed()
    p = Path(path)
    _write_npz(p, header, arrays)
    logger.info(
        "controller_saved path=%s kind=%s winning=%d",
        p,
        controller.kind,
        len(controller.winning),
        extra={"path": str(p)},
    )
    return p


def load_controller(path: str | os.PathLike, expected_hash: Optional[str] = None) -> Controller:
    header, arrays = _read_npz(Path(path), "controller", expected_hash)
    n = int(header["n_cells"])

    def cells(key: str) -> Optional[CellSet]:
        return CellSet.from_packed(arrays[key], n) if key in arrays else None

    return Controller(
        kind=header["controller_kind"],
        winning=CellSet.from_packed(arrays["winning"], n),
        policy=arrays["policy"].astype(np.int32),
        input_levels=np.asarray(header["inputs"], dtype=float),
        rank=arrays["rank"] if "rank" in arrays else None,
        target=cells("target"),
        avoid=cells("avoid"),
        grid=GridSpec.from_dict(header["grid"]) if header.get("grid") else None,
        tau=float(header["tau"]),
        w_range=tuple(float(v) for v in header["w_range"]),
        config_hash=header["config_hash"],
        name=header.get("name", ""),
        rule=header.get("rule", "min_participation"),
        iterations=int(header.get("iterations", 0)),
    )


def export_controller_csv(path: str | os.PathLike, controller: Controller) -> Path:
    """``cell_index,f_lo,f_hi,g_lo,g_hi,l_lo,l_hi,p_lo,p_hi,u``; ``u`` is blank on hold cells."""

    def write(fh) -> None:
        w = csv.writer(fh)
        w.writerow(["cell_index", "f_lo", "f_hi", "g_lo", "g_hi", "l_lo", "l_hi", "p_lo", "p_hi", "u"])
        for cell, lo, hi, u in controller_rows(controller):
            bounds: List[str] = []
            for a, b in zip(lo, hi):
                bounds.extend((f"{a:.6g}", f"{b:.6g}"))
            w.writerow([cell, *bounds, "" if u is None else f"{u:.4g}"])

    p = Path(path)
    _atomic_write(p, write, binary=False)
    return p


def trace_metadata(trace: Trace, **extra: Any) -> Dict[str, Any]:
    meta: Dict[str, Any] = {"tau": trace.tau, "f_nom": trace.f_nom, "samples": len(trace)}
    meta.update(extra)
    return meta


def write_trace_csv(path: str | os.PathLike, trace: Trace, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    meta = trace_metadata(trace, **dict(metadata or {}))

    def write(fh) -> None:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        f_hz = trace.f_hz
        for k in range(len(trace)):
            x = trace.x[k]
            w.writerow(
                [
                    repr(float(trace.t[k])),
                    repr(float(f_hz[k])),
                    repr(float(x[1])),
                    repr(float(x[2])),
                    repr(float(x[3])),
                    repr(float(trace.u[k])),
                    repr(float(trace.w[k])),
                    trace.phase[k],
                ]
            )

    p = Path(path)
    _atomic_write(p, write, binary=False)
    return p


def parse_trace_csv(text: str, f_nom: Optional[float] = None, tau: Optional[float] = None) -> Tuple[Trace, Dict[str, Any]]:
    """Parse trace CSV text; raises ``ValueError`` on malformed input."""
    lines = text.splitlines()
    meta: Dict[str, Any] = {}
    if lines and lines[0].startswith("#"):
        try:
            meta = json.loads(lines[0][1:].strip() or "{}")
        except json.JSONDecodeError:
            meta = {}
        lines = lines[1:]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("trace CSV is empty") from None
    if tuple(h.strip() for h in header) != TRACE_COLUMNS:
        raise ValueError(f"trace CSV header must be {','.join(TRACE_COLUMNS)} (got {','.join(header)})")
    rows = [r for r in reader if r]
    if not rows:
        raise ValueError("trace CSV has no samples")
    try:
        numeric = np.array([[float(v) for v in r[:7]] for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"trace CSV has a malformed row: {exc}") from exc
    if any(len(r) != len(TRACE_COLUMNS) for r in rows):
        raise ValueError("trace CSV rows must have 8 columns")
    f_nom = float(f_nom if f_nom is not None else meta.get("f_nom", 50.0))
    if tau is None:
        tau = meta.get("tau")
    if tau is None:
        tau = float(numeric[1, 0] - numeric[0, 0]) if len(rows) > 1 else 1.0
    x = np.column_stack([numeric[:, 1] - f_nom, numeric[:, 2], numeric[:, 3], numeric[:, 4]])
    trace = Trace(
        t=numeric[:, 0],
        x=x,
        u=numeric[:, 5],
        w=numeric[:, 6],
        phase=tuple(r[7] for r in rows),
        tau=float(tau),
        f_nom=f_nom,
    )
    return trace, meta


def read_trace_csv(path: str | os.PathLike) -> Tuple[Trace, Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trace_csv(fh.read())


def write_rows_csv(
    path: str | os.PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Plain CSV table, preceded by a ``# {json}`` line when ``metadata`` is given."""

    def write(fh) -> None:
        if metadata:
            fh.write("# " + json.dumps(dict(metadata), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])

    p = Path(path)
    _atomic_write(p, write, binary=False)
    return p


def read_rows_csv(path: str | os.PathLike) -> Tuple[List[Dict[str, str]], Dict[str, Any]]:
    """Rows of a table written by :func:`write_rows_csv`, and its metadata."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    meta: Dict[str, Any] = {}
    if lines and lines[0].startswith("#"):
        meta = json.loads(lines[0][1:].strip() or "{}")
        lines = lines[1:]
    return list(csv.DictReader(lines)), meta


def write_sweep_csv(path: str | os.PathLike, rows, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    return write_rows_csv(
        path,
        ("half_width_hz", "mode", "steady_f_hz", "settled"),
        ((f"{r.half_width_hz:.2f}", r.mode, f"{r.steady_f_hz:.4f}", str(r.settled).lower()) for r in rows),
        metadata,
    )


def write_robustness_csv(path: str | os.PathLike, rows, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    def fmt(v: Optional[float]) -> str:
        return "" if v is None else f"{v:.3f}"

    return write_rows_csv(
        path,
        ("seed", "delta_max", "passed", "first_i2_entry_s", "settle_i2_s", "min_f_hz", "error"),
        (
            (r.seed, f"{r.delta_max:g}", str(r.passed).lower(), fmt(r.first_i2_entry_s), fmt(r.settle_i2_s), f"{r.min_f_hz:.4f}", r.error)
            for r in rows
        ),
        metadata,
    )


__all__ = [
    "TRACE_COLUMNS",
    "ensure_writable",
    "export_controller_csv",
    "load_controller",
    "load_model",
    "parse_trace_csv",
    "read_json",
    "read_rows_csv",
    "read_trace_csv",
    "save_controller",
    "save_model",
    "write_json",
    "write_robustness_csv",
    "write_rows_csv",
    "write_sweep_csv",
    "write_text",
    "write_trace_csv",
]
