"""Finite symbolic model of the sampled plant.

The working region is split into a uniform grid of cells. For every pair of
cell and input level, the set of cells the plant can reach within one sampling
period is over-approximated by a hyper-rectangle. The rectangle is the exact
successor of the cell centre, widened by a growth bound. Successor sets are
stored as per-dimension index ranges and never as explicit lists. Callers
query them in batches through :meth:`RectTransitions.count_in`.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .errors import ContractViolation, MemoryBudgetExceeded, ParameterError
from .grid_model import N_STATES, GridModel

logger = logging.getLogger(__name__)

OUTSIDE = -1

# f, g, l, p; slow states get coarser cells so f keeps 0.05 Hz resolution
DEFAULT_LOWER = (-1.0, -0.2, -0.2, -0.2)
DEFAULT_UPPER = (0.1, 3.8, 2.2, 2.2)
DEFAULT_ETA = (0.05, 0.1, 0.06, 0.04)
DEFAULT_TAU = 1.0
DEFAULT_MEMORY_MB = 4096

# widening applied to every growth-bound radius to absorb rounding in expm
RADIUS_EPS = 1e-9

_PAIR_CHUNK = 1 << 20
_CELL_CHUNK = 1 << 16


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, str(default)))
    except Exception:
        return default


def _frozen(values: Sequence[float], dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GridSpec:
    lower: np.ndarray
    upper: np.ndarray
    eta: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_region(
        cls,
        lower: Sequence[float] = DEFAULT_LOWER,
        upper: Sequence[float] = DEFAULT_UPPER,
        eta: Sequence[float] | float = DEFAULT_ETA,
    ) -> "GridSpec":
        lo = np.asarray(lower, dtype=float).reshape(-1)
        hi = np.asarray(upper, dtype=float).reshape(-1)
        if np.isscalar(eta) or np.ndim(eta) == 0:
            et = np.full(lo.shape, float(eta))
        else:
            et = np.asarray(eta, dtype=float).reshape(-1)
        if not (lo.shape == hi.shape == et.shape):
            raise ParameterError("lower, upper and eta must have the same length")
        if not np.all(np.isfinite(np.concatenate([lo, hi, et]))):
            raise ParameterError("grid bounds must be finite")
        if np.any(hi <= lo):
            raise ParameterError(f"upper must exceed lower componentwise (lower={lo.tolist()}, upper={hi.tolist()})")
        if np.any(et <= 0):
            raise ParameterError(f"cell widths must be positive (eta={et.tolist()})")
        counts = np.rint((hi - lo) / et).astype(np.int64)
        if np.any(counts < 1):
            raise ParameterError(f"every dimension needs at least one cell (counts={counts.tolist()})")
        return cls(lower=_frozen(lo), upper=_frozen(hi), eta=_frozen(et), counts=_frozen(counts, np.int64))

    @property
    def ndim(self) -> int:
        return int(self.counts.size)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in self.counts)

    @property
    def upper_edge(self) -> np.ndarray:
        """Upper edge of the last cell (``upper`` up to the rounding of ``counts``)."""
        return self.lower + self.counts * self.eta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
            "eta": [float(v) for v in self.eta],
            "counts": [int(v) for v in self.counts],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GridSpec":
        return cls.from_region(data["lower"], data["upper"], data["eta"])


@dataclass(frozen=True, eq=False)
class InputGrid:
    levels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.levels, dtype=float).reshape(-1)
        if arr.size == 0:
            raise ParameterError("input grid must not be empty")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ParameterError(f"input levels must lie in [0, 1] (got {arr.tolist()})")
        if np.any(np.diff(arr) <= 0):
            raise ParameterError("input levels must be sorted and distinct")
        object.__setattr__(self, "levels", _frozen(arr))

    @classmethod
    def uniform(cls, n_levels: int = 21) -> "InputGrid":
        if n_levels < 1:
            raise ParameterError("need at least one input level")
        if n_levels == 1:
            return cls(levels=np.array([0.0]))
        return cls(levels=np.round(np.linspace(0.0, 1.0, n_levels), 12))

    def __len__(self) -> int:
        return int(self.levels.size)

    def to_list(self) -> List[float]:
        return [float(v) for v in self.levels]


def state_to_cell(x: Sequence[float], grid: GridSpec) -> int:
    return int(states_to_cells(np.asarray(x, dtype=float).reshape(1, -1), grid)[0])


def states_to_cells(X: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Flat cell index for each row of ``X``; ``OUTSIDE`` when not in the region."""
    X = np.asarray(X, dtype=float)
    rel = (X - grid.lower) / grid.eta
    inside = np.all((X >= grid.lower) & (X <= grid.upper_edge), axis=1)
    idx = np.floor(rel).astype(np.int64)
    idx = np.clip(idx, 0, grid.counts - 1)
    flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
    return np.where(inside, flat, OUTSIDE)


def cell_coords(grid: GridSpec, cells) -> np.ndarray:
    return cell_coords_from_shape(grid.shape, cells)


def cell_center(grid: GridSpec, idx: int) -> np.ndarray:
    if not (0 <= idx < grid.n_cells):
        raise ContractViolation(f"cell index {idx} out of range")
    return grid.lower + (cell_coords(grid, idx) + 0.5) * grid.eta


def cell_bounds(grid: GridSpec, idx: int) -> Tuple[np.ndarray, np.ndarray]:
    if not (0 <= idx < grid.n_cells):
        raise ContractViolation(f"cell index {idx} out of range")
    lo = grid.lower + cell_coords(grid, idx) * grid.eta
    return lo, lo + grid.eta


def cell_centers(grid: GridSpec, start: int, stop: int) -> np.ndarray:
    coords = cell_coords(grid, np.arange(start, stop, dtype=np.int64))
    return grid.lower + (coords + 0.5) * grid.eta


def _dim_mask(grid: GridSpec, dim: int, keep: np.ndarray) -> np.ndarray:
    shape = [1] * grid.ndim
    shape[dim] = grid.shape[dim]
    return np.broadcast_to(keep.reshape(shape), grid.shape).ravel().copy()


def cells_within(grid: GridSpec, dim: int, lo: float, hi: float, tol: float = 1e-9) -> np.ndarray:
    """Mask of cells whose ``dim`` interval lies inside ``[lo, hi]``."""
    i = np.arange(grid.shape[dim])
    c_lo = grid.lower[dim] + i * grid.eta[dim]
    c_hi = c_lo + grid.eta[dim]
    return _dim_mask(grid, dim, (c_lo >= lo - tol) & (c_hi <= hi + tol))


def cells_intersecting(grid: GridSpec, dim: int, lo: float, hi: float, tol: float = 1e-9) -> np.ndarray:
    """Mask of cells whose ``dim`` interval has a point in ``[lo, hi]``."""
    i = np.arange(grid.shape[dim])
    c_lo = grid.lower[dim] + i * grid.eta[dim]
    c_hi = c_lo + grid.eta[dim]
    return _dim_mask(grid, dim, (c_hi >= lo - tol) & (c_lo <= hi + tol))


def growth_matrix(A: np.ndarray) -> np.ndarray:
    """Metzler bound of ``A``: diagonal kept, off-diagonals replaced by magnitudes."""
    A = np.asarray(A, dtype=float)
    L = np.abs(A)
    np.fill_diagonal(L, np.diag(A))
    return L


def growth_radius(
    L: np.ndarray,
    bw: np.ndarray,
    eta: np.ndarray,
    w_range: Tuple[float, float],
    tau: float,
) -> np.ndarray:
    """Radius at ``tau`` of ``r' = L r + |Bw| (w_hi - w_lo) / 2`` with ``r(0) = eta / 2``."""
    if not (tau > 0):
        raise ParameterError(f"tau must be positive (got {tau!r})")
    w_lo, w_hi = float(w_range[0]), float(w_range[1])
    if w_lo > w_hi:
        raise ParameterError(f"w_range must be ordered (got {w_range!r})")
    n = L.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = L
    M[:n, n] = np.abs(np.asarray(bw, dtype=float)) * (w_hi - w_lo) / 2.0
    E = expm(M * tau)
    r0 = np.append(np.asarray(eta, dtype=float) / 2.0, 1.0)
    return (E @ r0)[:n] + RADIUS_EPS


def post_rect(
    cell: int,
    u: float,
    w_range: Tuple[float, float],
    tau: float,
    model: GridModel,
    L: np.ndarray,
    grid: GridSpec,
) -> Tuple[np.ndarray, np.ndarray]:
    """Centre and radius of the rectangle containing every tau-successor of ``cell``."""
    w_c = 0.5 * (float(w_range[0]) + float(w_range[1]))
    center = model.step_batch(cell_center(grid, cell)[None, :], u, w_c, tau)[0]
    radius = growth_radius(L, model.matrices.Bw, grid.eta, w_range, tau)
    return center, radius


def rect_within(grid: GridSpec, mask: np.ndarray, center: np.ndarray, radius: np.ndarray) -> bool:
    """True when the rectangle ``center +- radius`` stays in the region and only meets cells of ``mask``."""
    b_lo = np.asarray(center, dtype=float) - radius
    b_hi = np.asarray(center, dtype=float) + radius
    if np.any(b_lo < grid.lower) or np.any(b_hi > grid.upper_edge):
        return False
    top = grid.counts - 1
    i_lo = np.clip(np.floor((b_lo - grid.lower) / grid.eta), 0, top).astype(np.int64)
    i_hi = np.clip(np.floor((b_hi - grid.lower) / grid.eta), 0, top).astype(np.int64)
    block = np.asarray(mask, dtype=bool).reshape(grid.shape)[tuple(slice(a, b + 1) for a, b in zip(i_lo, i_hi))]
    return bool(block.all())


class RectTransitions:
    """Successor sets as closed index boxes ``lo[k] .. hi[k]`` per dimension.

    ``ood[cell, input]`` marks pairs whose rectangle leaves the working region;
    their boxes are meaningless.
    """

    def __init__(self, shape: Sequence[int], lo: np.ndarray, hi: np.ndarray, ood: np.ndarray) -> None:
        self.shape = tuple(int(c) for c in shape)
        self.lo = lo
        self.hi = hi
        self.ood = ood
        self.n_cells, self.n_inputs = ood.shape

    def prepare(self, mask: np.ndarray, weights: Optional[np.ndarray] = None) -> Dict[str, Any]:
        """Summed-area table and bounding box of ``mask`` for batched queries.

        With integer ``weights`` the table sums the weights of member cells
        instead of counting them.
        """
        mask = np.asarray(mask, dtype=bool)
        dtype = np.int32 if weights is None else np.int64
        sat = np.zeros(tuple(c + 1 for c in self.shape), dtype=dtype)
        block = mask.astype(dtype)
        if weights is not None:
            block = block * np.asarray(weights, dtype=dtype)
        block = block.reshape(self.shape)
        for axis in range(len(self.shape)):
            block = block.cumsum(axis=axis, dtype=dtype)
        sat[(slice(1, None),) * len(self.shape)] = block
        members = np.flatnonzero(mask)
        if members.size:
            coords = cell_coords_from_shape(self.shape, members)
            bbox = (coords.min(axis=0), coords.max(axis=0))
        else:
            bbox = None
        return {"sat": sat, "bbox": bbox}

    def _boxes(self, cells: np.ndarray, inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.lo[cells, inputs].astype(np.int64), self.hi[cells, inputs].astype(np.int64)

    def block_size(self, cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        lo, hi = self._boxes(cells, inputs)
        return np.prod(hi - lo + 1, axis=1)

    def count_in(self, prepared: Dict[str, Any], cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Number of cells of each pair's box that lie in the prepared mask."""
        sat = prepared["sat"]
        out = np.zeros(len(cells), dtype=np.int64)
        for start in range(0, len(cells), _PAIR_CHUNK):
            sl = slice(start, start + _PAIR_CHUNK)
            lo, hi = self._boxes(cells[sl], inputs[sl])
            hi = hi + 1
            total = np.zeros(lo.shape[0], dtype=np.int64)
            ndim = lo.shape[1]
            # inclusion-exclusion over the 2^ndim box corners
            for corner in itertools.product((0, 1), repeat=ndim):
                index = tuple(hi[:, d] if c else lo[:, d] for d, c in enumerate(corner))
                sign = 1 if (ndim - sum(corner)) % 2 == 0 else -1
                total += sign * sat[index].astype(np.int64)
            out[sl] = total
        return out

    def touching(self, prepared: Dict[str, Any], cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        bbox = prepared["bbox"]
        result = np.zeros(len(cells), dtype=bool)
        if bbox is None or len(cells) == 0:
            return result
        mins, maxs = bbox
        lo, hi = self._boxes(cells, inputs)
        near = np.all((lo <= maxs) & (hi >= mins), axis=1)
        if near.any():
            result[near] = self.count_in(prepared, cells[near], inputs[near]) > 0
        return result

    def successors(self, cell: int, inp: int) -> Optional[np.ndarray]:
        if self.ood[cell, inp]:
            return None
        lo, hi = self.lo[cell, inp].astype(np.int64), self.hi[cell, inp].astype(np.int64)
        ranges = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
        return np.sort(np.ravel_multi_index(tuple(r.ravel() for r in ranges), self.shape))

    def nbytes(self) -> int:
        return int(self.lo.nbytes + self.hi.nbytes + self.ood.nbytes)


def cell_coords_from_shape(shape: Sequence[int], cells) -> np.ndarray:
    return np.stack(np.unravel_index(np.asarray(cells, dtype=np.int64), tuple(shape)), axis=-1)


class ExplicitTransitions:
    """Successor lists in CSR form, for small hand-made or random systems."""

    def __init__(self, n_cells: int, n_inputs: int, table: Mapping[Tuple[int, int], Optional[Iterable[int]]]) -> None:
        if n_cells < 1 or n_inputs < 1:
            raise ParameterError("explicit systems need at least one cell and one input")
        self.n_cells = int(n_cells)
        self.n_inputs = int(n_inputs)
        n_pairs = self.n_cells * self.n_inputs
        self.ood = np.ones((self.n_cells, self.n_inputs), dtype=bool)
        lengths = np.zeros(n_pairs, dtype=np.int64)
        lists: List[np.ndarray] = [np.empty(0, dtype=np.int64)] * n_pairs
        for (cell, inp), succ in table.items():
            if not (0 <= cell < self.n_cells and 0 <= inp < self.n_inputs):
                raise ParameterError(f"pair ({cell}, {inp}) out of range")
            if succ is None:
                continue
            arr = np.unique(np.asarray(list(succ), dtype=np.int64))
            if arr.size == 0:
                raise ParameterError(f"pair ({cell}, {inp}) has an empty successor set")
            if arr.min() < 0 or arr.max() >= self.n_cells:
                raise ParameterError(f"pair ({cell}, {inp}) has a successor out of range")
            k = cell * self.n_inputs + inp
            lists[k] = arr
            lengths[k] = arr.size
            self.ood[cell, inp] = False
        self.offsets = np.zeros(n_pairs + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.offsets[1:])
        self.targets = np.concatenate(lists) if n_pairs else np.empty(0, dtype=np.int64)

    def prepare(self, mask: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        if weights is None:
            return mask
        return np.where(mask, np.asarray(weights, dtype=np.int64), 0)

    def block_size(self, cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        k = np.asarray(cells, dtype=np.int64) * self.n_inputs + np.asarray(inputs, dtype=np.int64)
        return self.offsets[k + 1] - self.offsets[k]

    def count_in(self, prepared: np.ndarray, cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        k = np.asarray(cells, dtype=np.int64) * self.n_inputs + np.asarray(inputs, dtype=np.int64)
        starts = self.offsets[k]
        lengths = self.offsets[k + 1] - starts
        total = int(lengths.sum())
        if total == 0:
            return np.zeros(len(k), dtype=np.int64)
        owner = np.repeat(np.arange(len(k)), lengths)
        within = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        hits = prepared[self.targets[np.repeat(starts, lengths) + within]]
        return np.bincount(owner, weights=hits, minlength=len(k)).astype(np.int64)

    def touching(self, prepared: np.ndarray, cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return self.count_in(prepared, cells, inputs) > 0

    def successors(self, cell: int, inp: int) -> Optional[np.ndarray]:
        if self.ood[cell, inp]:
            return None
        k = cell * self.n_inputs + inp
        return self.targets[self.offsets[k]:self.offsets[k + 1]].copy()


@dataclass(frozen=True, eq=False)
class SymbolicModel:
    grid: Optional[GridSpec]
    inputs: InputGrid
    tau: float
    w_range: Tuple[float, float]
    transitions: Any
    config_hash: str = ""

    @property
    def n_cells(self) -> int:
        return int(self.transitions.n_cells)

    @property
    def n_inputs(self) -> int:
        return int(self.transitions.n_inputs)

    def successors(self, cell: int, inp: int) -> Optional[np.ndarray]:
        """Successor cells of the pair, or ``None`` when it leaves the region."""
        return self.transitions.successors(cell, inp)

    def is_out_of_domain(self, cell: int, inp: int) -> bool:
        return bool(self.transitions.ood[cell, inp])

    @classmethod
    def from_explicit(
        cls,
        n_cells: int,
        n_inputs: int,
        table: Mapping[Tuple[int, int], Optional[Iterable[int]]],
        levels: Optional[Sequence[float]] = None,
    ) -> "SymbolicModel":
        if levels is None:
            levels = np.linspace(0.0, 1.0, n_inputs) if n_inputs > 1 else [0.0]
        return cls(
            grid=None,
            inputs=InputGrid(levels=np.asarray(levels, dtype=float)),
            tau=1.0,
            w_range=(0.0, 0.0),
            transitions=ExplicitTransitions(n_cells, n_inputs, table),
        )


def estimate_bytes(grid: GridSpec, n_inputs: int) -> int:
    itemsize = 1 if int(grid.counts.max()) <= 256 else 2
    return grid.n_cells * n_inputs * (2 * grid.ndim * itemsize + 1)


def build_symbolic_model(
    grid: GridSpec,
    inputs: InputGrid,
    w_range: Tuple[float, float],
    tau: float,
    model: GridModel,
    *,
    memory_budget_mb: Optional[int] = None,
    workers: Optional[int] = None,
    config_hash: str = "",
) -> SymbolicModel:
    """Rectangle transition relation for every (cell, input) pair."""
    if grid.ndim != N_STATES:
        raise ParameterError(f"grid must have {N_STATES} dimensions (got {grid.ndim})")
    w_lo, w_hi = float(w_range[0]), float(w_range[1])
    if w_lo > w_hi:
        raise ParameterError(f"w_range must be ordered (got {w_range!r})")
    budget_mb = memory_budget_mb if memory_budget_mb is not None else _env_int("FREQSYNTH_MEMORY_MB", DEFAULT_MEMORY_MB)
    need = estimate_bytes(grid, len(inputs))
    if need > budget_mb * 1024 * 1024:
        raise MemoryBudgetExceeded(
            f"abstraction needs ~{need / 2**20:.0f} MB for cells={grid.n_cells} "
            f"inputs={len(inputs)} pairs={grid.n_cells * len(inputs)}; budget is {budget_mb} MB"
        )
    if workers is None:
        workers = max(1, _env_int("FREQSYNTH_THREADS", os.cpu_count() or 1))

    phi, gam_u, gam_w = model.discretize(tau)
    L = growth_matrix(model.matrices.A)
    radius = growth_radius(L, model.matrices.Bw, grid.eta, (w_lo, w_hi), tau)
    w_c = 0.5 * (w_lo + w_hi)
    levels = inputs.levels
    n_cells, n_inputs = grid.n_cells, len(inputs)
    dtype = np.uint8 if int(grid.counts.max()) <= 256 else np.uint16
    ndim = grid.ndim

    lo = np.zeros((n_cells, n_inputs, ndim), dtype=dtype)
    hi = np.zeros((n_cells, n_inputs, ndim), dtype=dtype)
    ood = np.zeros((n_cells, n_inputs), dtype=bool)
    lower, upper_edge, eta, top = grid.lower, grid.upper_edge, grid.eta, grid.counts - 1

    def fill(start: int) -> None:
        stop = min(start + _CELL_CHUNK, n_cells)
        base = cell_centers(grid, start, stop) @ phi.T + gam_w * w_c
        for j, u in enumerate(levels):
            c = base + gam_u * u
            b_lo = c - radius
            b_hi = c + radius
            out = np.any(b_lo < lower, axis=1) | np.any(b_hi > upper_edge, axis=1)
            i_lo = np.clip(np.floor((b_lo - lower) / eta), 0, top).astype(dtype)
            i_hi = np.clip(np.floor((b_hi - lower) / eta), 0, top).astype(dtype)
            i_lo[out] = 0
            i_hi[out] = 0
            lo[start:stop, j] = i_lo
            hi[start:stop, j] = i_hi
            ood[start:stop, j] = out

    starts = range(0, n_cells, _CELL_CHUNK)
    if workers > 1 and n_cells > _CELL_CHUNK:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(fill, starts))
    else:
        for s in starts:
            fill(s)

    ood_pairs = int(ood.sum())
    logger.info(
        "abstraction_built cells=%d inputs=%d ood_pairs=%d tau=%s",
        n_cells,
        n_inputs,
        ood_pairs,
        tau,
        extra={"cells": n_cells, "inputs": n_inputs, "ood_pairs": ood_pairs},
    )
    return SymbolicModel(
        grid=grid,
        inputs=inputs,
        tau=float(tau),
        w_range=(w_lo, w_hi),
        transitions=RectTransitions(grid.shape, lo, hi, ood),
        config_hash=config_hash,
    )


__all__ = [
    "OUTSIDE",
    "ExplicitTransitions",
    "GridSpec",
    "InputGrid",
    "RectTransitions",
    "SymbolicModel",
    "build_symbolic_model",
    "cell_bounds",
    "cell_center",
    "cells_intersecting",
    "cells_within",
    "growth_matrix",
    "growth_radius",
    "post_rect",
    "rect_within",
    "state_to_cell",
    "states_to_cells",
]
