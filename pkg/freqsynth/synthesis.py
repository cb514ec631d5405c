"""Fixed-point solvers turning a symbolic model into a lookup-table controller.

Reach and reach-avoid compute a least fixed point by backward propagation from
the target. Each round only looks at pairs whose successor box touches the
cells won in the previous round. Safety computes a greatest fixed point by
peeling off cells that cannot stay inside the safe set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .abstraction import GridSpec, SymbolicModel, cell_bounds
from .errors import ContractViolation

logger = logging.getLogger(__name__)

NO_INPUT = -1
HOLD = -2

KINDS = ("reach", "reach-avoid", "safety")
RULES = ("min_participation", "max_participation", "min_rank_then_min_u")

_CELL_CHUNK = 1 << 18
_RANK_TOL = 1e-9


class CellSet:
    """Set of cell indices backed by a boolean mask."""

    __slots__ = ("mask",)

    def __init__(self, mask: np.ndarray) -> None:
        arr = np.array(mask, dtype=bool).reshape(-1)
        arr.setflags(write=False)
        self.mask = arr

    @classmethod
    def empty(cls, n_cells: int) -> "CellSet":
        return cls(np.zeros(n_cells, dtype=bool))

    @classmethod
    def full(cls, n_cells: int) -> "CellSet":
        return cls(np.ones(n_cells, dtype=bool))

    @classmethod
    def from_indices(cls, n_cells: int, indices: Sequence[int]) -> "CellSet":
        mask = np.zeros(n_cells, dtype=bool)
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n_cells):
            raise ContractViolation(f"cell index out of range for {n_cells} cells")
        mask[idx] = True
        return cls(mask)

    @classmethod
    def from_packed(cls, bits: np.ndarray, n_cells: int) -> "CellSet":
        return cls(np.unpackbits(np.asarray(bits, dtype=np.uint8), count=n_cells).astype(bool))

    def packed(self) -> np.ndarray:
        return np.packbits(self.mask)

    @property
    def size(self) -> int:
        """Number of cells in the universe, not in the set."""
        return int(self.mask.size)

    def __len__(self) -> int:
        return int(self.mask.sum())

    def __contains__(self, cell: object) -> bool:
        try:
            i = int(cell)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            return False
        return 0 <= i < self.mask.size and bool(self.mask[i])

    def __iter__(self) -> Iterator[int]:
        return iter(int(i) for i in np.flatnonzero(self.mask))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.mask.shape == other.mask.shape and bool(np.array_equal(self.mask, other.mask))

    def __repr__(self) -> str:
        return f"CellSet({len(self)}/{self.size})"

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def union(self, other: "CellSet") -> "CellSet":
        return CellSet(self.mask | other.mask)

    def intersection(self, other: "CellSet") -> "CellSet":
        return CellSet(self.mask & other.mask)

    def difference(self, other: "CellSet") -> "CellSet":
        return CellSet(self.mask & ~other.mask)

    def issubset(self, other: "CellSet") -> bool:
        return not bool(np.any(self.mask & ~other.mask))

    def isdisjoint(self, other: "CellSet") -> bool:
        return not bool(np.any(self.mask & other.mask))


@dataclass(frozen=True, eq=False)
class Controller:
    """Lookup table from cell index to input index.

    ``policy`` holds ``HOLD`` on target cells of reach controllers and
    ``NO_INPUT`` on cells outside ``winning``.
    """

    kind: str
    winning: CellSet
    policy: np.ndarray
    input_levels: np.ndarray
    rank: Optional[np.ndarray] = None
    target: Optional[CellSet] = None
    avoid: Optional[CellSet] = None
    grid: Optional[GridSpec] = None
    tau: float = 0.0
    w_range: Tuple[float, float] = (0.0, 0.0)
    config_hash: str = ""
    name: str = ""
    rule: str = "min_participation"
    iterations: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown controller kind {self.kind!r}")

    @property
    def n_cells(self) -> int:
        return self.winning.size

    def contains(self, cell: int) -> bool:
        return cell in self.winning

    def input_index(self, cell: int) -> int:
        if not (0 <= cell < self.n_cells):
            return NO_INPUT
        return int(self.policy[cell])

    def participation(self, cell: int) -> Optional[float]:
        """Chosen level for ``cell``; ``None`` on target (hold) and losing cells."""
        idx = self.input_index(cell)
        if idx < 0:
            return None
        return float(self.input_levels[idx])


def determinize(
    admissible: np.ndarray,
    rule: str = "min_participation",
    input_rank: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Pick one input index per row of a ``(cells, inputs)`` admissibility matrix.

    Input indices follow ascending participation. ``min_participation`` takes
    the lowest admissible index and ``max_participation`` the highest.
    ``min_rank_then_min_u`` takes the input with the smallest ``input_rank``
    (the mean rank of its successors), ties going to the lower index; without
    ``input_rank`` it behaves like ``min_participation``. Rows with no
    admissible input get ``NO_INPUT``.
    """
    if rule not in RULES:
        raise ContractViolation(f"unknown determinization rule {rule!r}")
    admissible = np.asarray(admissible, dtype=bool)
    choice = np.full(admissible.shape[0], NO_INPUT, dtype=np.int32)
    has = admissible.any(axis=1)
    if rule == "max_participation":
        last = admissible.shape[1] - 1
        choice[has] = last - np.argmax(admissible[has, ::-1], axis=1)
    elif rule == "min_rank_then_min_u" and input_rank is not None:
        ranked = np.where(admissible, np.asarray(input_rank, dtype=float), np.inf)
        best = ranked.min(axis=1)
        candidates = admissible & (ranked <= best[:, None] + _RANK_TOL)
        choice[has] = np.argmax(candidates[has], axis=1)
    else:
        choice[has] = np.argmax(admissible[has], axis=1)
    return choice


def _pairs(cells: np.ndarray, n_inputs: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.repeat(cells, n_inputs), np.tile(np.arange(n_inputs, dtype=np.int64), cells.size)


def _inside_count(rel, prepared, cells: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    return rel.count_in(prepared, cells, inputs) == rel.block_size(cells, inputs)


def _reach(
    model: SymbolicModel,
    target: CellSet,
    avoid: Optional[CellSet],
    kind: str,
    rule: str,
    name: str,
) -> Controller:
    n_cells, n_inputs = model.n_cells, model.n_inputs
    rel = model.transitions
    if target.size != n_cells:
        raise ContractViolation(f"target covers {target.size} cells, model has {n_cells}")
    if not target.mask.any():
        raise ContractViolation("target set must not be empty")
    amask = avoid.mask if avoid is not None else np.zeros(n_cells, dtype=bool)
    if amask.size != n_cells:
        raise ContractViolation(f"avoid covers {amask.size} cells, model has {n_cells}")
    if np.any(target.mask & amask):
        raise ContractViolation("target and avoid sets overlap")

    allowed = ~rel.ood
    if amask.any():
        prepared = rel.prepare(amask)
        for start in range(0, n_cells, _CELL_CHUNK):
            cells, inputs = _pairs(np.arange(start, min(start + _CELL_CHUNK, n_cells)), n_inputs)
            keep = allowed[cells, inputs]
            cells, inputs = cells[keep], inputs[keep]
            hit = rel.touching(prepared, cells, inputs)
            allowed[cells[hit], inputs[hit]] = False

    win = target.mask.copy()
    rank = np.full(n_cells, -1, dtype=np.int32)
    rank[win] = 0
    policy = np.full(n_cells, NO_INPUT, dtype=np.int32)
    policy[win] = HOLD
    pending = np.flatnonzero(~win & ~amask & allowed.any(axis=1))
    by_rank = rule == "min_rank_then_min_u"
    frontier = win.copy()
    iteration = 0

    while pending.size:
        prep_frontier = rel.prepare(frontier)
        prep_win = rel.prepare(win)
        prep_rank = rel.prepare(win, weights=rank) if by_rank else None
        won_cells = []
        won_inputs = []
        won_ranks = []
        for start in range(0, pending.size, _CELL_CHUNK):
            cells, inputs = _pairs(pending[start:start + _CELL_CHUNK], n_inputs)
            keep = allowed[cells, inputs]
            cells, inputs = cells[keep], inputs[keep]
            touch = rel.touching(prep_frontier, cells, inputs)
            cells, inputs = cells[touch], inputs[touch]
            if cells.size == 0:
                continue
            inside = _inside_count(rel, prep_win, cells, inputs)
            cells, inputs = cells[inside], inputs[inside]
            won_cells.append(cells)
            won_inputs.append(inputs)
            if by_rank:
                won_ranks.append(rel.count_in(prep_rank, cells, inputs) / rel.block_size(cells, inputs))
        cells = np.concatenate(won_cells) if won_cells else np.empty(0, dtype=np.int64)
        inputs = np.concatenate(won_inputs) if won_inputs else np.empty(0, dtype=np.int64)
        if cells.size == 0:
            break
        iteration += 1
        new, pos = np.unique(cells, return_inverse=True)
        admissible = np.zeros((new.size, n_inputs), dtype=bool)
        admissible[pos, inputs] = True
        input_rank = None
        if by_rank:
            # mean successor rank; the worst successor is always in the last frontier
            input_rank = np.full((new.size, n_inputs), np.inf)
            input_rank[pos, inputs] = np.concatenate(won_ranks)
        policy[new] = determinize(admissible, rule, input_rank)
        rank[new] = iteration
        win[new] = True
        frontier = np.zeros(n_cells, dtype=bool)
        frontier[new] = True
        pending = pending[~win[pending]]
        logger.debug(
            "reach_iteration it=%d new=%d won=%d",
            iteration,
            new.size,
            int(win.sum()),
            extra={"iteration": iteration, "new_cells": int(new.size)},
        )

    won = int(win.sum())
    logger.info(
        "synthesis_done kind=%s name=%s iterations=%d winning=%d cells=%d",
        kind,
        name,
        iteration,
        won,
        n_cells,
        extra={"kind": kind, "iterations": iteration, "winning": won, "cells": n_cells},
    )
    return Controller(
        kind=kind,
        winning=CellSet(win),
        policy=policy,
        input_levels=model.inputs.levels,
        rank=rank,
        target=target,
        avoid=avoid if kind == "reach-avoid" else None,
        grid=model.grid,
        tau=model.tau,
        w_range=model.w_range,
        config_hash=model.config_hash,
        name=name,
        rule=rule,
        iterations=iteration,
    )


def solve_reach(
    model: SymbolicModel, target: CellSet, rule: str = "min_participation", name: str = ""
) -> Controller:
    return _reach(model, target, None, "reach", rule, name)


def solve_reach_avoid(
    model: SymbolicModel,
    target: CellSet,
    avoid: CellSet,
    rule: str = "min_participation",
    name: str = "",
) -> Controller:
    """Reach ``target`` without entering or risking a step into ``avoid``."""
    return _reach(model, target, avoid, "reach-avoid", rule, name)


def solve_safety(
    model: SymbolicModel, safe: CellSet, rule: str = "min_participation", name: str = ""
) -> Controller:
    n_cells, n_inputs = model.n_cells, model.n_inputs
    rel = model.transitions
    if safe.size != n_cells:
        raise ContractViolation(f"safe set covers {safe.size} cells, model has {n_cells}")
    if not safe.mask.any():
        raise ContractViolation("safe set must not be empty")

    ok = ~rel.ood & safe.mask[:, None]
    prepared = rel.prepare(safe.mask)
    cells, inputs = np.nonzero(ok)
    inside = _inside_count(rel, prepared, cells, inputs)
    ok[cells[~inside], inputs[~inside]] = False
    win = safe.mask & ok.any(axis=1)
    removed = safe.mask & ~win
    iteration = 0
    while removed.any():
        iteration += 1
        prepared = rel.prepare(removed)
        cells, inputs = np.nonzero(ok & win[:, None])
        hit = rel.touching(prepared, cells, inputs)
        ok[cells[hit], inputs[hit]] = False
        still = win & ok.any(axis=1)
        removed = win & ~still
        win = still
        logger.debug(
            "safety_iteration it=%d removed=%d won=%d",
            iteration,
            int(removed.sum()),
            int(win.sum()),
        )
    ok &= win[:, None]
    policy = determinize(ok, rule)
    policy[~win] = NO_INPUT

    won = int(win.sum())
    logger.info(
        "synthesis_done kind=safety name=%s iterations=%d winning=%d cells=%d",
        name,
        iteration,
        won,
        n_cells,
        extra={"kind": "safety", "iterations": iteration, "winning": won, "cells": n_cells},
    )
    return Controller(
        kind="safety",
        winning=CellSet(win),
        policy=policy,
        input_levels=model.inputs.levels,
        target=safe,
        grid=model.grid,
        tau=model.tau,
        w_range=model.w_range,
        config_hash=model.config_hash,
        name=name,
        rule=rule,
        iterations=iteration,
    )


def controller_rows(controller: Controller):
    """Rows ``(cell, lo..., hi..., u)`` for every winning cell; ``u`` empty on hold cells."""
    if controller.grid is None:
        raise ContractViolation("controller has no grid attached")
    for cell in controller.winning.indices():
        lo, hi = cell_bounds(controller.grid, int(cell))
        yield int(cell), lo, hi, controller.participation(int(cell))


__all__ = [
    "HOLD",
    "KINDS",
    "NO_INPUT",
    "RULES",
    "CellSet",
    "Controller",
    "controller_rows",
    "determinize",
    "solve_reach",
    "solve_reach_avoid",
    "solve_safety",
]
