import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[2]))

from freqsynth.abstraction import SymbolicModel, cells_within
from freqsynth.errors import ContractViolation
from freqsynth.grid_model import F
from freqsynth.synthesis import (
    HOLD,
    NO_INPUT,
    CellSet,
    Controller,
    controller_rows,
    determinize,
    solve_reach,
    solve_reach_avoid,
    solve_safety,
)


def brute_reach(table, n_cells, n_inputs, target, avoid=frozenset()):
    """Textbook least fixed point; returns (winning, rank, policy)."""
    bad_pairs = set()
    for (c, j), succ in table.items():
        if succ is None or any(s in avoid for s in succ):
            bad_pairs.add((c, j))
    win = set(target)
    rank = {c: 0 for c in target}
    policy = {c: HOLD for c in target}
    k = 0
    while True:
        k += 1
        new = {}
        for c in range(n_cells):
            if c in win or c in avoid:
                continue
            for j in range(n_inputs):
                succ = table.get((c, j))
                if (c, j) in bad_pairs or succ is None:
                    continue
                if all(s in win for s in succ):
                    new[c] = j
                    break
        if not new:
            return win, rank, policy
        for c, j in new.items():
            win.add(c)
            rank[c] = k
            policy[c] = j


def brute_safety(table, n_cells, n_inputs, safe):
    win = set(safe)
    while True:
        keep = set()
        for c in win:
            for j in range(n_inputs):
                succ = table.get((c, j))
                if succ is not None and all(s in win for s in succ):
                    keep.add(c)
                    break
        if keep == win:
            break
        win = keep
    policy = {}
    for c in win:
        for j in range(n_inputs):
            succ = table.get((c, j))
            if succ is not None and all(s in win for s in succ):
                policy[c] = j
                break
    return win, policy


def test_toy_reach(toy_model):
    ctrl = solve_reach(toy_model, CellSet.from_indices(3, [2]))
    assert set(ctrl.winning) == {0, 1, 2}
    assert list(ctrl.rank) == [2, 1, 0]
    assert list(ctrl.policy) == [0, 0, HOLD]
    assert ctrl.iterations == 2
    assert ctrl.participation(2) is None
    assert ctrl.participation(1) == 0.0


def test_whole_domain_target_needs_no_iteration(toy_model):
    ctrl = solve_reach(toy_model, CellSet.full(3))
    assert len(ctrl.winning) == 3
    assert ctrl.iterations == 0
    assert np.all(ctrl.policy == HOLD)


def test_empty_target_rejected(toy_model):
    with pytest.raises(ContractViolation):
        solve_reach(toy_model, CellSet.empty(3))
    with pytest.raises(ContractViolation):
        solve_reach(toy_model, CellSet.full(4))


def test_overlapping_target_and_avoid_rejected(toy_model):
    with pytest.raises(ContractViolation):
        solve_reach_avoid(toy_model, CellSet.from_indices(3, [2]), CellSet.from_indices(3, [1, 2]))


def test_avoid_blocks_risky_inputs(toy_model):
    # b can only get to c through u1, which may land in a
    ctrl = solve_reach_avoid(toy_model, CellSet.from_indices(3, [2]), CellSet.from_indices(3, [0]))
    assert set(ctrl.winning) == {1, 2}
    assert ctrl.policy[0] == NO_INPUT
    assert ctrl.policy[1] == 0
    assert ctrl.avoid is not None


def test_determinize_rules():
    admissible = np.array([[False, True, True], [False, False, False], [True, True, False]])
    assert list(determinize(admissible)) == [1, NO_INPUT, 0]
    ranks = np.array([[0, 3, 1], [0, 0, 0], [5, 2, 0]])
    assert list(determinize(admissible, "min_rank_then_min_u", ranks)) == [2, NO_INPUT, 1]
    assert list(determinize(admissible, "max_participation")) == [2, NO_INPUT, 1]
    # mean ranks are fractional; equal means fall back to the lower input
    means = np.array([[0.0, 1.5, 1.5], [0.0, 0.0, 0.0], [0.5, 0.75, 0.0]])
    assert list(determinize(admissible, "min_rank_then_min_u", means)) == [1, NO_INPUT, 0]
    assert list(determinize(admissible, "min_rank_then_min_u")) == [1, NO_INPUT, 0]
    with pytest.raises(ContractViolation):
        determinize(admissible, "max_u")


def _rule_model():
    # cell 2 is won in round two by every input; u1 may still land on the target
    table = {
        (0, 0): [0], (0, 1): [0], (0, 2): [0],
        (1, 0): [0], (1, 1): None, (1, 2): None,
        (2, 0): [1], (2, 1): [0, 1], (2, 2): [1],
    }
    return SymbolicModel.from_explicit(3, 3, table)


@pytest.mark.parametrize(
    "rule, expected",
    [("min_participation", 0), ("max_participation", 2), ("min_rank_then_min_u", 1)],
)
def test_rules_pick_different_inputs_in_the_same_round(rule, expected):
    ctrl = solve_reach(_rule_model(), CellSet.from_indices(3, [0]), rule=rule)
    assert set(ctrl.winning) == {0, 1, 2}
    assert list(ctrl.rank) == [0, 1, 2]
    assert ctrl.policy[2] == expected
    assert ctrl.rule == rule


def test_cell_set_operations():
    a = CellSet.from_indices(6, [0, 2, 4])
    b = CellSet.from_indices(6, [2, 3])
    assert list(a.union(b)) == [0, 2, 3, 4]
    assert list(a.intersection(b)) == [2]
    assert list(a.difference(b)) == [0, 4]
    assert a.intersection(b).issubset(a)
    assert not a.isdisjoint(b)
    assert len(a) == 3 and a.size == 6
    assert 4 in a and 5 not in a and -1 not in a
    assert CellSet.from_packed(a.packed(), 6) == a
    with pytest.raises(ContractViolation):
        CellSet.from_indices(6, [6])


@pytest.mark.parametrize("seed", range(100))
def test_reach_matches_brute_force(make_random_model, seed):
    model, table = make_random_model(seed)
    rng = np.random.default_rng(1000 + seed)
    target = set(int(c) for c in rng.choice(200, size=int(rng.integers(1, 8)), replace=False))
    ctrl = solve_reach(model, CellSet.from_indices(200, sorted(target)))
    win, rank, policy = brute_reach(table, 200, 4, target)
    assert set(ctrl.winning) == win
    for c in win:
        assert ctrl.rank[c] == rank[c]
        assert ctrl.policy[c] == policy[c]
    losing = np.setdiff1d(np.arange(200), sorted(win))
    assert np.all(ctrl.policy[losing] == NO_INPUT)
    assert np.all(ctrl.rank[losing] == -1)


@pytest.mark.parametrize("seed", range(100))
def test_reach_avoid_matches_brute_force(make_random_model, seed):
    model, table = make_random_model(seed)
    rng = np.random.default_rng(2000 + seed)
    picks = rng.choice(200, size=20, replace=False)
    target = set(int(c) for c in picks[:5])
    avoid = set(int(c) for c in picks[5:])
    ctrl = solve_reach_avoid(
        model, CellSet.from_indices(200, sorted(target)), CellSet.from_indices(200, sorted(avoid))
    )
    win, rank, policy = brute_reach(table, 200, 4, target, frozenset(avoid))
    assert set(ctrl.winning) == win
    assert ctrl.winning.isdisjoint(CellSet.from_indices(200, sorted(avoid)))
    for c in win:
        assert ctrl.rank[c] == rank[c]
        assert ctrl.policy[c] == policy[c]


@pytest.mark.parametrize("seed", range(100))
def test_safety_matches_brute_force(make_random_model, seed):
    model, table = make_random_model(seed)
    rng = np.random.default_rng(3000 + seed)
    safe = set(int(c) for c in np.flatnonzero(rng.random(200) < 0.7))
    ctrl = solve_safety(model, CellSet.from_indices(200, sorted(safe)))
    win, policy = brute_safety(table, 200, 4, safe)
    assert set(ctrl.winning) == win
    for c in win:
        assert ctrl.policy[c] == policy[c]


def _closed(model, ctrl):
    """Every chosen move stays inside the winning set (or holds in the target)."""
    for c in ctrl.winning:
        j = ctrl.policy[c]
        if j == HOLD:
            assert c in ctrl.target
            continue
        succ = model.successors(c, int(j))
        assert succ is not None
        for s in succ:
            assert s in ctrl.winning
            if ctrl.rank is not None:
                assert ctrl.rank[s] < ctrl.rank[c]


@pytest.mark.parametrize("seed", range(10))
def test_policies_are_closed(make_random_model, seed):
    model, _ = make_random_model(seed)
    reach = solve_reach(model, CellSet.from_indices(200, [0, 1, 2]))
    _closed(model, reach)
    safety = solve_safety(model, CellSet.from_indices(200, range(100)))
    for c in safety.winning:
        succ = model.successors(c, int(safety.policy[c]))
        assert all(s in safety.winning for s in succ)


@pytest.mark.parametrize("seed", range(10))
def test_winning_set_grows_with_target(make_random_model, seed):
    model, _ = make_random_model(seed)
    small = solve_reach(model, CellSet.from_indices(200, [5]))
    big = solve_reach(model, CellSet.from_indices(200, [5, 50, 150]))
    assert small.winning.issubset(big.winning)
    tight = solve_safety(model, CellSet.from_indices(200, range(80)))
    loose = solve_safety(model, CellSet.from_indices(200, range(160)))
    assert tight.winning.issubset(loose.winning)


def test_solvers_are_deterministic(make_random_model):
    model, _ = make_random_model(42)
    a = solve_reach(model, CellSet.from_indices(200, [3, 9]))
    b = solve_reach(model, CellSet.from_indices(200, [3, 9]))
    assert a.winning == b.winning
    assert np.array_equal(a.policy, b.policy)
    assert np.array_equal(a.rank, b.rank)


def test_safety_chain_drains_to_empty():
    # every cell is forced one step right, the last one leaves the domain
    table = {(c, 0): [c + 1] for c in range(4)}
    table[(4, 0)] = None
    model = SymbolicModel.from_explicit(5, 1, table)
    ctrl = solve_safety(model, CellSet.full(5))
    assert len(ctrl.winning) == 0
    assert np.all(ctrl.policy == NO_INPUT)


def test_controller_rejects_unknown_kind():
    with pytest.raises(ContractViolation):
        Controller(kind="liveness", winning=CellSet.empty(1), policy=np.zeros(1), input_levels=np.zeros(1))


def test_coarse_grid_reach_is_closed(coarse_model):
    grid = coarse_model.grid
    # f no lower than 0.2 Hz below nominal
    target = CellSet(cells_within(grid, F, -0.2, 0.6))
    ctrl = solve_reach(coarse_model, target, name="coarse")
    assert target.issubset(ctrl.winning)
    _closed(coarse_model, ctrl)
    rows = list(controller_rows(ctrl))
    assert len(rows) == len(ctrl.winning)
    for cell, lo, hi, u in rows:
        assert np.all(hi > lo)
        assert u is None or 0.0 <= u <= 1.0
