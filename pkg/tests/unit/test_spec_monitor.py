import math
import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[2]))

from freqsynth.errors import ContractViolation, ParameterError
from freqsynth.spec_monitor import (
    Always,
    And,
    Atom,
    Const,
    Eventually,
    EventuallyWithin,
    Implies,
    Next,
    Not,
    Or,
    SpecConfig,
    TrueF,
    Until,
    check_requirements,
    check_two_stage,
    eval_formula,
    evaluate,
    f_at_least,
)


def naive(phi, i, n, tau):
    """Direct recursive reading of the finite-trace semantics."""
    if isinstance(phi, TrueF):
        return True
    if isinstance(phi, Const):
        return phi.value
    if isinstance(phi, Atom):
        return bool(phi.fn(None)[i])
    if isinstance(phi, Not):
        return not naive(phi.arg, i, n, tau)
    if isinstance(phi, And):
        return naive(phi.left, i, n, tau) and naive(phi.right, i, n, tau)
    if isinstance(phi, Or):
        return naive(phi.left, i, n, tau) or naive(phi.right, i, n, tau)
    if isinstance(phi, Implies):
        return (not naive(phi.left, i, n, tau)) or naive(phi.right, i, n, tau)
    if isinstance(phi, Next):
        return i + 1 < n and naive(phi.arg, i + 1, n, tau)
    if isinstance(phi, Until):
        for j in range(i, n):
            if naive(phi.right, j, n, tau):
                return all(naive(phi.left, m, n, tau) for m in range(i, j))
        return False
    if isinstance(phi, Eventually):
        return any(naive(phi.arg, j, n, tau) for j in range(i, n))
    if isinstance(phi, Always):
        return all(naive(phi.arg, j, n, tau) for j in range(i, n))
    if isinstance(phi, EventuallyWithin):
        k = math.floor(phi.seconds / tau + 1e-9)
        return any(naive(phi.arg, j, n, tau) for j in range(i, min(n, i + k + 1)))
    raise TypeError(phi)


def random_formula(rng, atoms, depth):
    if depth == 0 or rng.random() < 0.25:
        return atoms[int(rng.integers(len(atoms)))]
    kind = int(rng.integers(9))
    sub = lambda: random_formula(rng, atoms, depth - 1)  # noqa: E731
    if kind == 0:
        return Not(sub())
    if kind == 1:
        return And(sub(), sub())
    if kind == 2:
        return Or(sub(), sub())
    if kind == 3:
        return Implies(sub(), sub())
    if kind == 4:
        return Next(sub())
    if kind == 5:
        return Until(sub(), sub())
    if kind == 6:
        return Eventually(sub())
    if kind == 7:
        return Always(sub())
    return EventuallyWithin(sub(), float(rng.choice([0.25, 0.5, 1.0, 2.5])))


def _atoms(rng, n):
    out = []
    for name in ("p", "q", "r"):
        values = rng.random(n) < 0.5
        out.append(Atom(name, lambda tr, v=values: v))
    return out


def test_vectorised_evaluation_matches_naive(make_trace):
    rng = np.random.default_rng(2024)
    for _ in range(300):
        n = int(rng.integers(1, 12))
        trace = make_trace(np.full(n, 50.0))
        phi = random_formula(rng, _atoms(rng, n), 4)
        got = evaluate(phi, trace)
        want = [naive(phi, i, n, trace.tau) for i in range(n)]
        assert list(got) == want, str(phi)


def test_identities_on_random_traces(make_trace):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 15))
        trace = make_trace(np.full(n, 50.0))
        p, q, _ = _atoms(rng, n)
        assert np.array_equal(evaluate(Eventually(p), trace), evaluate(Until(TrueF(), p), trace))
        assert np.array_equal(evaluate(Always(p), trace), evaluate(Not(Eventually(Not(p))), trace))
        assert np.array_equal(
            evaluate(Until(p, q), trace),
            evaluate(Or(q, And(p, Next(Until(p, q)))), trace),
        )
        assert np.array_equal(evaluate(EventuallyWithin(p, 1e6), trace), evaluate(Eventually(p), trace))


def test_next_is_false_at_last_position(make_trace):
    trace = make_trace([50.0, 50.0, 50.0])
    assert list(evaluate(Next(TrueF()), trace)) == [True, True, False]


def test_window_boundary(make_trace):
    # tau 0.25 and a 1 s window: the witness may be four samples ahead
    f = [49.0, 49.0, 49.0, 49.0, 50.0]
    trace = make_trace(f)
    assert eval_formula(EventuallyWithin(f_at_least(49.5), 1.0), trace)
    assert not eval_formula(EventuallyWithin(f_at_least(49.5), 0.75), trace)
    with pytest.raises(ParameterError):
        EventuallyWithin(TrueF(), 0.0)


def test_eval_formula_checks_position(make_trace):
    trace = make_trace([50.0])
    with pytest.raises(ContractViolation):
        eval_formula(TrueF(), trace, 1)


def test_atom_shape_is_checked(make_trace):
    trace = make_trace([50.0, 50.0])
    with pytest.raises(ContractViolation):
        evaluate(Atom("bad", lambda tr: np.ones(3, dtype=bool)), trace)


def _dip(depth_hz, seconds, before=5, after=40, recover=49.8):
    return [50.0] * before + [depth_hz] * seconds + [recover] * after


def test_return_window_on_infrequent_loss(make_trace):
    cfg = SpecConfig()
    slow = check_requirements(make_trace(_dip(49.3, 70), tau=1.0), 1800.0, cfg)
    assert not slow.psi3.holds
    assert slow.psi3.first_violation_s == pytest.approx(5.0)
    assert slow.psi1.holds
    assert not slow.psi.holds

    quick = check_requirements(make_trace(_dip(49.3, 50), tau=1.0), 1800.0, cfg)
    assert quick.psi3.holds
    assert quick.psi.holds


def test_containment_breach(make_trace):
    report = check_requirements(make_trace(_dip(48.8, 10), tau=1.0), 1800.0, SpecConfig())
    assert not report.psi1.holds
    assert report.psi1.first_violation_s == pytest.approx(5.0)


def test_normal_loss_needs_statutory_band(make_trace):
    trace = make_trace(_dip(49.4, 10), tau=1.0)
    report = check_requirements(trace, 1000.0, SpecConfig())
    assert not report.psi2.holds
    assert report.psi3.holds
    # between the classes neither conditional requirement applies
    middle = check_requirements(trace, 1500.0, SpecConfig())
    assert middle.psi2.holds and middle.psi3.holds and middle.psi.holds


def test_tighter_containment_only_removes_traces(make_trace):
    rng = np.random.default_rng(5)
    loose, tight = SpecConfig(c_zone=49.2), SpecConfig(c_zone=49.4)
    for _ in range(200):
        trace = make_trace(rng.uniform(49.0, 50.0, size=20))
        if check_requirements(trace, 1800.0, tight).psi1.holds:
            assert check_requirements(trace, 1800.0, loose).psi1.holds


def test_two_stage_report(make_trace):
    cfg = SpecConfig.for_mode("bi")
    good = check_two_stage(make_trace(_dip(49.4, 10, recover=49.9), tau=1.0), cfg)
    assert good.psi.holds

    stuck_in_i1 = check_two_stage(make_trace(_dip(49.4, 10, recover=49.75), tau=1.0), cfg)
    assert stuck_in_i1.reach_i1.holds
    assert not stuck_in_i1.reach_i2.holds
    assert not stuck_in_i1.psi.holds

    never_back = check_two_stage(make_trace(_dip(49.4, 10, recover=49.5), tau=1.0), cfg)
    assert not never_back.reach_i1.holds
    assert never_back.reach_i1.first_violation_s == pytest.approx(5.0)


def test_spec_config_for_mode():
    assert SpecConfig.for_mode("uni").i1 == (49.55, 50.0)
    assert SpecConfig.for_mode("bi").i2 == (49.85, 50.0)
    assert SpecConfig.for_mode("bi").deviation((49.7, 50.0)) == pytest.approx((-0.3, 0.0))
    with pytest.raises(ParameterError):
        SpecConfig.for_mode("tri")
    with pytest.raises(ParameterError):
        SpecConfig(i1=(49.8, 50.0), i2=(49.7, 50.0))


def test_reports_serialise(make_trace):
    report = check_requirements(make_trace(_dip(49.3, 10), tau=1.0), 1800.0, SpecConfig())
    data = report.to_dict()
    assert data["psi"]["holds"] is True
    assert set(data) == {"loss_mw", "psi1", "psi2", "psi3", "psi"}
    assert "G(" in data["psi1"]["formula"]
