import warnings

import numpy as np
import pytest

from loopwbc.errors import Infeasible, RankWarning
from loopwbc.hqp import (HierarchicalSolver, InequalitySet, TaskLevel, load_problem_archive, solve_hierarchy,
                         solve_qp)
from oracles import enumerate_hierarchy


def test_single_level_without_inequalities():
    sol = solve_hierarchy([TaskLevel(np.eye(2), [1, 2])])
    assert np.allclose(sol.x, [1, 2])


def test_inequality_clips_level_one():
    sol = solve_hierarchy([TaskLevel([[1.0]], [1.0])], InequalitySet([[1.0]], [0.5]))
    assert sol.x[0] == pytest.approx(0.5)


def test_conflicting_levels_keep_priority():
    sol = solve_hierarchy([TaskLevel([[1.0]], [1.0]), TaskLevel([[1.0]], [2.0])])
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.residuals == pytest.approx([0.0, 1.0])


def test_infeasible_inequalities_raise_at_level_one():
    with pytest.raises(Infeasible) as err:
        solve_hierarchy([TaskLevel([[1.0]], [0.0])], InequalitySet([[1.0], [-1.0]], [-1.0, -1.0]))
    assert err.value.level == 1


def test_rank_deficient_level_warns():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        solve_hierarchy([TaskLevel([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]], [1.0, 2.0])])
    assert any(issubclass(w.category, RankWarning) for w in rec)


def _random_stack(rng):
    n = int(rng.integers(2, 11))
    p = int(rng.integers(0, 7))
    levels = []
    for _ in range(int(rng.integers(1, 4))):
        m = int(rng.integers(1, max(2, n // 2) + 1))
        levels.append((rng.normal(size=(m, n)), rng.normal(size=m)))
    levels.append((np.eye(n), rng.normal(size=n)))  # makes the optimum unique
    C = rng.normal(size=(p, n))
    x_feas = rng.normal(size=n)
    d = C @ x_feas + rng.uniform(0.0, 1.0, p)
    return levels, C, d


def test_matches_active_set_enumeration_on_random_stacks():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        levels, C, d = _random_stack(rng)
        ref_res, ref_x = enumerate_hierarchy(levels, C, d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            sol = solve_hierarchy([TaskLevel(A, b) for A, b in levels], InequalitySet(C, d))
        worst = max(worst, np.abs(np.array(sol.residuals) - ref_res).max(), np.abs(sol.x - ref_x).max())
        assert sol.ineq_violation <= 1e-9
    assert worst < 1e-7


def test_degenerate_and_scaled_stacks_terminate():
    # duplicated rows and many constraints tight at one point used to cycle once levels were scaled
    rng = np.random.default_rng(123)
    worst = 0.0
    for k in range(300):
        levels, C, d = _random_stack(rng)
        if k % 3 == 1 and C.shape[0] > 1:
            C, d = np.vstack([C, 2.0 * C[:1]]), np.r_[d, 2.0 * d[0]]
        if k % 3 == 2 and C.shape[0] > 2:
            d = C @ rng.normal(size=C.shape[1])
            d[::2] += 0.3
        scale = rng.uniform(0.01, 100.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            sol = solve_hierarchy([TaskLevel(scale * A, scale * b) for A, b in levels], InequalitySet(C, d))
        ref_res, ref_x = enumerate_hierarchy(levels, C, d)
        worst = max(worst, np.abs(np.array(sol.residuals) / scale - ref_res).max(), np.abs(sol.x - ref_x).max())
    assert worst < 1e-7


def test_lexicographic_dominance_against_weighted_qp():
    # a heavily weighted single QP approaches the hierarchy but never beats level 1
    rng = np.random.default_rng(3)
    for _ in range(20):
        levels, C, d = _random_stack(rng)
        sol = solve_hierarchy([TaskLevel(A, b) for A, b in levels], InequalitySet(C, d))
        n = C.shape[1]
        H = np.zeros((n, n))
        f = np.zeros(n)
        for i, (A, b) in enumerate(levels):
            w = 1e-3 ** i
            H += w * A.T @ A
            f -= w * A.T @ b
        qp = solve_qp(H, f, C=C, d=d)
        A1, b1 = levels[0]
        assert np.linalg.norm(A1 @ sol.x - b1) <= np.linalg.norm(A1 @ qp.x - b1) + 1e-9


def test_qp_kkt_conditions():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = 6
        L = rng.normal(size=(n, n))
        H = L @ L.T + 0.1 * np.eye(n)
        f = rng.normal(size=n)
        A = rng.normal(size=(2, n))
        b = rng.normal(size=2)
        C = rng.normal(size=(5, n))
        d = rng.uniform(0.1, 1.0, 5)
        x0 = np.linalg.lstsq(A, b, rcond=None)[0]
        d = d + C @ x0
        r = solve_qp(H, f, A, b, C, d)
        assert r.stationarity < 1e-9
        assert r.eq_violation < 1e-10
        assert r.ineq_violation < 1e-10
        assert r.complementarity < 1e-9
        assert np.all(r.ineq_multipliers >= -1e-12)


def test_warm_start_reaches_same_solution():
    rng = np.random.default_rng(5)
    levels, C, d = _random_stack(rng)
    tl = [TaskLevel(A, b) for A, b in levels]
    cold = solve_hierarchy(tl, InequalitySet(C, d))
    warm = solve_hierarchy(tl, InequalitySet(C, d), warm_start=cold)
    assert np.allclose(cold.x, warm.x, atol=1e-10)


def test_dump_and_reload(tmp_path):
    solver = HierarchicalSolver(dump_dir=tmp_path)
    levels = [TaskLevel([[1.0, 0.0]], [1.0]), TaskLevel(np.eye(2), [0.0, 3.0])]
    ineq = InequalitySet([[0.0, 1.0]], [2.0])
    sol = solver.solve(levels, ineq)
    files = sorted(tmp_path.glob("*.json"))
    assert len(files) == 1
    lv2, ineq2 = load_problem_archive(files[0])
    again = solve_hierarchy(lv2, ineq2)
    assert np.allclose(again.x, sol.x)
    assert np.allclose(sol.x, [1.0, 2.0])


def test_appending_a_level_keeps_higher_residuals():
    rng = np.random.default_rng(21)
    for _ in range(30):
        levels, C, d = _random_stack(rng)
        tl = [TaskLevel(A, b) for A, b in levels[:-1]]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            short = solve_hierarchy(tl, InequalitySet(C, d))
            longer = solve_hierarchy(tl + [TaskLevel(rng.normal(size=(2, C.shape[1])), rng.normal(size=2))],
                                     InequalitySet(C, d))
        assert np.abs(np.array(short.residuals) - longer.residuals[:-1]).max() < 1e-8


def test_level_scaling_leaves_solution_unchanged():
    rng = np.random.default_rng(22)
    for _ in range(30):
        levels, C, d = _random_stack(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            a = solve_hierarchy([TaskLevel(A, b) for A, b in levels], InequalitySet(C, d))
            b_ = solve_hierarchy([TaskLevel(3.7 * A, 3.7 * b) for A, b in levels], InequalitySet(C, d))
        assert np.abs(a.x - b_.x).max() < 1e-8


def test_locked_levels_and_inequalities_hold_in_diagnostics():
    rng = np.random.default_rng(23)
    for _ in range(30):
        levels, C, d = _random_stack(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            sol = solve_hierarchy([TaskLevel(A, b) for A, b in levels], InequalitySet(C, d))
        assert sol.eq_violation <= 1e-8
        assert sol.ineq_violation <= 1e-8
