"""Dense active-set QP and lexicographic (hierarchical) least-squares solver."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, MaxIterations, RankWarning

RANK_RTOL = 1e-10
FEAS_TOL = 1e-9
STEP_TOL = 1e-10


@dataclass
class TaskLevel:
    A: np.ndarray
    b: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.shape[0] or self.A.shape[0] < 1:
            raise ValueError(f"task {self.name!r}: A has {self.A.shape[0]} rows, b has {self.b.shape[0]}")


@dataclass
class InequalitySet:
    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.d = np.asarray(self.d, dtype=float).reshape(-1)

    @classmethod
    def empty(cls, n: int) -> "InequalitySet":
        return cls(np.zeros((0, n)), np.zeros(0))

    def violation(self, x) -> float:
        if self.d.size == 0:
            return 0.0
        return float(max(0.0, (self.C @ x - self.d).max()))


@dataclass
class QpResult:
    x: np.ndarray
    active: list[int]
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray  # full length, zero for inactive rows
    iterations: int
    stationarity: float
    eq_violation: float
    ineq_violation: float
    complementarity: float


@dataclass
class HqpSolution:
    x: np.ndarray
    residuals: list[float]
    eq_violation: float
    ineq_violation: float
    stationarity: float
    iterations: int
    active: list[int] = field(default_factory=list)


# ---------------------------------------------------------------- helpers


def _nullspace(A, b, rtol=RANK_RTOL):
    """Orthonormal nullspace basis Z and minimum-norm particular solution of ``A x = b``."""
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n), np.zeros(n), 0
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(n), np.zeros(n), 0
    r = int(np.sum(s > rtol * s[0]))
    x0 = Vt[:r].T @ ((U[:, :r].T @ b) / s[:r])
    return Vt[r:].T, x0, r


def _lstsq(A, b):
    if A.shape[1] == 0:
        return np.zeros(0)
    return np.linalg.lstsq(A, b, rcond=RANK_RTOL)[0]


def _independent(rows, candidate_rows, tol=1e-9):
    """Greedy subset of ``candidate_rows`` keeping ``rows`` stacked with them full rank."""
    keep = []
    basis = rows
    for i, r in candidate_rows:
        trial = np.vstack([basis, r]) if basis.size else r[None, :]
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(trial).max())) == trial.shape[0]:
            keep.append(i)
            basis = trial
    return keep


def _phase_one(C, d, n):
    """Feasible point of C y <= d by linear programming; raises Infeasible."""
    res = linprog(np.r_[np.zeros(n), 1.0], A_ub=np.hstack([C, -np.ones((C.shape[0], 1))]), b_ub=d,
                  bounds=[(None, None)] * n + [(0.0, None)], method="highs")
    if res.status != 0 or res.x[-1] > FEAS_TOL:
        y = res.x[:n] if res.x is not None else np.zeros(n)
        worst = int(np.argmax(C @ y - d))
        raise Infeasible(f"infeasible: inequality row {worst} violated by {float((C @ y - d)[worst]):.3e}",
                         violation=float((C @ y - d)[worst]))
    return res.x[:n]


def _active_set(eqp, grad, C, d, y, W, max_iter, tol):
    """Primal active-set iterations from a feasible ``y`` with working set ``W``."""
    W = list(W)
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        y_eq = eqp(W)
        p = y_eq - y
        # roundoff at a vertex produces steps near 1e-12; treating them as real steps
        # adds dependent rows to W and can cycle
        if np.abs(p).max(initial=0.0) <= max(tol, STEP_TOL) * (1.0 + np.abs(y).max(initial=0.0)):
            y = y_eq
            g, g_scale = grad(y)
            if not W:
                return y, W, np.zeros(0), it
            lam = _lstsq(C[W].T, -g)
            neg = np.flatnonzero(lam < -1e-10 * (1.0 + g_scale))
            if neg.size == 0:
                return y, W, lam, it
            # lowest index among negative multipliers (Bland) rules out cycling at degenerate vertices
            W.pop(min(neg, key=lambda k: W[k]))
            continue
        Cp = C @ p
        slack = np.maximum(d - C @ y, 0.0)
        scale = np.linalg.norm(C, axis=1) * np.linalg.norm(p)
        cand = [i for i in np.flatnonzero(Cp > 1e-10 * scale) if i not in W]
        alpha, block = 1.0, None
        if cand:
            ratios = slack[cand] / Cp[cand]
            rmin = ratios.min()
            if rmin < 1.0:
                alpha = rmin
                block = int(min(i for i, r in zip(cand, ratios) if r <= rmin + 1e-14))
        y = y + alpha * p
        if block is not None:
            W.append(block)
    raise MaxIterations(f"active-set method exceeded {max_iter} iterations")


def _working_eqp(Zc, xc, C, d, W, solve):
    """Minimize within ``{C_W y = d_W}``, parameterized by ``solve(Z, y_p)``."""
    if not W:
        return solve(None, None)
    Zw, yp, _ = _nullspace(C[W], d[W])
    return solve(Zw, yp)


# ---------------------------------------------------------------- QP


def solve_qp(H, f, A_eq=None, b_eq=None, C=None, d=None, warm_start=None, max_iter: int = 500,
             tol: float = 1e-12) -> QpResult:
    """min ½ xᵀHx + fᵀx  s.t.  A_eq x = b_eq,  C x <= d   (H symmetric PSD).

    Redundant equality rows are removed by a rank-revealing SVD; directions
    of zero curvature are resolved towards the minimum-norm point.
    ``warm_start`` is either a point or a previous :class:`QpResult`.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    f = np.asarray(f, dtype=float).reshape(n)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float)).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, n)
    d = np.zeros(0) if d is None else np.asarray(d, dtype=float).reshape(-1)

    Z, x0, _ = _nullspace(A_eq, b_eq)
    eq_resid = np.abs(A_eq @ x0 - b_eq).max(initial=0.0)
    if eq_resid > 1e-8 * (1.0 + np.abs(b_eq).max(initial=0.0)):
        raise Infeasible(f"inconsistent equality constraints (residual {eq_resid:.3e})", violation=eq_resid)
    Ht = Z.T @ H @ Z
    ft = Z.T @ (H @ x0 + f)
    Ct = C @ Z
    dt = d - C @ x0
    k = Z.shape[1]

    def solve(Zw, yp):
        if Zw is None:
            return _lstsq(Ht, -ft)
        z = _lstsq(Zw.T @ Ht @ Zw, -Zw.T @ (Ht @ yp + ft))
        return yp + Zw @ z

    def grad(y):
        # second value: magnitude of the terms summed, which sets the roundoff floor
        return Ht @ y + ft, np.abs(Ht).max(initial=0.0) * np.abs(y).max(initial=0.0) + np.abs(ft).max(initial=0.0)

    y, W0 = None, []
    if warm_start is not None:
        xw = warm_start.x if isinstance(warm_start, QpResult) else np.asarray(warm_start, dtype=float)
        yw = Z.T @ (xw - x0)
        if np.all(Ct @ yw <= dt + FEAS_TOL):
            y = yw
            if isinstance(warm_start, QpResult):
                cand = [(i, Ct[i]) for i in warm_start.active if i < Ct.shape[0] and abs(Ct[i] @ y - dt[i]) <= 1e-9]
                W0 = _independent(np.zeros((0, k)), cand)
    if y is None:
        y = np.zeros(k)
        if Ct.shape[0] and not np.all(Ct @ y <= dt + FEAS_TOL):
            y = _phase_one(Ct, dt, k)
    y, W, lam, it = _active_set(lambda W: _working_eqp(None, None, Ct, dt, W, solve), grad, Ct, dt, y, W0,
                                max_iter, tol)
    x = x0 + Z @ y
    full_lam = np.zeros(C.shape[0])
    full_lam[W] = lam
    g = H @ x + f + C.T @ full_lam
    nu = _lstsq(A_eq.T, -g) if A_eq.shape[0] else np.zeros(0)
    stat = np.abs(g + A_eq.T @ nu).max(initial=0.0)
    viol = float(max(0.0, (C @ x - d).max(initial=0.0)))
    comp = float(np.abs(full_lam * (C @ x - d)).max(initial=0.0))
    return QpResult(x, sorted(W), nu, full_lam, it, float(stat),
                    float(np.abs(A_eq @ x - b_eq).max(initial=0.0)), viol, comp)


# ---------------------------------------------------------------- hierarchy


class HierarchicalSolver:
    """Solves a priority-ordered stack of least-squares tasks.

    Level i minimizes ||A_i x - b_i||² while every higher level is locked to
    its optimum (A_k x = A_k x_k*) and the shared inequalities hold. Holds
    the previous solution for warm starts, so use one instance per control loop.
    """

    def __init__(self, max_iter: int = 500, tol: float = 1e-12, dump_dir=None):
        self.max_iter = max_iter
        self.tol = tol
        self.previous: HqpSolution | None = None
        self.dump_dir = Path(dump_dir) if dump_dir else None
        self._dump_count = 0

    def solve(self, levels: list[TaskLevel], ineq: InequalitySet, warm_start=None) -> HqpSolution:
        if warm_start is None and self.previous is not None:
            warm_start = self.previous
        sol = solve_hierarchy(levels, ineq, warm_start=warm_start, max_iter=self.max_iter, tol=self.tol)
        self.previous = sol
        if self.dump_dir is not None:
            self.dump(levels, ineq, sol)
        return sol

    def dump(self, levels, ineq, sol):
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        path = self.dump_dir / f"qp_{self._dump_count:06d}.json"
        self._dump_count += 1
        path.write_text(json.dumps(problem_archive(levels, ineq, sol)))


def problem_archive(levels, ineq, sol=None) -> dict:
    doc = {
        "levels": [{"name": lv.name, "A": lv.A.tolist(), "b": lv.b.tolist()} for lv in levels],
        "C": ineq.C.tolist(),
        "d": ineq.d.tolist(),
    }
    if sol is not None:
        doc["x"] = sol.x.tolist()
        doc["residuals"] = sol.residuals
    return doc


def load_problem_archive(path) -> tuple[list[TaskLevel], InequalitySet]:
    doc = json.loads(Path(path).read_text())
    levels = [TaskLevel(np.array(lv["A"]), np.array(lv["b"]), lv.get("name", "")) for lv in doc["levels"]]
    n = levels[0].A.shape[1]
    C = np.array(doc["C"]).reshape(-1, n)
    return levels, InequalitySet(C, np.array(doc["d"]))


def solve_hierarchy(levels: list[TaskLevel], ineq: InequalitySet | None = None, warm_start=None,
                    max_iter: int = 500, tol: float = 1e-12) -> HqpSolution:
    """Lexicographic least squares with equality locking of higher levels."""
    if not levels:
        raise ValueError("empty task hierarchy")
    n = levels[0].A.shape[1]
    ineq = ineq or InequalitySet.empty(n)
    C, d = ineq.C, ineq.d
    p = C.shape[0]

    if warm_start is not None:
        xw = warm_start.x if isinstance(warm_start, HqpSolution) else np.asarray(warm_start, dtype=float)
        x = xw.copy() if p == 0 or np.all(C @ xw <= d + FEAS_TOL) else None
    else:
        x = None
    if x is None:
        x = np.zeros(n)
        if p and not np.all(C @ x <= d + FEAS_TOL):
            try:
                x = _phase_one(C, d, n)
            except Infeasible as exc:
                raise Infeasible(f"level 1 {exc}", level=1, violation=exc.violation) from exc
    W = [i for i in (warm_start.active if isinstance(warm_start, HqpSolution) else [])
         if abs(C[i] @ x - d[i]) <= 1e-9]

    # Each lock A_k x = A_k x_k* confines later levels to the common nullspace Z of the
    # locked rows; x = x_prev + Z y keeps every lock satisfied exactly.
    Z = np.eye(n)
    optima = []
    iterations = 0
    last_Z = Z
    for i, lv in enumerate(levels, start=1):
        last_Z = Z
        k = Z.shape[1]
        if k == 0:
            optima.append(x.copy())
            continue
        At = lv.A @ Z
        bt = lv.b - lv.A @ x
        _, s, Vt = np.linalg.svd(At, full_matrices=True)
        rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        if 0 < rank < min(At.shape):
            warnings.warn(f"level {i} ({lv.name or 'task'}) has rank {rank} < {min(At.shape)} on the "
                          "remaining subspace; minimum-norm regularization engages", RankWarning, stacklevel=2)
        Ct = C @ Z
        dt = d - C @ x

        def solve(Zw, yp, At=At, bt=bt):
            if Zw is None:
                return _lstsq(At, bt)
            return yp + Zw @ _lstsq(At @ Zw, bt - At @ yp)

        def grad(yy, At=At, bt=bt):
            r = At @ yy - bt
            size = np.abs(At).max(initial=0.0)
            return At.T @ r, size * (size * np.abs(yy).max(initial=0.0) + np.abs(bt).max(initial=0.0))

        y = np.zeros(k)
        W0 = _independent(np.zeros((0, k)), [(j, Ct[j]) for j in W if abs(dt[j]) <= 1e-9])
        try:
            y, W, _, it = _active_set(lambda W: _working_eqp(None, None, Ct, dt, W, solve), grad, Ct, dt, y, W0,
                                      max_iter, tol)
        except MaxIterations as exc:
            raise MaxIterations(f"level {i}: {exc}") from exc
        iterations += it
        x = x + Z @ y
        optima.append(x.copy())
        Z = Z @ Vt[rank:].T

    residuals = [float(np.linalg.norm(lv.A @ x - lv.b)) for lv in levels]
    eq_viol = max(float(np.abs(lv.A @ x - lv.A @ xo).max()) for lv, xo in zip(levels, optima))
    ineq_viol = float(max(0.0, (C @ x - d).max(initial=0.0)))
    # stationarity of the last level on its own feasible subspace
    g = last_Z.T @ (levels[-1].A.T @ (levels[-1].A @ x - levels[-1].b))
    if W and last_Z.shape[1]:
        CW = C[W] @ last_Z
        g = g + CW.T @ _lstsq(CW.T, -g)
    stat = float(np.abs(g).max(initial=0.0))
    return HqpSolution(x, residuals, eq_viol, ineq_viol, stat, iterations, sorted(W))
