"""Brute-force reference solvers for small problems."""

from __future__ import annotations

import itertools

import numpy as np


def _eq_lstsq(A, b, E, e):
    """min ||A x - b|| s.t. E x = e through the KKT system (minimum norm if singular)."""
    n = A.shape[1]
    K = np.block([[A.T @ A, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
    rhs = np.concatenate([A.T @ b, e])
    sol = np.linalg.lstsq(K, rhs, rcond=1e-12)[0]
    x = sol[:n]
    if E.shape[0] and np.abs(E @ x - e).max() > 1e-9:
        return None
    return x


def enumerate_hierarchy(levels, C, d, feas_tol=1e-9):
    """Lexicographic optimum by enumerating every candidate active set on every level.

    Returns the per-level optimal residual norms and the final point.
    """
    n = levels[0][0].shape[1]
    E = np.zeros((0, n))
    e = np.zeros(0)
    residuals = []
    x_best = None
    for A, b in levels:
        best = None
        for k in range(0, C.shape[0] + 1):
            for S in itertools.combinations(range(C.shape[0]), k):
                S = list(S)
                x = _eq_lstsq(A, b, np.vstack([E, C[S]]), np.concatenate([e, d[S]]))
                if x is None or np.any(C @ x > d + feas_tol):
                    continue
                r = np.linalg.norm(A @ x - b)
                if best is None or r < best[0] - 1e-12:
                    best = (r, x)
        if best is None:
            raise ValueError("no feasible candidate")
        residuals.append(best[0])
        x_best = best[1]
        E = np.vstack([E, A])
        e = np.concatenate([e, A @ x_best])
    return residuals, x_best
