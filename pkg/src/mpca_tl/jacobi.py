"""Dense symmetric eigensolver by cyclic Jacobi rotations.

Each sweep visits every off-diagonal pair once using round-robin ordering:
the ``n/2`` pairs of one round are disjoint, so their rotations commute and
are applied together as whole-row and whole-column updates.
"""
from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"Jacobi did not converge in {sweeps} sweeps (max off-diagonal {residual:.3e})")
        self.residual = residual
        self.sweeps = sweeps


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _max_offdiag(a: np.ndarray) -> float:
    off = np.abs(a - np.diag(np.diag(a)))
    return float(off.max()) if off.size else 0.0


def sym_eig(s, tol: float = 1e-11, max_sweeps: int = 100, sym_tol: float = 1e-9):
    """Eigen-decompose a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and eigenvectors as orthonormal columns. Rotations stop once the
    largest off-diagonal magnitude is at most ``tol * ||s||_F``.
    """
    a = np.array(s, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    n = a.shape[0]
    fro = float(np.linalg.norm(a))
    asym = float(np.abs(a - a.T).max()) if n else 0.0
    if asym > sym_tol * max(1.0, fro):
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * fro

    rounds = _round_robin(n)
    for sweep in range(max_sweeps + 1):
        residual = _max_offdiag(a)
        if residual <= threshold:
            break
        if sweep == max_sweeps:
            raise ConvergenceError(residual, max_sweeps)
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = t * c

            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - sn[:, None] * rq
            a[q, :] = sn[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * sn
            a[:, q] = cp * sn + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * sn
            v[:, q] = vp * sn + vq * c

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
