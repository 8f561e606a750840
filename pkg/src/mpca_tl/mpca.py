"""Mode-2 multilinear PCA fitted jointly on source and target tensors.

Only the column direction (mode 2) of each image is compressed: rows
(sensors) and slices (images) keep their counts. The number of retained
components follows the Q-based rule: the smallest P whose leading
eigenvalues hold at least Q percent of the total variation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .jacobi import sym_eig
from .tensor_core import ShapeError, Tensor3, concat, unfold_mode2

# Jacobi handles eigenproblems up to this size; larger ones go to LAPACK.
JACOBI_MAX_DIM = 128
ZERO_EIG_RTOL = 1e-12


@dataclass(frozen=True)
class ModeBasis:
    basis: np.ndarray  # (i2, p2), orthonormal columns
    eigenvalues: np.ndarray  # full solved spectrum, descending, clamped at 0
    mean_vector: np.ndarray  # (i2,)
    retained_fraction: float
    q_percent: float

    @property
    def i2(self) -> int:
        return self.basis.shape[0]

    @property
    def p2(self) -> int:
        return self.basis.shape[1]

    @property
    def b_transpose(self) -> np.ndarray:
        return self.basis.T

    @property
    def retained_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[: self.p2]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.basis).tobytes())
        h.update(np.ascontiguousarray(self.mean_vector).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class JointFitResult:
    basis: ModeBasis
    projected_source: Tensor3
    projected_target: Tensor3

    @property
    def p2(self) -> int:
        return self.basis.p2


def _centered_mode2(t: Tensor3, center: bool):
    x = unfold_mode2(t)
    mean = x.mean(axis=1) if center else np.zeros(t.i2)
    return x - mean[:, None], mean


def mode2_scatter(t: Tensor3, center: bool = True) -> np.ndarray:
    xc, _ = _centered_mode2(t, center)
    s = xc @ xc.T
    return 0.5 * (s + s.T)


def _eigh(s: np.ndarray, solver: str):
    if solver == "auto":
        solver = "jacobi" if s.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if solver == "jacobi":
        return sym_eig(s)
    if solver == "lapack":
        w, v = np.linalg.eigh(0.5 * (s + s.T))
        return w[::-1].copy(), v[:, ::-1].copy()
    raise ValueError(f"unknown eigensolver {solver!r}")


def select_components(eigenvalues, q_percent: float) -> int:
    """Smallest count of leading eigenvalues holding ``q_percent`` of the total."""
    if not 0 < q_percent <= 100:
        raise ValueError(f"q_percent must lie in (0, 100], got {q_percent}")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size == 0:
        raise ValueError("empty spectrum")
    cum = np.cumsum(lam)
    total = cum[-1]
    if total <= 0:
        return 1
    if q_percent == 100:
        return max(1, int(np.count_nonzero(lam > ZERO_EIG_RTOL * lam[0])))
    frac = cum / total
    return int(np.argmax(frac >= q_percent / 100.0)) + 1


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit_basis(t: Tensor3, q_percent: float, center: bool = True, solver: str = "auto") -> ModeBasis:
    """Fit the mode-2 basis of a single tensor."""
    if not 0 < q_percent <= 100:
        raise ValueError(f"q_percent must lie in (0, 100], got {q_percent}")
    xc, mean = _centered_mode2(t, center)
    i2, n_vec = xc.shape

    if n_vec < i2:
        # Gram trick: same nonzero spectrum from the smaller n_vec x n_vec problem
        gram = xc.T @ xc
        lam, u = _eigh(0.5 * (gram + gram.T), solver)
        lam = np.clip(lam, 0.0, None)
        p2 = select_components(lam, q_percent)
        if lam[0] <= 0:
            vecs = np.eye(i2, p2)
        else:
            keep = np.maximum(lam[:p2], ZERO_EIG_RTOL * lam[0])
            vecs = (xc @ u[:, :p2]) / np.sqrt(keep)
            q, r = np.linalg.qr(vecs)
            vecs = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    else:
        s = xc @ xc.T
        lam, v = _eigh(0.5 * (s + s.T), solver)
        lam = np.clip(lam, 0.0, None)
        p2 = select_components(lam, q_percent)
        vecs = v[:, :p2]

    total = lam.sum()
    retained = float(lam[:p2].sum() / total) if total > 0 else 1.0
    basis = np.ascontiguousarray(_fix_signs(vecs))
    for arr in (basis, lam, mean):
        arr.setflags(write=False)
    return ModeBasis(basis, lam, mean, retained, float(q_percent))


def project(t: Tensor3, basis: ModeBasis) -> Tensor3:
    if t.i2 != basis.i2:
        raise ShapeError(f"tensor has {t.i2} columns, basis expects {basis.i2}")
    return Tensor3._adopt((t.data - basis.mean_vector) @ basis.basis)


def reconstruct(p: Tensor3, basis: ModeBasis) -> Tensor3:
    if p.i2 != basis.p2:
        raise ShapeError(f"projected tensor has {p.i2} columns, basis retains {basis.p2}")
    return Tensor3._adopt(p.data @ basis.basis.T + basis.mean_vector)


def fit_joint(source: Tensor3, target: Tensor3, q_percent: float = 99.0,
              center: bool = True, solver: str = "auto") -> JointFitResult:
    """Fit one basis on source and target slices together and project both."""
    if source.i1 != target.i1 or source.i2 != target.i2:
        raise ShapeError(f"domain dims differ: source {source.dims}, target {target.dims}")
    basis = fit_basis(concat(source, target), q_percent, center=center, solver=solver)
    return JointFitResult(basis, project(source, basis), project(target, basis))
