"""Combined signed Laplacian and its low-frequency eigenvectors.

The combined operator is ``(L_pos - alpha * L_neg) / (1 - alpha)`` where each
term is the symmetric normalized Laplacian of one sign's subgraph. Nodes
without edges of a sign contribute an all-zero row to that term, which keeps
``z @ L_pos @ z`` equal to the plain edge sum over positive edges of
``(z_u / sqrt(d_u) - z_i / sqrt(d_i))**2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import ConfigError, DataError, NumericalError
from .graph import SignedBipartiteGraph

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000
RESIDUAL_TOL = 1e-6
ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class SignedLaplacian:
    alpha: float
    matrix: sp.csr_matrix

    @property
    def order(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpectralBasis:
    """Smallest eigenpairs; ``vectors`` is ``(d_h, order)``, one eigenvector per row."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def d_h(self) -> int:
        return len(self.values)

    @property
    def order(self) -> int:
        return self.vectors.shape[1]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not -1.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (-1, 1), got {alpha}")
    return alpha


def normalized_laplacian(indptr: np.ndarray, indices: np.ndarray) -> sp.csr_matrix:
    size = len(indptr) - 1
    deg = np.diff(indptr).astype(float)
    inv_sqrt = np.zeros(size)
    np.divide(1.0, np.sqrt(deg), out=inv_sqrt, where=deg > 0)
    rows = np.repeat(np.arange(size), np.diff(indptr))
    off = sp.csr_matrix((-inv_sqrt[rows] * inv_sqrt[indices], (rows, indices)), shape=(size, size))
    return (sp.diags((deg > 0).astype(float)) + off).tocsr()


def build_laplacian(graph: SignedBipartiteGraph, alpha: float) -> SignedLaplacian:
    alpha = _check_alpha(alpha)
    lpos = normalized_laplacian(graph.pos_indptr, graph.pos_indices)
    lneg = normalized_laplacian(graph.neg_indptr, graph.neg_indices)
    matrix = ((lpos - alpha * lneg) / (1.0 - alpha)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return SignedLaplacian(alpha, matrix)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its first clearly nonzero entry is positive."""
    out = vectors.copy()
    for k, row in enumerate(out):
        scale = np.abs(row).max()
        if scale == 0:
            continue
        first = np.flatnonzero(np.abs(row) > 1e-10 * scale)[0]
        if row[first] < 0:
            out[k] = -row
    return out


def residuals(matrix, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """``||L h_k - lambda_k h_k||`` per row of ``vectors``."""
    lv = np.asarray(matrix @ vectors.T).T
    return np.linalg.norm(lv - values[:, None] * vectors, axis=1)


def _dense(matrix: sp.csr_matrix, d_h: int) -> tuple[np.ndarray, np.ndarray]:
    dense = matrix.toarray()
    values, vectors = np.linalg.eigh(0.5 * (dense + dense.T))
    return values[:d_h], vectors[:, :d_h].T


def _lanczos(matrix: sp.csr_matrix, d_h: int, tol: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = matrix.shape[0]
    ncv = min(order, max(2 * d_h + 1, d_h + 32))
    v0 = np.random.default_rng(seed).standard_normal(order)
    try:
        _, vecs = eigsh(matrix, k=d_h, which="SA", tol=tol, ncv=ncv, v0=v0, maxiter=100 * order)
    except ArpackNoConvergence as exc:
        norms = residuals(matrix, exc.eigenvalues, exc.eigenvectors.T) if len(exc.eigenvalues) else []
        raise NumericalError(f"Lanczos did not converge; residual norms {np.asarray(norms)}") from None
    # Rayleigh-Ritz cleanup: exact orthonormality and the best pairs in the span.
    q, _ = np.linalg.qr(vecs)
    values, small = np.linalg.eigh(q.T @ (matrix @ q))
    return values, (q @ small).T


def eigendecompose(
    lap: SignedLaplacian, d_h: int, method: str = "auto", tol: float = 1e-10, seed: int = 0
) -> SpectralBasis:
    """The ``d_h`` algebraically smallest eigenpairs of the combined Laplacian.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense up to
    ``DENSE_LIMIT`` nodes). ``d_h`` larger than the matrix order is clamped.
    Eigenvectors are sign-normalised so their first nonzero entry is positive.
    """
    order = lap.order
    if d_h < 1:
        raise ConfigError(f"d_h must be positive, got {d_h}")
    if d_h > order:
        log.warning("d_h=%d exceeds the number of nodes %d; clamping", d_h, order)
        d_h = order
    if method == "auto":
        method = "dense" if order <= DENSE_LIMIT else "lanczos"
    if method == "lanczos" and d_h >= order - 1:
        method = "dense"  # ARPACK needs k < order - 1
    if method == "dense":
        values, vectors = _dense(lap.matrix, d_h)
    elif method == "lanczos":
        values, vectors = _lanczos(lap.matrix, d_h, tol, seed)
    else:
        raise ConfigError(f"unknown eigensolver {method!r}")

    vectors = _fix_signs(vectors)
    res = residuals(lap.matrix, values, vectors)
    bad = res > RESIDUAL_TOL * np.maximum(1.0, np.abs(values))
    if bad.any():
        raise NumericalError(f"eigenpairs failed residual check; residual norms {res[bad]}")
    gram = vectors @ vectors.T
    if np.abs(gram - np.eye(d_h)).max() > ORTHO_TOL:
        raise NumericalError("eigenvectors are not orthonormal")
    vectors.setflags(write=False)
    values.setflags(write=False)
    return SpectralBasis(values, vectors)


def pair_score(basis: SpectralBasis, v: int, w: int) -> float:
    """Entry ``(v, w)`` of the projector onto the retained eigenvectors."""
    order = basis.order
    if not (0 <= v < order and 0 <= w < order):
        raise ConfigError(f"node index out of range 0..{order - 1}")
    return float(basis.vectors[:, v] @ basis.vectors[:, w])


def pair_scores(basis: SpectralBasis, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Vectorised :func:`pair_score` over aligned index arrays."""
    h = basis.vectors
    return np.einsum("kj,kj->j", h[:, v], h[:, w])


def edge_sum(graph: SignedBipartiteGraph, sign: int, z: np.ndarray) -> float:
    """Sum over edges of one sign of ``(z_u / sqrt(d_u) - z_i / sqrt(d_i))**2``."""
    users, items = graph.edges(sign)
    deg = (graph.pos_degree if sign == 1 else graph.neg_degree).astype(float)
    diff = z[users] / np.sqrt(deg[users]) - z[items] / np.sqrt(deg[items])
    return float(diff @ diff)


def smoothness_objective(graph: SignedBipartiteGraph, alpha: float, z: np.ndarray) -> float:
    """Edge-sum objective minimised by the low-frequency eigenvectors.

    ``z`` holds one vector per row and must be orthonormal.
    """
    alpha = _check_alpha(alpha)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != graph.order:
        raise ConfigError(f"vectors must have length {graph.order}")
    if np.abs(z @ z.T - np.eye(len(z))).max() > ORTHO_TOL:
        raise ConfigError("vectors are not orthonormal")
    return sum(edge_sum(graph, 1, row) - alpha * edge_sum(graph, 0, row) for row in z)


# ---------------------------------------------------------------------------
# cache file


def save_spectrum(path: str | Path, basis: SpectralBasis, alpha: float) -> None:
    with open(path, "wb") as fh:
        fh.write(f"SIGSPEC 1 {basis.order} {basis.d_h} {float(alpha)!r}\n".encode())
        for value in basis.values:
            fh.write(f"{value:.17g}\n".encode())
        fh.write(np.ascontiguousarray(basis.vectors, dtype="<f8").tobytes())


def read_spectrum_header(path: str | Path) -> tuple[int, int, float]:
    try:
        with open(path, "rb") as fh:
            line = fh.readline()
    except OSError as exc:
        raise DataError(f"cannot read spectrum cache {path}: {exc}") from None
    parts = line.decode("ascii", "replace").split()
    if len(parts) != 5 or parts[:2] != ["SIGSPEC", "1"]:
        raise DataError(f"{path}: not a SIGSPEC v1 file")
    try:
        return int(parts[2]), int(parts[3]), float(parts[4])
    except ValueError:
        raise DataError(f"{path}: malformed SIGSPEC header") from None


def load_spectrum(path: str | Path) -> tuple[SpectralBasis, float]:
    order, d_h, alpha = read_spectrum_header(path)
    with open(path, "rb") as fh:
        fh.readline()
        try:
            values = np.array([float(fh.readline()) for _ in range(d_h)])
        except ValueError:
            raise DataError(f"{path}: malformed eigenvalue line") from None
        blob = fh.read()
    if len(blob) != 8 * order * d_h:
        raise DataError(f"{path}: expected {order * d_h} eigenvector floats, found {len(blob) / 8:g}")
    vectors = np.frombuffer(blob, dtype="<f8").reshape(d_h, order).astype(np.float64)
    values.setflags(write=False)
    vectors.setflags(write=False)
    return SpectralBasis(values, vectors), alpha
