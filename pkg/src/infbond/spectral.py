"""Spectral tools for truncated positive compact operators.

Eigendecompositions with a deterministic sign convention and eigenvalue
clustering, functional calculus ``f(K) = V f(Lambda) V'``, the isometric part
of the polar decomposition of ``B`` relative to an H inner product, and the
kernel / out-of-range directions ``g0``, ``g1`` of a self-adjoint operator.

Every finite truncation with trivial kernel is onto, so an out-of-range
direction can only be witnessed by the growth of its minimal-norm preimage as
the truncation level increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError, RangeError

SYM_TOL = 1e-12
NEG_TOL = 1e-10
KERNEL_TOL = 1e-12
CLUSTER_TOL = 1e-8


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a symmetric PSD matrix, eigenvalues in descending order.

    Attributes
    ----------
    eigenvalues : ndarray
        ``lambda_1 >= ... >= lambda_N >= 0``; values below ``KERNEL_TOL * lambda_1``
        are set to exactly zero.
    eigenvectors : ndarray
        Orthonormal columns; the largest-magnitude entry of each is positive.
    clusters : tuple of ndarray
        Index groups of numerically equal eigenvalues.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: tuple

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def positive(self) -> np.ndarray:
        return self.eigenvalues > 0

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.positive))

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T

    def kernel_projector(self) -> np.ndarray:
        Vk = self.eigenvectors[:, ~self.positive]
        return Vk @ Vk.T

    def cluster_projector(self, idx) -> np.ndarray:
        Vc = self.eigenvectors[:, idx]
        return Vc @ Vc.T


def decompose_psd(K, sym_tol: float = SYM_TOL) -> SpectralDecomposition:
    """Eigendecomposition of a symmetric positive semidefinite matrix."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInputError("operator must be a square matrix")
    scale = max(1.0, float(np.abs(K).max(initial=0.0)))
    if np.abs(K - K.T).max(initial=0.0) > sym_tol * scale:
        raise InvalidInputError("operator is not symmetric")
    lam, V = np.linalg.eigh(0.5 * (K + K.T))
    lam, V = lam[::-1].copy(), V[:, ::-1].copy()
    top = max(lam[0], 0.0) if lam.size else 0.0
    if lam.size and lam[-1] < -NEG_TOL * max(1.0, top):
        raise InvalidInputError(f"operator has negative eigenvalue {lam[-1]:.3e}")
    lam[lam < KERNEL_TOL * top] = 0.0
    if top == 0.0:
        lam[:] = 0.0

    # sign rule: largest-magnitude entry of each eigenvector positive
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V *= signs

    clusters = []
    start = 0
    tol = CLUSTER_TOL * top
    for k in range(1, lam.size + 1):
        if k == lam.size or lam[start] - lam[k] > tol:
            clusters.append(np.arange(start, k))
            start = k
    return SpectralDecomposition(lam, V, tuple(clusters))


def functional_calculus(d: SpectralDecomposition, f) -> np.ndarray:
    """``V f(Lambda) V'``; raises DomainError if ``f`` is not finite at some eigenvalue."""
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.array([f(lam) for lam in d.eigenvalues], dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        raise DomainError(f"function undefined at eigenvalue {d.eigenvalues[bad][0]!r}")
    V = d.eigenvectors
    return (V * vals) @ V.T


def truncated_inverse(n: float):
    """Regularizer ``f_n(lam) = 1/lam`` for ``lam >= 1/n``, else 0."""
    cut = 1.0 / n

    def f(lam):
        return 1.0 / lam if lam >= cut and lam > 0 else 0.0

    return f


def truncated_sqrt(n: float):
    """``sqrt(lam)`` for ``lam >= 1/n``, else 0."""
    cut = 1.0 / n

    def f(lam):
        return float(np.sqrt(lam)) if lam >= cut else 0.0

    return f


def pseudo_inverse_sqrt(lam):
    return 1.0 / np.sqrt(lam) if lam > 0 else 0.0


@dataclass(frozen=True)
class PolarDecomposition:
    """``B = S A^{1/2}`` with ``A = B' G B`` and ``S`` isometric on the positive eigenspace of A."""

    S: np.ndarray
    A: np.ndarray
    spectrum: SpectralDecomposition
    gram: np.ndarray

    def check_in_domain(self, x, tol: float = 1e-8):
        x = np.asarray(x, dtype=float)
        Vk = self.spectrum.eigenvectors[:, ~self.spectrum.positive]
        if Vk.shape[1]:
            leak = np.linalg.norm(Vk.T @ x)
            if leak > tol * max(np.linalg.norm(x), 1e-300):
                raise RangeError(
                    f"vector has component {leak:.3e} in the kernel of A; S is only isometric off the kernel")
        return x

    def apply(self, x) -> np.ndarray:
        """``S x`` for x in the positive eigenspace of A."""
        return self.S @ self.check_in_domain(x)

    def h_norm(self, v) -> float:
        return float(np.sqrt(max(v @ self.gram @ v, 0.0)))


def polar_isometry(B, gram) -> PolarDecomposition:
    """Polar decomposition of ``B: l2 -> H`` where H carries the Gram matrix ``gram``.

    ``S = B A^{-1/2}`` is evaluated on the positive eigenspace of ``A``; kernel
    directions are sent to zero and rejected by :meth:`PolarDecomposition.apply`.
    """
    B = np.asarray(B, dtype=float)
    gram = np.asarray(getattr(gram, "gram", gram), dtype=float)
    A = B.T @ gram @ B
    A = 0.5 * (A + A.T)
    d = decompose_psd(A, sym_tol=1e-9)
    S = B @ functional_calculus(d, pseudo_inverse_sqrt)
    return PolarDecomposition(S, A, d, gram)


# --------------------------------------------------------------------------
# Obstructions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObstructionResult:
    g0: np.ndarray
    g1: np.ndarray
    levels: tuple = ()
    preimage_norm_curve: tuple = ()

    @property
    def growth_ratios(self) -> np.ndarray:
        c = np.asarray(self.preimage_norm_curve)
        return c[1:] / c[:-1]


def _schmidt_basis(P: np.ndarray, m: int, tol: float = 1e-8) -> list:
    """Orthonormal basis of range(P) from Schmidt steps on the standard basis."""
    n = P.shape[0]
    Q = P.copy()
    vs = []
    for k in range(n):
        if len(vs) == m:
            break
        w = Q[:, k]  # Q u_k
        nw = np.linalg.norm(w)
        if nw > tol:
            v = w / nw
            vs.append(v)
            Q = Q - np.outer(v, v)
    return vs


def kernel_direction(d: SpectralDecomposition) -> np.ndarray:
    """Normalized kernel projection of the first standard basis vector that has one (or 0)."""
    n = d.n
    if d.rank == n:
        return np.zeros(n)
    P0 = d.kernel_projector()
    norms = np.linalg.norm(P0, axis=0)
    k = int(np.argmax(norms > 1e-8))
    return P0[:, k] / norms[k]


def cluster_sum(d: SpectralDecomposition, idx) -> np.ndarray:
    """``h(K, lam)``: sum of the Schmidt-orthonormalized basis of one eigenspace."""
    vs = _schmidt_basis(d.cluster_projector(idx), len(idx))
    return np.sum(vs, axis=0)


def out_of_range_direction(d: SpectralDecomposition) -> np.ndarray:
    g = kernel_direction(d)
    for idx in d.clusters:
        lam = d.eigenvalues[idx[0]]
        if lam > 0:
            g = g + lam * cluster_sum(d, idx)
    return g / np.linalg.norm(g)


def min_norm_preimage(K, y) -> np.ndarray:
    """Minimal-norm least-squares solution of ``K z = y``."""
    return np.linalg.lstsq(np.asarray(K, dtype=float), np.asarray(y, dtype=float), rcond=None)[0]


def construct_obstructions(K, levels=None) -> ObstructionResult:
    """Kernel direction ``g0`` and out-of-range direction ``g1`` of a symmetric PSD ``K``.

    Parameters
    ----------
    K : array (N, N) or callable
        The operator, or a callable ``n -> K_n`` producing the truncation at level n.
    levels : sequence of int, optional
        Truncation levels for the minimal-norm preimage curve. For an array
        these are leading principal blocks; ``g1`` is recomputed at each level.
    """
    family = K if callable(K) else (lambda n, K=np.asarray(K, dtype=float): K[:n, :n])
    if levels is None:
        if callable(K):
            raise InvalidInputError("levels are required when K is a callable family")
        levels = (np.asarray(K).shape[0],)
    curve = []
    for n in levels:
        Kn = family(n)
        dn = decompose_psd(Kn)
        z = min_norm_preimage(Kn, out_of_range_direction(dn))
        curve.append(float(np.linalg.norm(z)))
    Kfull = family(levels[-1])
    d = decompose_psd(Kfull)
    return ObstructionResult(kernel_direction(d), out_of_range_direction(d),
                             tuple(int(n) for n in levels), tuple(curve))
