"""Grid-sampled Sobolev curves, the multiplier space M = R + H, and the dual H'.

The H norm is the Gagliardo form

    ||f||^2 = int f^2 + int int (f(x) - f(y))^2 |x - y|^{-1 - 2 omega} dx dy

over the half line, discretized on a uniform maturity grid. Every node owns a
cell of width ``dx`` and the double integral is evaluated by product
integration: for a pair of cells the difference quotient is frozen and the
weight ``|x - y|^{1 - 2 omega}`` is integrated exactly over the cell pair.
This is exact for piecewise-linear curves and removes the diagonal
singularity analytically. The result is a quadratic form ``f' G f`` whose
matrix ``G`` (the Gram matrix) also represents the Riesz map H -> H'.

Curves carry a ``decay`` flag. With ``decay=True`` the curve is extended by
zero past the last node and the cross term against the zero tail is included;
with ``decay=False`` the norm is that of the restriction to the grid interval.
On a uniform grid the decay form is exactly non-increasing under grid-aligned
left translation, and under interpolated translation by convexity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg

from .errors import DomainError, InvalidInputError


@dataclass(frozen=True)
class MaturityGrid:
    """Uniform time-to-maturity grid ``0 = T_0 < ... < T_{M-1} = t_max``."""

    t_max: float = 10.0
    M: int = 256
    omega: float = 0.75

    def __post_init__(self):
        if not self.t_max > 0:
            raise InvalidInputError("t_max must be positive")
        if self.M < 16:
            raise InvalidInputError("maturity grid needs at least 16 nodes")
        if not 0.5 < self.omega < 1.0:
            raise InvalidInputError("Sobolev order omega must lie strictly inside (1/2, 1)")

    @property
    def dx(self) -> float:
        return self.t_max / (self.M - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.M)

    def node_index(self, T: float) -> int:
        """Index of the grid node at maturity ``T`` (must be a node)."""
        k = int(round(T / self.dx))
        if k < 0 or k >= self.M or abs(k * self.dx - T) > 1e-9 * max(1.0, self.t_max):
            raise InvalidInputError(f"maturity {T} is not a grid node")
        return k


@dataclass
class CurveH:
    """Element of H sampled on a maturity grid."""

    grid: MaturityGrid
    values: np.ndarray
    decay: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.M,):
            raise InvalidInputError(
                f"curve has shape {self.values.shape}, grid expects ({self.grid.M},)")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("curve values must be finite")

    @classmethod
    def from_function(cls, grid: MaturityGrid, func, decay: bool = False) -> "CurveH":
        return cls(grid, np.asarray(func(grid.nodes), dtype=float), decay)

    def __add__(self, other: "CurveH") -> "CurveH":
        _check_same_grid(self.grid, other.grid)
        return CurveH(self.grid, self.values + other.values, self.decay)

    def __mul__(self, scalar: float) -> "CurveH":
        return CurveH(self.grid, scalar * self.values, self.decay)

    __rmul__ = __mul__


@dataclass
class MultiplierM:
    """Element ``a + f`` of M = R + H."""

    constant: float
    curve: CurveH

    @property
    def grid(self) -> MaturityGrid:
        return self.curve.grid

    @property
    def values(self) -> np.ndarray:
        return self.constant + self.curve.values

    @classmethod
    def from_values(cls, grid: MaturityGrid, values, decay: bool = True) -> "MultiplierM":
        """Split nodal values into the constant at ``t_max`` plus a curve part."""
        values = np.asarray(values, dtype=float)
        a = float(values[-1])
        return cls(a, CurveH(grid, values - a, decay))


@dataclass
class DualCurve:
    """Element of H' given by point masses at grid nodes plus a grid density.

    ``pair(phi, f) = sum_j w_j f(T_{k_j}) + sum_k dx * density_k * f(T_k)``.
    """

    grid: MaturityGrid
    point_masses: tuple = ()
    density: np.ndarray | None = None

    def __post_init__(self):
        masses = []
        for loc, weight in self.point_masses:
            k = self.grid.node_index(loc)
            masses.append((k * self.grid.dx, float(weight)))
        self.point_masses = tuple(masses)
        if self.density is not None:
            self.density = np.asarray(self.density, dtype=float)
            if self.density.shape != (self.grid.M,):
                raise InvalidInputError("density must have one value per grid node")

    @classmethod
    def from_functional(cls, grid: MaturityGrid, coeffs) -> "DualCurve":
        """Dual element acting as ``f -> coeffs . f`` on nodal values."""
        return cls(grid, (), np.asarray(coeffs, dtype=float) / grid.dx)

    def functional(self) -> np.ndarray:
        """Nodal coefficient vector ``c`` with ``pair(self, f) = c . f``."""
        c = np.zeros(self.grid.M)
        if self.density is not None:
            c += self.grid.dx * self.density
        for loc, weight in self.point_masses:
            c[self.grid.node_index(loc)] += weight
        return c

    def scaled_by(self, g) -> "DualCurve":
        """Product ``g * phi`` of a dual element with a function: <g phi, f> = <phi, g f>."""
        g = np.asarray(g, dtype=float)
        masses = tuple((loc, w * g[self.grid.node_index(loc)]) for loc, w in self.point_masses)
        density = None if self.density is None else self.density * g
        return DualCurve(self.grid, masses, density)


def delta(grid: MaturityGrid, T: float = 0.0, weight: float = 1.0) -> DualCurve:
    """Point mass ``weight * delta_T``."""
    return DualCurve(grid, ((T, weight),))


def _check_same_grid(a: MaturityGrid, b: MaturityGrid):
    if a != b:
        raise InvalidInputError("objects live on different maturity grids")


# --------------------------------------------------------------------------
# Gram matrix
# --------------------------------------------------------------------------

def _cell_pair_integrals(dx: float, omega: float, dmax: int) -> np.ndarray:
    """I(d) = int over two width-dx cells at index distance d of |x-y|^{1-2 omega}."""
    a = 1.0 - 2.0 * omega

    def phi(u):
        return np.abs(u) ** (a + 2.0) / ((a + 1.0) * (a + 2.0))

    d = np.arange(dmax + 1, dtype=float)
    out = phi((d + 1) * dx) - 2.0 * phi(d * dx) + phi((d - 1) * dx)
    out[0] = 2.0 * phi(dx)
    return out


@lru_cache(maxsize=32)
def _gram_cached(t_max: float, M: int, omega: float, decay: bool) -> np.ndarray:
    grid = MaturityGrid(t_max, M, omega)
    dx = grid.dx
    dmax = 64 * M
    cell = _cell_pair_integrals(dx, omega, dmax)
    d = np.arange(1, dmax + 1, dtype=float)
    w = np.zeros(dmax + 1)
    w[1:] = cell[1:] / (d * dx) ** 2

    # pairwise part: sum_{k != l} W(|k-l|) (f_k - f_l)^2 = 2 f' (diag(rowsum) - W) f
    idx = np.arange(M)
    wmat = w[np.abs(idx[:, None] - idx[None, :])]
    np.fill_diagonal(wmat, 0.0)
    gram = 2.0 * (np.diag(wmat.sum(axis=1)) - wmat)

    if decay:
        # suffix sums tail[D] = sum_{d >= D} W(d), remainder past dmax asymptotically
        remainder = dx ** (1.0 - 2.0 * omega) * (dmax + 0.5) ** (-2.0 * omega) / (2.0 * omega)
        suffix = np.cumsum(w[::-1])[::-1] + remainder
        tail = suffix[M - idx]
        gram += 2.0 * np.diag(tail)

    # within-cell part: exact cell integral times squared forward difference
    diff = (np.eye(M, k=1) - np.eye(M)) / dx
    if not decay:
        diff[-1] = diff[-2]
    gram += cell[0] * diff.T @ diff

    gram += dx * np.eye(M)
    gram = 0.5 * (gram + gram.T)
    gram.setflags(write=False)
    return gram


def gram_matrix(grid: MaturityGrid, decay: bool = False) -> np.ndarray:
    """Matrix of the discrete H inner product on nodal values (read-only, cached)."""
    return _gram_cached(grid.t_max, grid.M, grid.omega, bool(decay))


def sobolev_inner(f: CurveH, g: CurveH) -> float:
    _check_same_grid(f.grid, g.grid)
    return float(f.values @ gram_matrix(f.grid, f.decay) @ g.values)


def sobolev_norm(f: CurveH) -> float:
    """Discrete Gagliardo H norm of ``f``."""
    q = f.values @ gram_matrix(f.grid, f.decay) @ f.values
    return float(np.sqrt(max(q, 0.0)))


def multiplier_norm(F: MultiplierM) -> float:
    return float(np.hypot(F.constant, sobolev_norm(F.curve)))


def derivative(f: CurveH) -> CurveH:
    """Upwind (forward) difference approximation of the translation generator."""
    v = f.values
    dv = np.empty_like(v)
    dv[:-1] = np.diff(v) / f.grid.dx
    dv[-1] = dv[-2]
    return CurveH(f.grid, dv, f.decay)


def h1_norm(f: CurveH) -> float:
    return float(np.hypot(sobolev_norm(f), sobolev_norm(derivative(f))))


# --------------------------------------------------------------------------
# Duality, translation, Riesz map, multiplication
# --------------------------------------------------------------------------

def pair(phi: DualCurve, f) -> float:
    """Duality pairing ``<phi, f>``; ``f`` may be a CurveH or MultiplierM."""
    _check_same_grid(phi.grid, f.grid)
    return float(phi.functional() @ f.values)


def dual_norm(phi: DualCurve, decay: bool = False) -> float:
    """H' norm ``sup <phi, f> / ||f||_H``, i.e. ``sqrt(c' G^{-1} c)``."""
    c = phi.functional()
    return float(np.sqrt(c @ RieszMap.for_grid(phi.grid, decay).solve(c)))


def translate(f, a: float):
    """Left translation ``T -> f(a + T)``; zero past the grid (linear ramp to a virtual zero node)."""
    if a < 0:
        raise DomainError("translation distance must be >= 0")
    if isinstance(f, MultiplierM):
        return MultiplierM(f.constant, translate(f.curve, a))
    grid = f.grid
    if a == 0:
        return CurveH(grid, f.values.copy(), f.decay)
    shift = a / grid.dx
    j = int(np.floor(shift + 1e-12))
    theta = shift - j
    padded = np.concatenate([f.values, np.zeros(j + 2)])
    k = np.arange(grid.M)
    if theta < 1e-12:
        vals = padded[k + j]
    else:
        vals = (1.0 - theta) * padded[k + j] + theta * padded[k + j + 1]
    return CurveH(grid, vals, f.decay)


@dataclass
class RieszMap:
    """Gram matrix of the H inner product with a cached Cholesky factor."""

    gram: np.ndarray
    _factor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        if not np.allclose(self.gram, self.gram.T, rtol=0, atol=1e-12 * np.abs(self.gram).max()):
            raise InvalidInputError("Gram matrix must be symmetric")
        try:
            self._factor = linalg.cho_factor(self.gram, lower=True)
        except linalg.LinAlgError as exc:
            raise RuntimeError("Gram matrix is not positive definite") from exc

    @classmethod
    def for_grid(cls, grid: MaturityGrid, decay: bool = False) -> "RieszMap":
        return _riesz_cached(grid.t_max, grid.M, grid.omega, bool(decay))

    def apply(self, v):
        return np.asarray(v, dtype=float) @ self.gram

    def solve(self, c):
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            return linalg.cho_solve(self._factor, c)
        return linalg.cho_solve(self._factor, c.T).T


@lru_cache(maxsize=32)
def _riesz_cached(t_max, M, omega, decay) -> RieszMap:
    return RieszMap(_gram_cached(t_max, M, omega, decay))


def riesz_map(r: RieszMap, direction: str, v) -> np.ndarray:
    """Apply the Riesz isomorphism on coefficient vectors.

    ``to_dual`` maps nodal values of f to the nodal functional of Sf (so that
    ``functional(Sf) . g = (f, g)_H``); ``to_primal`` inverts it.
    Batches along the leading axis are accepted.
    """
    if direction == "to_dual":
        return r.apply(v)
    if direction == "to_primal":
        return r.solve(v)
    raise InvalidInputError(f"unknown direction {direction!r}")


def pointwise_multiply(F: MultiplierM, g: CurveH) -> CurveH:
    """Nodal product ``(a + f) g``."""
    _check_same_grid(F.grid, g.grid)
    return CurveH(g.grid, F.values * g.values, g.decay)


def _operator_norm_of_product(F_vals, gram):
    # sup_g ||F g|| / ||g|| as the top generalized eigenvalue of (D G D, G)
    DGD = F_vals[:, None] * gram * F_vals[None, :]
    top = linalg.eigh(DGD, gram, eigvals_only=True, subset_by_index=[len(F_vals) - 1] * 2)
    return float(np.sqrt(max(top[0], 0.0)))


@lru_cache(maxsize=16)
def _multiplier_constant_cached(t_max, M, omega, decay, starts, iters):
    grid = MaturityGrid(t_max, M, omega)
    gram = _gram_cached(t_max, M, omega, decay)
    rng = np.random.default_rng(12345)
    x = grid.nodes
    best = 0.0
    for s in range(starts):
        freq = rng.uniform(0.1, 3.0)
        f = np.sin(freq * x + rng.uniform(0, np.pi)) * np.exp(-rng.uniform(0, 0.5) * x)
        for _ in range(iters):
            # alternate: best g for fixed f, then best f for fixed g
            DGD = f[:, None] * gram * f[None, :]
            _, vec = linalg.eigh(DGD, gram, subset_by_index=[M - 1, M - 1])
            g = vec[:, 0]
            DGD = g[:, None] * gram * g[None, :]
            _, vec = linalg.eigh(DGD, gram, subset_by_index=[M - 1, M - 1])
            f = vec[:, 0]
        nf = np.sqrt(f @ gram @ f)
        best = max(best, _operator_norm_of_product(f / nf, gram))
    return best


def multiplier_constant(grid: MaturityGrid, decay: bool = False) -> float:
    """Grid proxy for C in ``||F g||_H <= C ||F||_M ||g||_H``.

    Estimates ``C_H = sup ||f g|| / (||f|| ||g||)`` over f, g in H by alternating
    generalized-eigenvalue maximization from fixed starting curves, then returns
    ``sqrt(1 + C_H^2)``, which bounds the M-multiplier ratio given C_H.
    """
    c_h = _multiplier_constant_cached(grid.t_max, grid.M, grid.omega, bool(decay), 6, 8)
    return float(np.sqrt(1.0 + c_h * c_h))


def delta_dual_norms(grid: MaturityGrid, decay: bool = False) -> np.ndarray:
    """``||delta_T||_{H'}`` at every grid node: ``sqrt(diag(G^{-1}))``."""
    inv = RieszMap.for_grid(grid, decay).solve(np.eye(grid.M))
    return np.sqrt(np.diag(inv))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def write_curve_csv(path, curve: CurveH):
    """Write one row per node with columns ``T,value``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "value"])
        for T, v in zip(curve.grid.nodes, curve.values):
            writer.writerow([repr(float(T)), repr(float(v))])


def read_curve_csv(path, grid: MaturityGrid, decay: bool = False) -> CurveH:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    T = np.array([float(r["T"]) for r in rows])
    if T.shape != (grid.M,) or not np.allclose(T, grid.nodes, atol=1e-9):
        raise InvalidInputError("CSV maturities do not match the grid")
    return CurveH(grid, np.array([float(r["value"]) for r in rows]), decay)
