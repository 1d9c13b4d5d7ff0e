"""Contingent claims, their martingale-representation integrands, and membership diagnostics.

On a time grid ``t_0 < ... < t_K`` a claim is represented as

    X = c + sum_k x_k . dW^Q_k,

with ``x_k`` known at ``t_k``. For claims that are smooth functions of
Gaussian integrals the integrand returned here is the exact optimal discrete
one, ``x_k = E_Q(X dW_k | F_{t_k}) / dt``, which by Gaussian integration by
parts equals the conditional expectation of the Malliavin derivative
(evaluated by Gauss-Hermite quadrature over the remaining increments).

Binary option under deterministic volatility
--------------------------------------------
The payoff is ``1{pbar_Tbar(T) >= K}``. Write ``L_k = ln pbar_{t_k}(U - t_k)``
for the fixed date ``U = Tbar + T``. Given ``F_{t_k}``,

    L_K = L_k + sum_{j >= k} s_j . dW_j - 1/2 sum_{j >= k} q_j dt

is Gaussian with mean ``L_k + mu_k`` and variance ``v_k = sum_{j >= k} |s_j|^2 dt``,
where ``s_j`` is the factor loading of the bond over step ``j`` and ``q_j`` its
squared-volatility drift (both taken from the same calendar interpolation as
the simulator, so the formulas are exact for the simulated market). Hence
``E(X | F_{t_k}) = Phi(d_k)`` with ``d_k = (L_k + mu_k - ln K) / sqrt(v_k)``, and
Gaussian integration by parts gives

    x_k = g_k(K / pbar_{t_k}(U - t_k)) s_k,   g_k(y) = phi((mu_k - ln y) / sqrt(v_k)) / sqrt(v_k).

``g_k`` is continuous with ``sup g_k = 1 / sqrt(2 pi v_k)``; it depends on time
through the remaining variance ``v_k`` and blows up only as ``v_k -> 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np
from scipy import special, stats

from .errors import IllConditionedError, InvalidInputError, NotDifferentiableError, TruncationError
from .seq_spaces import BRACKET, WeightSpec, truncation_sweep

DIVERGENCE_GROWTH = 1.10


def mc_mean(x):
    """Sample mean and its standard error."""
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


# --------------------------------------------------------------------------
# Integrand processes
# --------------------------------------------------------------------------

@dataclass
class IntegrandProcess:
    """Integrand values ``x_k`` per path and step, plus the constant ``c``.

    Attributes
    ----------
    values : ndarray (paths, K, r)
        Coordinates in the driving factors of the ensemble.
    constant : float
    dt : float
    profiles : ndarray (r, N_full) or None
        When given, driving factor ``a`` is the unit vector ``profiles[a]`` of a
        larger factor space (rows must be orthonormal). ``None`` means identity.
    """

    values: np.ndarray
    constant: float
    dt: float
    profiles: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise InvalidInputError("integrand values must have shape (paths, steps, factors)")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_full(self) -> int:
        return self.values.shape[2] if self.profiles is None else self.profiles.shape[1]

    def dense(self) -> np.ndarray:
        """Values in the full factor space (paths, K, N_full)."""
        return self.values if self.profiles is None else self.values @ self.profiles

    def energy(self) -> np.ndarray:
        """Per-path ``int |x_t|^2 dt``."""
        return self.weighted_energy(WeightSpec(0.0))

    def weighted_energy(self, w: WeightSpec, n: int | None = None) -> np.ndarray:
        """Per-path ``int |weight . x_t|^2 dt`` over the first ``n`` factors."""
        n = self.n_full if n is None else min(n, self.n_full)
        wts = w.weights(n) ** 2
        if self.profiles is None:
            return np.sum(self.values[:, :, :n] ** 2 * wts, axis=(1, 2)) * self.dt
        P = self.profiles[:, :n]
        Qn = (P * wts) @ P.T
        return np.einsum("pka,ab,pkb->p", self.values, Qn, self.values) * self.dt

    def stochastic_integral(self, dW, upto: int | None = None) -> np.ndarray:
        """``sum_{k < upto} x_k . dW_k`` per path."""
        if dW.shape[2] < self.values.shape[2]:
            raise TruncationError(
                f"integrand uses {self.values.shape[2]} factors, ensemble simulates {dW.shape[2]}")
        upto = self.values.shape[1] if upto is None else upto
        r = self.values.shape[2]
        return np.einsum("pkn,pkn->p", self.values[:, :upto], dW[:, :upto, :r])

    def running_integral(self, dW) -> np.ndarray:
        """``Y_k = c + sum_{j < k} x_j . dW_j`` for ``k = 0..K`` (paths, K+1)."""
        r = self.values.shape[2]
        if dW.shape[2] < r:
            raise TruncationError(f"integrand uses {r} factors, ensemble simulates {dW.shape[2]}")
        inc = np.einsum("pkn,pkn->pk", self.values, dW[:, :, :r])
        out = np.empty((inc.shape[0], inc.shape[1] + 1))
        out[:, 0] = self.constant
        out[:, 1:] = self.constant + np.cumsum(inc, axis=1)
        return out

    def scaled(self, a: float) -> "IntegrandProcess":
        return IntegrandProcess(a * self.values, a * self.constant, self.dt, self.profiles)


def write_integrand_csv(path, x: IntegrandProcess, times):
    """Rows ``path,time,factor,value`` (factor is 1-based)."""
    import csv

    dense = x.dense()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time", "factor", "value"])
        for p in range(dense.shape[0]):
            for k in range(dense.shape[1]):
                for i in range(dense.shape[2]):
                    w.writerow([p, repr(float(times[k])), i + 1, repr(float(dense[p, k, i]))])


# --------------------------------------------------------------------------
# Claim specifications
# --------------------------------------------------------------------------

def _h_matrix(h, times, N) -> np.ndarray:
    """Evaluate a factor profile ``h`` (callable ``t -> vector`` or constant vector) at left points."""
    rows = []
    for t in times[:-1]:
        v = np.atleast_1d(np.asarray(h(t) if callable(h) else h, dtype=float))
        rows.append(v)
    H = np.array(rows)
    if H.shape[1] > N:
        if np.any(H[:, N:] != 0):
            raise TruncationError(
                f"claim references factor {int(np.flatnonzero(np.any(H != 0, axis=0)).max()) + 1} "
                f"but only {N} factors are simulated")
        H = H[:, :N]
    out = np.zeros((H.shape[0], N))
    out[:, :H.shape[1]] = H
    return out


class Claim:
    """Base class. Subclasses provide realize, integrand and (if smooth) malliavin."""

    kind = "claim"

    def realize(self, ens, dW=None) -> np.ndarray:
        raise NotImplementedError

    def integrand(self, ens, backend="auto") -> IntegrandProcess:
        if backend in ("auto", "regression"):
            return regression_integrand(self, ens)
        raise InvalidInputError(f"backend {backend!r} not available for {self.kind}")

    def malliavin(self, ens, dW=None) -> np.ndarray:
        raise NotDifferentiableError(f"{self.kind} claims have no Malliavin derivative")


def _n_factors(ens) -> int:
    return int(ens.N) if hasattr(ens, "N") else int(ens.config.N)


class CylinderClaim(Claim):
    """``X = f(W(h_1), ..., W(h_n))`` with ``W(h) = sum_i int h(t, i) dW^{Q,i}_t``.

    Parameters
    ----------
    f, grad : callables
        ``f(Z) -> (paths,)`` and ``grad(Z) -> (paths, n)`` for ``Z`` of shape (paths, n).
        Both must accept extra leading axes.
    hs : list
        Each entry a callable ``t -> (N_h,)`` or a constant vector.
    """

    kind = "cylinder"

    def __init__(self, f, grad, hs):
        self.f, self.grad, self.hs = f, grad, list(hs)

    def canonical(self, ens):
        """``(f, grad, H)`` with ``H`` of shape (n, K, N) evaluated on the ensemble grid."""
        H = np.stack([_h_matrix(h, ens.times, _n_factors(ens)) for h in self.hs])
        return self.f, self.grad, H

    def realize(self, ens, dW=None):
        f, _, H = self.canonical(ens)
        dW = ens.increments() if dW is None else dW
        return np.asarray(f(np.einsum("pkn,lkn->pl", dW, H)), dtype=float)

    def malliavin(self, ens, dW=None):
        """``D_{k,i} X = sum_l f_l(Z) h_l(t_k, i)`` (paths, K, N)."""
        _, grad, H = self.canonical(ens)
        dW = ens.increments() if dW is None else dW
        return np.einsum("pl,lkn->pkn", np.asarray(grad(np.einsum("pkn,lkn->pl", dW, H))), H)

    def integrand(self, ens, backend="auto", nodes=None):
        if backend == "regression":
            return regression_integrand(self, ens)
        if backend not in ("auto", "quadrature", "analytic"):
            raise InvalidInputError(f"unknown backend {backend!r}")
        return quadrature_integrand(self, ens, nodes)


def wiener_integral(h) -> CylinderClaim:
    """``X = W(h)``."""
    c = CylinderClaim(lambda Z: Z[..., 0], lambda Z: np.ones_like(Z), [h])
    c.kind = "wiener_integral"
    return c


class ExponentialMartingale(CylinderClaim):
    """``X = E_T(h) = exp(W(h) - 1/2 sum_k |h_k|^2 dt)`` (discrete compensator, so ``E_Q X = 1``)."""

    kind = "exponential_martingale"

    def __init__(self, h):
        self.h = h
        super().__init__(None, None, [h])

    def canonical(self, ens):
        H = _h_matrix(self.h, ens.times, _n_factors(ens))[None]
        half = 0.5 * np.sum(H[0] ** 2) * (ens.times[1] - ens.times[0])

        def f(Z):
            return np.exp(Z[..., 0] - half)

        def grad(Z):
            return np.exp(Z - half)

        return f, grad, H

    def integrand(self, ens, backend="auto", nodes=None):
        """Closed form ``x_k = E_{t_k}(h) h_k`` unless another backend is requested."""
        if backend in ("quadrature", "regression"):
            return super().integrand(ens, backend, nodes)
        H = self.canonical(ens)[2][0]
        dt = ens.times[1] - ens.times[0]
        dW = ens.increments()
        inc = np.einsum("pkn,kn->pk", dW, H) - 0.5 * np.sum(H ** 2, axis=1) * dt
        logE = np.zeros(inc.shape)
        logE[:, 1:] = np.cumsum(inc[:, :-1], axis=1)
        return IntegrandProcess(np.exp(logE)[:, :, None] * H[None], 1.0, dt)


class ProductClaim(CylinderClaim):
    """Product of two cylinder claims, itself a cylinder claim."""

    kind = "product"

    def __init__(self, a: CylinderClaim, b: CylinderClaim):
        self.a, self.b = a, b
        super().__init__(None, None, [])

    def canonical(self, ens):
        fa, ga, Ha = self.a.canonical(ens)
        fb, gb, Hb = self.b.canonical(ens)
        na = Ha.shape[0]

        def f(Z):
            return fa(Z[..., :na]) * fb(Z[..., na:])

        def grad(Z):
            A, B = Z[..., :na], Z[..., na:]
            return np.concatenate([ga(A) * fb(B)[..., None], fa(A)[..., None] * gb(B)], axis=-1)

        return f, grad, np.concatenate([Ha, Hb])


@dataclass
class ExplicitIntegrand(Claim):
    """Claim given directly by ``(c, x)``; ``x`` is an IntegrandProcess or a deterministic (K, N) array."""

    constant: float
    x: object = None
    kind: str = "explicit_integrand"

    def _process(self, ens) -> IntegrandProcess:
        dt = ens.times[1] - ens.times[0]
        K = ens.times.size - 1
        if self.x is None:
            return IntegrandProcess(np.zeros((ens.n_paths, K, 1)), self.constant, dt)
        if isinstance(self.x, IntegrandProcess):
            return self.x
        arr = np.asarray(self.x, dtype=float)
        if arr.ndim == 2:
            arr = np.broadcast_to(arr, (ens.n_paths,) + arr.shape)
        return IntegrandProcess(arr, self.constant, dt)

    def realize(self, ens, dW=None):
        x = self._process(ens)
        dW = ens.increments() if dW is None else dW
        return self.constant + x.stochastic_integral(dW)

    def integrand(self, ens, backend="auto"):
        return self._process(ens)


@dataclass
class BinaryOption(Claim):
    """Discounted payoff ``1{pbar_Tbar(T) >= strike}`` for maturity offset ``T``.

    The ensemble must have tracked the calendar date ``Tbar + T``.
    """

    strike: float
    offset: float
    kind: str = "binary_option"

    def __post_init__(self):
        if self.strike <= 0 or self.offset <= 0:
            raise InvalidInputError("binary option needs strike > 0 and offset > 0")

    def date(self, ens) -> float:
        return float(ens.times[-1] + self.offset)

    def realize(self, ens, dW=None):
        if dW is not None:
            return (self.log_price_path(ens, dW)[:, -1] >= np.log(self.strike)).astype(float)
        hit = np.flatnonzero(np.isclose(ens.track_dates, self.date(ens), rtol=0, atol=1e-12))
        if hit.size:
            price = ens.tracked[:, ens.checkpoint_steps.index(ens.steps), hit[0]]
        else:
            price = np.exp(self.log_price_path(ens)[:, -1])
        return (price >= self.strike).astype(float)

    def loadings(self, ens):
        """Per-step factor loadings ``s_k`` (K, N) and drifts ``q_k`` (K,) of the fixed-date bond."""
        from .market import CalendarGrid

        cfg = ens.config
        if not cfg.vol.deterministic:
            raise NotDifferentiableError("analytic binary integrand needs deterministic volatility")
        cal = CalendarGrid(cfg)
        U = self.date(ens)
        j, w = cal.readout_index(0.0, U)
        j, w = int(j), float(w)
        ua, ub = cal.u[j], cal.u[j + 1]
        s, q = [], []
        for t in ens.times[:-1]:
            Ta, Tb = ua - t, ub - t
            sa = cfg.vol.evaluate(t, [max(Ta, 0.0)])[:, 0] if Ta >= 0 else np.zeros(cfg.N)
            sb = cfg.vol.evaluate(t, [max(Tb, 0.0)])[:, 0] if Tb >= 0 else np.zeros(cfg.N)
            s.append((1 - w) * sa + w * sb)
            q.append((1 - w) * sa @ sa + w * sb @ sb)
        L0 = (1 - w) * cal.log_p0[j] + w * cal.log_p0[j + 1]
        return np.array(s), np.array(q), float(L0)

    def log_price_path(self, ens, dW=None):
        """``L_k = ln pbar_{t_k}(U - t_k)`` for k = 0..K (paths, K+1)."""
        s, q, L0 = self.loadings(ens)
        dW = ens.increments() if dW is None else dW
        dt = ens.dt
        inc = np.einsum("pkn,kn->pk", dW, s) - 0.5 * q * dt
        out = np.empty((dW.shape[0], dW.shape[1] + 1))
        out[:, 0] = L0
        out[:, 1:] = L0 + np.cumsum(inc, axis=1)
        return out

    def conditional_moments(self, ens):
        """Remaining drift ``mu_k`` and variance ``v_k`` for k = 0..K-1."""
        s, q, _ = self.loadings(ens)
        dt = ens.dt
        v = np.cumsum((np.sum(s ** 2, axis=1) * dt)[::-1])[::-1]
        mu = -0.5 * np.cumsum((q * dt)[::-1])[::-1]
        return mu, v

    def g(self, y, k, ens):
        """The bounded kernel ``g_k(y)`` of the integrand at step ``k``."""
        mu, v = self.conditional_moments(ens)
        return stats.norm.pdf((mu[k] - np.log(y)) / np.sqrt(v[k])) / np.sqrt(v[k])

    def g_bound(self, ens) -> float:
        _, v = self.conditional_moments(ens)
        return float(1.0 / np.sqrt(2 * np.pi * v[-1]))

    def price(self, ens) -> float:
        mu, v = self.conditional_moments(ens)
        _, _, L0 = self.loadings(ens)
        return float(special.ndtr((L0 + mu[0] - np.log(self.strike)) / np.sqrt(v[0])))

    def integrand(self, ens, backend="auto"):
        if backend == "regression":
            return regression_integrand(self, ens)
        s, _, _ = self.loadings(ens)
        mu, v = self.conditional_moments(ens)
        L = self.log_price_path(ens)[:, :-1]
        d = (L + mu - np.log(self.strike)) / np.sqrt(v)
        gk = stats.norm.pdf(d) / np.sqrt(v)
        return IntegrandProcess(gk[:, :, None] * s[None], self.price(ens), ens.dt)


# --------------------------------------------------------------------------
# The multiplication counterexample
# --------------------------------------------------------------------------

def remark_coefficients(n: int) -> np.ndarray:
    """``c^i = ((1 + i)^{1/2} ln(1 + i))^{-1}`` for i = 1..n."""
    i = np.arange(1, n + 1, dtype=float)
    return 1.0 / (np.sqrt(1.0 + i) * np.log1p(i))


@dataclass
class ProductCounterexample(Claim):
    """``X = int_0^Tbar a_t dW^1_t`` with ``a_t = sum_i c^i W^i_t`` (or ``X^2`` when ``squared``).

    Only two Brownian drivers are simulated: ``W^1`` and ``Z = rho^{-1} sum_{i>=2} c^i W^i``
    with ``rho = |c_{2..n}|``; integrands are reported through the profiles
    ``e_1`` and ``(0, c_2, ..., c_n) / rho`` so weighted norms can be truncated at any
    level up to ``n_max``.

    ``X^2 = E(X^2) + 2 int a Y dW^1 + 2 int (Tbar - t) a sum_i c^i dW^i`` with
    ``Y_t = int_0^t a dW^1``.
    """

    n_max: int = 2 ** 14
    squared: bool = False
    kind: str = "product_counterexample"

    def __post_init__(self):
        self.c = remark_coefficients(self.n_max)
        self.rho = float(np.linalg.norm(self.c[1:]))

    @property
    def profiles(self) -> np.ndarray:
        P = np.zeros((2, self.n_max))
        P[0, 0] = 1.0
        P[1, 1:] = self.c[1:] / self.rho
        return P

    def _state(self, ens, dW=None):
        dW = ens.increments() if dW is None else dW
        if dW.shape[2] < 2:
            raise TruncationError("the counterexample needs two simulated drivers")
        W = np.concatenate([np.zeros((dW.shape[0], 1, 2)), np.cumsum(dW[:, :, :2], axis=1)], axis=1)
        a = self.c[0] * W[:, :, 0] + self.rho * W[:, :, 1]  # (paths, K+1)
        Y = np.concatenate([np.zeros((dW.shape[0], 1)),
                            np.cumsum(a[:, :-1] * dW[:, :, 0], axis=1)], axis=1)
        return dW, a, Y

    def realize(self, ens, dW=None):
        _, _, Y = self._state(ens, dW)
        return Y[:, -1] ** 2 if self.squared else Y[:, -1]

    def exact_second_moment(self, horizon: float) -> float:
        return float(np.sum(self.c ** 2) * horizon ** 2 / 2.0)

    def integrand(self, ens, backend="auto"):
        dW, a, Y = self._state(ens)
        t = ens.times[:-1]
        dt = ens.dt
        ak = a[:, :-1]
        if not self.squared:
            vals = np.stack([ak, np.zeros_like(ak)], axis=-1)
            return IntegrandProcess(vals, 0.0, dt, self.profiles)
        rem = ens.times[-1] - t
        y1 = 2 * ak * Y[:, :-1] + 2 * rem * ak * self.c[0]
        y2 = 2 * rem * ak * self.rho
        # constant: E(X^2) of the discrete claim, sum_k E(a_k^2) dt
        const = float(np.sum(self.c ** 2) * np.sum(t) * dt)
        return IntegrandProcess(np.stack([y1, y2], axis=-1), const, dt, self.profiles)


# --------------------------------------------------------------------------
# Integrand backends
# --------------------------------------------------------------------------

def _gauss_hermite(n_dim: int, q: int):
    x, w = np.polynomial.hermite_e.hermegauss(q)
    w = w / w.sum()
    pts = np.array(list(iproduct(x, repeat=n_dim)))
    wts = np.prod(np.array(list(iproduct(w, repeat=n_dim))), axis=1)
    return pts, wts


def _psd_sqrt(C):
    lam, V = np.linalg.eigh(C)
    return V * np.sqrt(np.clip(lam, 0.0, None))


def quadrature_integrand(claim: CylinderClaim, ens, nodes=None) -> IntegrandProcess:
    """``x_k = E(grad f(Z) | F_{t_k}) . H_k`` by Gauss-Hermite over the remaining increments."""
    f, grad, H = claim.canonical(ens)
    n = H.shape[0]
    if n > 4:
        raise InvalidInputError("quadrature backend supports at most 4 Gaussian integrals")
    q = nodes or {1: 40, 2: 16, 3: 10, 4: 8}[n]
    pts, wts = _gauss_hermite(n, q)
    dW = ens.increments()
    dt = ens.times[1] - ens.times[0]
    K = H.shape[1]
    # running Gaussians Z_k = sum_{j<k} H_j dW_j and remaining covariance C_k
    inc = np.einsum("pkn,lkn->pkl", dW, H)
    Zk = np.concatenate([np.zeros((dW.shape[0], 1, n)), np.cumsum(inc, axis=1)], axis=1)
    outer = np.einsum("lkn,mkn->klm", H, H) * dt
    C = np.cumsum(outer[::-1], axis=0)[::-1]
    x = np.empty((dW.shape[0], K, n))
    for k in range(K):
        shifts = pts @ _psd_sqrt(C[k]).T  # (nodes, n)
        g = np.asarray(grad(Zk[:, k, None, :] + shifts[None]))  # (paths, nodes, n)
        x[:, k] = np.einsum("pqn,q->pn", g, wts)
    c = float(np.dot(np.asarray(f(pts @ _psd_sqrt(C[0]).T)), wts))
    vals = np.einsum("pkl,lkn->pkn", x, H)
    return IntegrandProcess(vals, c, dt)


def default_features(ens, k, dW):
    """Polynomial features of the running Brownian state ``W_{t_k}`` up to degree 2."""
    W = dW[:, :k].sum(axis=1)
    cols = [np.ones(W.shape[0])]
    cols += [W[:, i] for i in range(W.shape[1])]
    cols += [W[:, i] * W[:, j] for i in range(W.shape[1]) for j in range(i, W.shape[1])]
    return np.column_stack(cols)


def regression_integrand(claim: Claim, ens, features=None, max_condition: float = 1e10) -> IntegrandProcess:
    """Least-squares estimate of ``E(X dW_k | F_{t_k}) / dt`` on state features.

    This is an approximation; it raises IllConditionedError when the design
    matrix at some step is too ill-conditioned to trust.
    """
    features = features or default_features
    dW = ens.increments()
    X = claim.realize(ens)
    dt = ens.times[1] - ens.times[0]
    K = dW.shape[1]
    vals = np.empty(dW.shape)
    for k in range(K):
        F = features(ens, k, dW)
        if k > 0:
            cond = np.linalg.cond(F)
            if not np.isfinite(cond) or cond > max_condition:
                raise IllConditionedError(
                    f"regression design at step {k} has condition number {cond:.3e}",
                    condition=cond, sample=k)
        target = X[:, None] * dW[:, k] / dt
        coef = np.linalg.lstsq(F, target, rcond=None)[0]
        vals[:, k] = F @ coef
    return IntegrandProcess(vals, float(X.mean()), dt)


# --------------------------------------------------------------------------
# Module-level operations
# --------------------------------------------------------------------------

def realize_claim(spec: Claim, ens, dW=None) -> np.ndarray:
    """Terminal discounted values X per path."""
    return spec.realize(ens, dW)


def malliavin_derivative(spec: Claim, ens, dW=None) -> np.ndarray:
    """Pathwise Malliavin derivative ``D_{t_k, i} X`` (paths, K, N)."""
    return spec.malliavin(ens, dW)


def bump_derivative(spec: Claim, ens, path: int, step: int, factor: int, eps: float = 1e-6) -> float:
    """Central finite difference of X in the increment ``dW_{step, factor}`` (equals ``D_{step,factor} X``)."""
    dW = ens.increments([path]).copy()
    up, dn = dW.copy(), dW.copy()
    up[0, step, factor] += eps
    dn[0, step, factor] -= eps
    return float((spec.realize(ens, up)[0] - spec.realize(ens, dn)[0]) / (2 * eps))


def clark_ocone_integrand(spec: Claim, ens, backend: str = "auto") -> IntegrandProcess:
    """Martingale-representation integrand ``x_t = E_Q(D_t X | F_t)`` and ``c = E_Q X``."""
    return spec.integrand(ens, backend)


def replication_error(spec: Claim, ens, x: IntegrandProcess | None = None) -> dict:
    """L2 distance between X and ``c + int x dW`` relative to ``||X||_2``."""
    x = clark_ocone_integrand(spec, ens) if x is None else x
    X = realize_claim(spec, ens)
    Xr = x.constant + x.stochastic_integral(ens.increments())
    err = float(np.sqrt(np.mean((X - Xr) ** 2)))
    norm = float(np.sqrt(np.mean(X ** 2)))
    return {"l2_error": err, "claim_norm": norm, "relative": err / norm if norm > 0 else err,
            "mean_abs_error": float(np.mean(np.abs(X - Xr))), "mean_abs_claim": float(np.mean(np.abs(X)))}


@dataclass
class MembershipReport:
    """Monte Carlo estimates of D_s^p-type norms and truncation diagnostics.

    ``norm_estimates[(s, p)] = (E|X|^p + E(int |w_s x|^2 dt)^{p/2})^{1/p}``;
    ``divergence_flags[(s, p)]`` is set when the truncated integrand norm grows
    by more than 10% over the last doubling of the truncation level.
    ``increment_trend[(s, p)]`` (supplementary) holds the ratios of successive
    increments of the squared truncation curve.
    """

    s_values: tuple
    p_values: tuple
    convention: str
    lp_norms: dict
    integrand_norms: dict
    norm_estimates: dict
    divergence_flags: dict
    truncation_levels: tuple
    truncation_curves: dict
    increment_trend: dict = field(default_factory=dict)
    route: str = "clark_ocone"

    def as_dict(self) -> dict:
        key = lambda sp: f"s={sp[0]:g},p={sp[1]:g}"  # noqa: E731
        return {
            "route": self.route,
            "convention": self.convention,
            "lp_norms": {f"p={p:g}": v for p, v in self.lp_norms.items()},
            "integrand_norms": {key(k): v for k, v in self.integrand_norms.items()},
            "norm_estimates": {key(k): v for k, v in self.norm_estimates.items()},
            "divergence_flags": {key(k): v for k, v in self.divergence_flags.items()},
            "truncation_levels": list(self.truncation_levels),
            "truncation_curves": {key(k): list(v) for k, v in self.truncation_curves.items()},
        }


def _weighted_energy_dense(D, dt, w, n):
    wts = w.weights(min(n, D.shape[2])) ** 2
    return np.sum(D[:, :, :n] ** 2 * wts, axis=(1, 2)) * dt


def ds_diagnostic(spec: Claim, ens, s_list=(0.0,), p_list=(2.0,), convention: str = BRACKET,
                  levels=None, route: str = "clark_ocone", X=None, x=None) -> MembershipReport:
    """Estimate ``||X||_{D_s^p}`` and flag divergence of the weighted integrand under truncation.

    ``route="malliavin"`` uses the pathwise derivative ``D_t X`` instead of the
    Clark-Ocone integrand (the D_s^{1,p} norm).
    """
    X = realize_claim(spec, ens) if X is None else X
    if route == "malliavin":
        D = malliavin_derivative(spec, ens)
        dt = ens.times[1] - ens.times[0]
        n_full = D.shape[2]

        def energy(w, n):
            return _weighted_energy_dense(D, dt, w, n)
    else:
        x = clark_ocone_integrand(spec, ens) if x is None else x
        n_full = x.n_full

        def energy(w, n):
            return x.weighted_energy(w, n)

    levels = tuple(truncation_sweep(n_full) if levels is None else levels)
    lp, inorm, est, flags, curves, trend = {}, {}, {}, {}, {}, {}
    for p in p_list:
        lp[p] = float(np.mean(np.abs(X) ** p) ** (1.0 / p))
    for s in s_list:
        w = WeightSpec(float(s), convention)
        energies = {n: energy(w, n) for n in levels}
        for p in p_list:
            curve = np.array([np.mean(energies[n] ** (p / 2.0)) ** (1.0 / p) for n in levels])
            full = curve[-1]
            inorm[(s, p)] = float(full)
            est[(s, p)] = float((lp[p] ** p + full ** p) ** (1.0 / p))
            curves[(s, p)] = tuple(float(v) for v in curve)
            grow = curve[-1] / curve[-2] if len(curve) > 1 and curve[-2] > 0 else 1.0
            flags[(s, p)] = bool(grow > DIVERGENCE_GROWTH)
            sq = curve ** 2
            inc = np.diff(sq)
            trend[(s, p)] = tuple(float(b / a) if a > 0 else float("nan") for a, b in zip(inc[:-1], inc[1:]))
    return MembershipReport(tuple(s_list), tuple(p_list), convention, lp, inorm, est, flags,
                            levels, curves, trend, route)
