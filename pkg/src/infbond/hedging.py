"""Hedging operators, the completeness check, exact and regularized hedges.

At time ``t`` with ``l_t(T) = pbar_0(t + T)`` the operators are

    b_t = pbar_t sigma_t,   B_t = l_t sigma_t,   A_t = B_t' G B_t,

with ``G`` the Gram matrix of H. The risky portfolio solving ``b_t' theta = x``
is ``theta^1 = (l_t / pbar_t) S eta`` with ``eta = B A^{-1} x``, where ``S`` is
the Riesz map. Its pairing with ``pbar_t`` and with ``pbar_t sigma^i_t`` does
not involve ``pbar_t``:

    <theta^1, pbar_t> = l_t . G eta,   <theta^1, pbar_t sigma^i> = (B' G eta)_i = x_i.

A portfolio is therefore stored through its scaled risky part
``qbar theta^1 = Phi_k z_k`` (``qbar = pbar / l``, ``Phi_k`` an (M, r) matrix,
``z_k`` per path) plus the cash units ``a_k`` of ``delta_0``; ``theta^1`` itself is
materialized on demand where the curve ``pbar_t`` is known.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .claims import IntegrandProcess
from .curve_spaces import (DualCurve, MaturityGrid, MultiplierM, RieszMap, gram_matrix,
                           multiplier_constant, multiplier_norm)
from .errors import ConfigurationError, IllConditionedError, InvalidInputError
from .market import MarketConfig, shifted_curve
from .seq_spaces import J_WEIGHT, BRACKET, WeightSpec, truncation_sweep, weight_matrix
from .spectral import decompose_psd, functional_calculus, polar_isometry, truncated_inverse

COND_MAX = 1e12
HEDGE_DECAY = False


@dataclass
class OperatorTriple:
    """``b`` and ``B`` as (M, N) nodal columns and ``A = B' G B``."""

    b: np.ndarray
    B: np.ndarray
    A: np.ndarray
    l: np.ndarray
    sigma: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.A))


def assemble_operators(cfg: MarketConfig, t: float, pbar=None, n: int | None = None) -> OperatorTriple:
    """Operators at time ``t`` for the curve ``pbar`` (defaults to ``l_t``), first ``n`` factors."""
    grid = cfg.grid
    l = shifted_curve(cfg.p0, t).values
    pbar = l if pbar is None else np.asarray(getattr(pbar, "values", pbar), dtype=float)
    if np.any(pbar <= 0):
        raise InvalidInputError("curve must be strictly positive")
    state = None if cfg.vol.deterministic else np.log(pbar)
    sigma = cfg.vol.evaluate(t, grid.nodes, state)
    if n is not None:
        sigma = sigma[:n]
    b = (pbar * sigma).T
    B = (l * sigma).T
    G = gram_matrix(grid, HEDGE_DECAY)
    A = B.T @ G @ B
    return OperatorTriple(b, B, 0.5 * (A + A.T), l, sigma)


# --------------------------------------------------------------------------
# Completeness
# --------------------------------------------------------------------------

@dataclass
class CompletenessReport:
    s: float
    convention: str
    k_estimate: float
    levels: tuple
    k_by_level: tuple
    ratios: tuple
    sigma_min_curve: tuple
    sample_times: tuple
    verdict: str
    witness: tuple | None = None
    k_quantiles: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "s": self.s, "convention": self.convention, "k_estimate": self.k_estimate,
            "levels": list(self.levels), "k_by_level": list(self.k_by_level),
            "ratios": list(self.ratios), "sigma_min_curve": list(self.sigma_min_curve),
            "sample_times": list(self.sample_times), "verdict": self.verdict,
            "witness": None if self.witness is None else list(self.witness),
            "k_quantiles": self.k_quantiles,
        }


def condition_k(A: np.ndarray, s: float, convention: str = BRACKET):
    """``k = 1 / sigma_min(W_s A^{1/2})``; ``inf`` when A has a numerical kernel."""
    d = decompose_psd(A, sym_tol=1e-9)
    if d.rank < d.n:
        return np.inf, 0.0
    root = functional_calculus(d, np.sqrt)
    W = weight_matrix(WeightSpec(s, convention), A.shape[0])
    smin = float(np.linalg.svd(W @ root, compute_uv=False)[-1])
    return (np.inf if smin == 0 else 1.0 / smin), smin


def check_completeness(cfg: MarketConfig, s: float, levels=None, ensemble=None,
                       sample_times=None, convention: str = BRACKET, max_paths: int = 32) -> CompletenessReport:
    """Estimate the constant ``k`` with ``||x|| <= k ||A^{1/2} x||_{l^{s,2}}`` over sampled states.

    For deterministic volatility ``A_t`` does not depend on the path and the
    curve ``l_t`` is used; otherwise the checkpoint curves of ``ensemble`` are
    sampled. The verdict is ``satisfied`` when ``k`` grows by at most 10% per
    doubling of the truncation level, ``violated`` when some ``A_t`` is
    rank-deficient or the last doubling more than doubles ``k``, and
    ``inconclusive`` otherwise.
    """
    if s < 0:
        raise InvalidInputError("s must be >= 0")
    levels = tuple(truncation_sweep(cfg.N, 16) if levels is None else levels)
    if max(levels) > cfg.N:
        raise InvalidInputError("truncation level exceeds the number of factors")
    if cfg.vol.deterministic or ensemble is None:
        if not cfg.vol.deterministic:
            raise ConfigurationError("state-dependent volatility needs an ensemble to sample")
        times = tuple(np.linspace(0.0, cfg.horizon, 5) if sample_times is None else sample_times)
        states = [(t, None, None) for t in times]
    else:
        steps = ensemble.checkpoint_steps
        npaths = min(max_paths, ensemble.n_paths)
        states = [(float(ensemble.times[k]), p, ensemble.curves[p, j])
                  for j, k in enumerate(steps) for p in range(npaths)]
        times = tuple(sorted({st[0] for st in states}))

    k_by_level, witness, smin_curve, samples = [], None, [], []
    for n in levels:
        k_n = 0.0
        for t, p, curve in states:
            A = assemble_operators(cfg, t, curve, n).A
            k, smin = condition_k(A, s, convention)
            if n == levels[-1]:
                samples.append(k)
                smin_curve.append(smin)
            if not np.isfinite(k) and witness is None:
                witness = (float(t), p, int(n))
            k_n = max(k_n, k)
        k_by_level.append(float(k_n))
    kb = np.array(k_by_level)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = tuple(float(r) for r in kb[1:] / kb[:-1])
    if witness is not None or (ratios and (not np.isfinite(ratios[-1]) or ratios[-1] > 2.0)):
        verdict = "violated"
    elif all(r <= 1.1 for r in ratios):
        verdict = "satisfied"
    else:
        verdict = "inconclusive"
    fin = np.array([v for v in samples if np.isfinite(v)])
    quant = {} if fin.size == 0 else {q: float(np.quantile(fin, q)) for q in (0.0, 0.5, 0.9, 1.0)}
    return CompletenessReport(float(s), convention, float(kb[-1]), levels, tuple(k_by_level), ratios,
                              tuple(smin_curve), tuple(float(t) for t in times), verdict, witness,
                              {str(k): v for k, v in quant.items()})


# --------------------------------------------------------------------------
# Portfolios
# --------------------------------------------------------------------------

@dataclass
class PortfolioProcess:
    """Portfolio ``theta_k = a_k delta_0 + theta^1_k`` held over ``[t_k, t_{k+1})``.

    Attributes
    ----------
    times : ndarray (K+1,)
    initial : float
        ``V_0(theta)``.
    Phi : ndarray (K, M, r)
        Scaled risky part ``qbar theta^1_k = Phi_k z_k`` (a nodal functional).
    z : ndarray (paths, K, r)
    l : ndarray (K, M)
    cash : ndarray (paths, K)
        Units ``a_k`` of ``delta_0``.
    discount : ndarray (paths, K+1)
        ``pbar_t(0)``.
    risky_value : ndarray (paths, K)
        ``<theta^1_k, pbar_k>``.
    exposure : ndarray (paths, K, N)
        ``b_k' theta^1_k`` (equals the claim integrand for an exact hedge).
    gains : ndarray (paths, K)
        Realized discounted price change of the held bonds over each step.
    q_frob2 : ndarray (paths_sub, K)
        ``|q_k|_F^2`` with ``q^{il} = <theta^1, pbar sigma^i sigma^l>`` on a path subsample.
    wealth : ndarray (paths, K+1)
        ``V_k = V_0 + sum_{j<k} (b_j' theta^1_j) . dW_j``; the cash units are chosen so that
        the book value equals ``V_k`` up to rounding, and ``V_0`` is the initial wealth exactly.
    """

    grid: MaturityGrid
    times: np.ndarray
    initial: float
    Phi: np.ndarray
    z: np.ndarray
    l: np.ndarray
    cash: np.ndarray
    discount: np.ndarray
    risky_value: np.ndarray
    exposure: np.ndarray
    gains: np.ndarray
    q_frob2: np.ndarray
    increments: np.ndarray
    wealth: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def book_value(self) -> np.ndarray:
        """``a_k pbar_k(0) + <theta^1_k, pbar_k>`` for k < K (paths, K)."""
        return self.cash * self.discount[:, :-1] + self.risky_value

    @property
    def valuation_residual(self) -> float:
        """Max ``|book value - wealth|``: rounding in the cash formula."""
        return float(np.abs(self.book_value - self.wealth[:, :-1]).max())

    @property
    def terminal_wealth(self) -> np.ndarray:
        """``V_0 + sum of realized gains``: what the self-financing strategy delivers at T."""
        return self.initial + self.gains.sum(axis=1)

    def scaled_risky(self, k: int) -> np.ndarray:
        """``qbar theta^1_k`` as nodal functionals (paths, M)."""
        return self.z[:, k] @ self.Phi[k].T

    def theta1(self, path: int, k: int, curve) -> DualCurve:
        """``theta^1`` at (path, step) given the curve ``pbar_{t_k}`` of that path."""
        pbar = np.asarray(getattr(curve, "values", curve), dtype=float)
        coeffs = self.Phi[k] @ self.z[path, k] * self.l[k] / pbar
        return DualCurve.from_functional(self.grid, coeffs)

    def theta0(self, path: int, k: int) -> DualCurve:
        return DualCurve(self.grid, ((0.0, float(self.cash[path, k])),))

    def scaled_dual_norms(self) -> np.ndarray:
        """``|qbar theta^1_k|_{H'}`` per path and step."""
        r = RieszMap.for_grid(self.grid, HEDGE_DECAY)
        out = np.empty(self.z.shape[:2])
        for k in range(self.z.shape[1]):
            C = self.Phi[k].T @ r.solve(self.Phi[k].T).T  # (r, r) = Phi' G^{-1} Phi
            out[:, k] = np.sqrt(np.maximum(np.einsum("pa,ab,pb->p", self.z[:, k], C, self.z[:, k]), 0))
        return out

    def path_norm(self) -> float:
        """``(E int |qbar theta^1|_{H'}^2 dt)^{1/2}``."""
        return float(np.sqrt(np.mean(np.sum(self.scaled_dual_norms() ** 2, axis=1) * self.dt)))

    def corrupted(self, step: int, amount: float) -> "PortfolioProcess":
        """Copy with ``a_step`` shifted by ``amount`` (fault injection)."""
        cash = self.cash.copy()
        cash[:, step] += amount
        return PortfolioProcess(**{**self.__dict__, "cash": cash, "info": dict(self.info)})


def _step_vol(cfg, t):
    return cfg.vol.evaluate(t, cfg.grid.nodes)


def _assemble_portfolio(cfg, ens, Phis, z, Y, initial, q_paths=256, info=None) -> PortfolioProcess:
    """Cash units, values, exposures and realized gains for a scaled risky part ``Phi_k z_k``."""
    return _assemble_many(cfg, ens, Phis, [z], [Y], initial, q_paths, [info])[0]


def _assemble_many(cfg, ens, Phis, zs, Ys, initial, q_paths=256, infos=None) -> list:
    """Assemble several portfolios sharing ``Phi`` (the per-node growth factors are computed once)."""
    times = ens.times
    K = times.size - 1
    dW = ens.increments()
    disc = ens.discount
    if disc is None:
        raise InvalidInputError("hedging needs pbar_t(0) at every step; simulate with record_steps=True")
    P = dW.shape[0]
    n = len(zs)
    cash = np.empty((n, P, K))
    risky = np.empty((n, P, K))
    expo = np.empty((n, P, K, cfg.N))
    gains = np.empty((n, P, K))
    nq = min(q_paths, P)
    qf = np.empty((n, nq, K))
    L = np.empty((K, cfg.grid.M))
    dt = ens.dt
    for k in range(K):
        t = times[k]
        l = shifted_curve(cfg.p0, t).values
        L[k] = l
        sigma = _step_vol(cfg, t)  # (N, M)
        Psi = Phis[k] * l[:, None]  # (M, r): node weights of <theta^1, pbar .>
        if not np.any(Psi):
            for j in range(n):
                risky[j, :, k] = 0.0
                expo[j, :, k] = 0.0
                gains[j, :, k] = 0.0
                qf[j, :, k] = 0.0
                cash[j, :, k] = Ys[j][:, k] / disc[:, k]
            continue
        growth = dW[:, k] @ sigma
        growth -= 0.5 * np.sum(sigma ** 2, axis=0) * dt
        np.expm1(growth, out=growth)
        gpsi = growth @ Psi  # (P, r)
        lv, ls = Psi.sum(axis=0), Psi.T @ sigma.T  # (r,), (r, N)
        Qk = np.einsum("ma,im,jm->aij", Psi, sigma, sigma)
        for j, z in enumerate(zs):
            zk = z[:, k]
            risky[j, :, k] = zk @ lv
            expo[j, :, k] = zk @ ls
            gains[j, :, k] = np.einsum("pa,pa->p", zk, gpsi)
            cash[j, :, k] = (Ys[j][:, k] - risky[j, :, k]) / disc[:, k]
            qf[j, :, k] = np.sum(np.einsum("pa,aij->pij", zk[:nq], Qk) ** 2, axis=(1, 2))
    out = []
    for j, z in enumerate(zs):
        info = (infos[j] if infos else None) or {}
        out.append(PortfolioProcess(cfg.grid, times, float(initial), np.asarray(Phis), z, L, cash[j], disc,
                                    risky[j], expo[j], gains[j], qf[j], dW, np.asarray(Ys[j], dtype=float),
                                    info))
    return out


def _dense_integrand(x: IntegrandProcess, N: int) -> np.ndarray:
    v = x.dense()
    if v.shape[2] > N:
        raise InvalidInputError(f"integrand has {v.shape[2]} factors, market has {N}")
    if v.shape[2] < N:
        v = np.concatenate([v, np.zeros(v.shape[:2] + (N - v.shape[2],))], axis=2)
    return v


def _running_wealth(xv, dW, c) -> np.ndarray:
    inc = np.einsum("pkn,pkn->pk", xv, dW)
    return np.concatenate([np.full((xv.shape[0], 1), float(c)), c + np.cumsum(inc, axis=1)], axis=1)


def _require_deterministic(cfg):
    if not cfg.vol.deterministic:
        raise ConfigurationError("portfolio assembly is implemented for deterministic volatility")


def exact_hedge(x: IntegrandProcess, ens, cond_max: float = COND_MAX) -> PortfolioProcess:
    """Replicating portfolio ``theta^1 = (l/pbar) S B A^{-1} x``, ``theta^0 = a delta_0``."""
    cfg = ens.config
    _require_deterministic(cfg)
    G = gram_matrix(cfg.grid, HEDGE_DECAY)
    xv = _dense_integrand(x, cfg.N)
    K = ens.times.size - 1
    Phis = np.empty((K, cfg.grid.M, cfg.N))
    conds = np.empty(K)
    frac_gap = None
    for k in range(K):
        if not np.any(xv[:, k]):
            # nothing to hedge at this step: pure money-account position
            Phis[k] = 0.0
            conds[k] = 1.0
            continue
        ops = assemble_operators(cfg, ens.times[k])
        cond = np.linalg.cond(ops.A) if np.any(ops.A) else np.inf
        conds[k] = cond
        if not np.isfinite(cond) or cond > cond_max:
            raise IllConditionedError(
                f"A_t at t={ens.times[k]:.6g} has condition number {cond:.3e} > {cond_max:.0e}; "
                "use approximate_hedge", condition=cond, sample=(float(ens.times[k]), None))
        Ainv = np.linalg.inv(ops.A)
        Phis[k] = G @ ops.B @ Ainv
        if frac_gap is None:
            pol = polar_isometry(ops.B, G)
            M_frac = pol.S @ functional_calculus(pol.spectrum, lambda v: 1.0 / np.sqrt(v))
            M_comp = ops.B @ Ainv
            frac_gap = float(np.abs(M_frac - M_comp).max() / max(np.abs(M_comp).max(), 1e-300))
    Y = _running_wealth(xv, ens.increments(), x.constant)
    port = _assemble_portfolio(cfg, ens, Phis, xv, Y, x.constant,
                               info={"method": "exact", "max_condition": float(conds.max()),
                                     "fractional_route_gap": frac_gap})
    port.info["hedge_residual"] = hedge_residual(port, xv)
    return port


def approximate_hedge(x: IntegrandProcess, ens, n: float) -> PortfolioProcess:
    """Regularized hedge ``eta = B f_n(A) x`` with ``f_n(lam) = 1/lam`` for ``lam >= 1/n``."""
    cfg = ens.config
    _require_deterministic(cfg)
    G = gram_matrix(cfg.grid, HEDGE_DECAY)
    xv = _dense_integrand(x, cfg.N)
    K = ens.times.size - 1
    Phis = np.empty((K, cfg.grid.M, cfg.N))
    f = truncated_inverse(n)
    for k in range(K):
        ops = assemble_operators(cfg, ens.times[k])
        Phis[k] = G @ ops.B @ functional_calculus(decompose_psd(ops.A, 1e-9), f)
    Y = _running_wealth(xv, ens.increments(), x.constant)
    port = _assemble_portfolio(cfg, ens, Phis, xv, Y, x.constant, info={"method": "approximate", "n": n})
    port.info["hedge_residual"] = hedge_residual(port, xv)
    port.info["portfolio_norm"] = port.path_norm()
    return port


def hedge_residual(port: PortfolioProcess, xv: np.ndarray) -> dict:
    """Relative l2 residual of ``b' theta^1 = x``: worst case and RMS over (path, step)."""
    num = np.linalg.norm(port.exposure - xv, axis=2)
    den = np.linalg.norm(xv, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(den > 0, num / den, num)
    return {"max_relative": float(rel.max()),
            "rms_relative": float(np.sqrt(np.sum(num ** 2) / max(np.sum(den ** 2), 1e-300)))}


def pathwise_hedge_check(port: PortfolioProcess, ens, xv: np.ndarray) -> float:
    """Max relative residual of ``<theta^1, pbar sigma^i> = x^i`` with theta^1 materialized on checkpoint curves."""
    cfg = ens.config
    worst = 0.0
    for j, k in enumerate(ens.checkpoint_steps):
        if k >= port.z.shape[1]:
            continue
        sigma = _step_vol(cfg, ens.times[k])
        for p in range(min(ens.n_paths, 64)):
            curve = ens.curves[p, j]
            th = port.theta1(p, k, curve).functional()
            got = (th * curve) @ sigma.T
            den = np.linalg.norm(xv[p, k])
            res = np.linalg.norm(got - xv[p, k])
            worst = max(worst, res / den if den > 0 else res)
    return float(worst)


def replication_report(port: PortfolioProcess, X: np.ndarray) -> dict:
    V = port.terminal_wealth
    err = V - X
    norm = float(np.sqrt(np.mean(X ** 2)))
    return {
        "initial_wealth": port.initial,
        "l2_error": float(np.sqrt(np.mean(err ** 2))),
        "claim_norm": norm,
        "relative_l2_error": float(np.sqrt(np.mean(err ** 2)) / norm) if norm > 0 else 0.0,
        "mean_abs_error": float(np.mean(np.abs(err))),
        "relative_mean_abs_error": float(np.mean(np.abs(err)) / max(np.mean(np.abs(X)), 1e-300)),
    }


@dataclass
class SelfFinancingReport:
    linear_residual: np.ndarray
    realized_residual: np.ndarray
    constant: float
    tolerance: float
    linear_tolerance: float
    flagged: np.ndarray

    @property
    def passed(self) -> bool:
        return not bool(np.any(self.flagged))

    @property
    def max_residual(self) -> float:
        return float(max(self.linear_residual.max(), self.realized_residual.max()))

    def as_dict(self) -> dict:
        return {"max_linear_residual": float(self.linear_residual.max()),
                "max_realized_residual": float(self.realized_residual.max()),
                "constant_C": self.constant, "tolerance": self.tolerance,
                "linear_tolerance": self.linear_tolerance,
                "flagged_paths": int(np.count_nonzero(self.flagged)), "passed": self.passed}


SF_SAFETY = 8.0
SF_ROUNDING = 1e-12


def verify_self_financing(port: PortfolioProcess, safety: float = SF_SAFETY) -> SelfFinancingReport:
    """Check that wealth changes only through price moves.

    Two residuals per path, maximized over steps:

    * linear: ``|V_k - V_0 - sum_{j<k} sum_i <theta_j, pbar_j sigma^i_j> dW^i_j|``;
    * realized: ``|V_k - V_0 - sum_{j<k} (realized price change of theta_j)|``.

    Realized and linearized gains differ by the quadratic terms
    ``1/2 sum q^{il} (dW^i dW^l - delta_il dt)``, a martingale with standard deviation
    ``C0 sqrt(dt)`` where ``C0^2 = 1/2 E sum_k |q_k|_F^2 dt``. The realized residual is
    compared with ``C sqrt(dt)``, ``C = safety * C0``. The linear residual involves no
    discretization error and is compared with a rounding tolerance.
    """
    dt = port.dt
    V = port.book_value
    P = V.shape[0]
    lin_inc = np.einsum("pkn,pkn->pk", port.exposure, port.increments[:, :, :port.exposure.shape[2]])
    lin = np.concatenate([np.zeros((P, 1)), np.cumsum(lin_inc, axis=1)[:, :-1]], axis=1)
    real = np.concatenate([np.zeros((P, 1)), np.cumsum(port.gains, axis=1)[:, :-1]], axis=1)
    V0 = port.wealth[:, :1]
    lin_res = np.abs(V - V0 - lin).max(axis=1)
    real_res = np.abs(V - V0 - real).max(axis=1)
    C0 = float(np.sqrt(0.5 * np.mean(np.sum(port.q_frob2, axis=1)) * dt))
    C = safety * C0
    scale = max(1.0, float(np.abs(V).max()))
    lin_tol = SF_ROUNDING * scale * np.sqrt(V.shape[1])
    tol = float(C * np.sqrt(dt) + lin_tol)
    flagged = (lin_res > lin_tol) | (real_res > tol)
    return SelfFinancingReport(lin_res, real_res, C, tol, float(lin_tol), flagged)


def write_portfolio_csv(path, port: PortfolioProcess, paths=None):
    """Per (path, step): cash units, risky value, wealth and the scaled risky functional."""
    import csv

    paths = range(port.z.shape[0]) if paths is None else paths
    nodes = port.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time", "cash_units", "risky_value", "wealth", "node", "scaled_risky"])
        V = port.wealth
        for p in paths:
            for k in range(port.z.shape[1]):
                phi = port.Phi[k] @ port.z[p, k]
                for m in range(nodes.size):
                    w.writerow([p, repr(float(port.times[k])), repr(float(port.cash[p, k])),
                                repr(float(port.risky_value[p, k])), repr(float(V[p, k])),
                                repr(float(nodes[m])), repr(float(phi[m]))])


# --------------------------------------------------------------------------
# Converse bound
# --------------------------------------------------------------------------

def converse_constant(A: np.ndarray, s: float, convention: str = J_WEIGHT) -> float:
    """``k' = |W_s A^{1/2}|`` (operator norm), i.e. ``sqrt(lambda_max(W_s A W_s))``."""
    W = weight_matrix(WeightSpec(s, convention), A.shape[0])
    return float(np.sqrt(max(np.linalg.eigvalsh(W @ A @ W)[-1], 0.0)))


def random_portfolio(ens, n_curves: int = 4, seed: int = 0, scale: float = 1.0) -> PortfolioProcess:
    """Random admissible self-financing portfolio with path-dependent risky part.

    The scaled risky part is ``qbar theta^1_k = G (sum_r z_r(k) f_r)`` with smooth random
    curves ``f_r`` and coefficients driven by the running Brownian state.
    """
    cfg = ens.config
    _require_deterministic(cfg)
    rng = np.random.default_rng(seed)
    grid = cfg.grid
    T = grid.nodes
    F = np.stack([np.sin((r + 1) * np.pi * T / grid.t_max + rng.uniform(0, np.pi))
                  * np.exp(-rng.uniform(0, 0.3) * T) for r in range(n_curves)], axis=1)
    G = gram_matrix(grid, HEDGE_DECAY)
    dW = ens.increments()
    K = dW.shape[1]
    Wrun = np.concatenate([np.zeros((dW.shape[0], 1, cfg.N)), np.cumsum(dW, axis=1)[:, :-1]], axis=1)
    mix = rng.normal(size=(cfg.N, n_curves))
    base = rng.normal(size=n_curves)
    z = scale * (base + np.tanh(Wrun @ mix))
    Phis = np.broadcast_to(G @ F, (K,) + (G @ F).shape)
    # self-financing wealth from the linearized gains: Y_k = V_0 + sum_j (b' theta)_j dW_j
    V0 = float(rng.uniform(0.5, 1.5))
    B_all = [assemble_operators(cfg, t).B for t in ens.times[:-1]]
    expo = np.stack([z[:, k] @ (G @ F).T @ B_all[k] for k in range(K)], axis=1)
    inc = np.einsum("pkn,pkn->pk", expo, dW)
    Y = np.concatenate([np.full((dW.shape[0], 1), V0), V0 + np.cumsum(inc, axis=1)], axis=1)
    return _assemble_portfolio(cfg, ens, np.array(Phis), z, Y, V0, info={"method": "random", "seed": seed})


@dataclass
class ConverseReport:
    s: float
    k_prime: float
    k_prime_by_level: tuple
    applicable: bool
    integrand_norm: float
    tight_bound: float
    product_bound: float
    multiplier_constant: float
    sup_qbar_norm: float
    theta_norm: float

    @property
    def holds(self) -> bool:
        return self.integrand_norm <= self.tight_bound * (1 + 1e-9) + 1e-300

    @property
    def slack(self) -> float:
        return self.tight_bound / self.integrand_norm if self.integrand_norm > 0 else np.inf

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()} | {
            "holds": self.holds, "slack": self.slack}


def converse_integrand_bound(port: PortfolioProcess, ens, s: float, convention: str = J_WEIGHT,
                             levels=None) -> ConverseReport:
    """Check ``|j^s x| <= k' |qbar theta|_{H'}`` for the integrand x of ``V_T(theta)``.

    ``x_k = b_k' theta_k`` is the exposure of the portfolio. Reports the weighted
    integrand norm ``(E int |j^s x|^2 dt)^{1/2}``, the bound
    ``k' (E int |qbar theta^1|_{H'}^2 dt)^{1/2}`` and the looser product
    ``k' C sup |qbar|_M |theta^1|`` measured on checkpoint curves.
    The hypothesis is reported inapplicable when ``k'`` grows by more than 10%
    per doubling of the truncation level.
    """
    cfg = ens.config
    N = cfg.N
    levels = tuple(truncation_sweep(N, min(N, 4)) if levels is None else levels)
    kp_levels = []
    for n in levels:
        kp = 0.0
        for t in ens.times[:-1][:: max(1, (ens.times.size - 1) // 8)]:
            kp = max(kp, converse_constant(assemble_operators(cfg, t, n=n).A, s, convention))
        kp_levels.append(kp)
    k_prime = kp_levels[-1]
    ratios = np.array(kp_levels[1:]) / np.array(kp_levels[:-1]) if len(kp_levels) > 1 else np.array([1.0])
    applicable = bool(np.all(ratios <= 1.1))

    w = WeightSpec(s, convention).weights(N)
    lhs = float(np.sqrt(np.mean(np.sum((port.exposure * w) ** 2, axis=(1, 2)) * port.dt)))
    qnorm = port.scaled_dual_norms()
    rhs = float(k_prime * np.sqrt(np.mean(np.sum(qnorm ** 2, axis=1) * port.dt)))

    # product form on checkpoint curves
    grid = cfg.grid
    r = RieszMap.for_grid(grid, HEDGE_DECAY)
    sup_q, th_sq = 0.0, []
    for j, k in enumerate(ens.checkpoint_steps):
        if k >= port.z.shape[1]:
            continue
        for p in range(min(ens.n_paths, 32)):
            curve = ens.curves[p, j]
            qbar = curve / port.l[k]
            sup_q = max(sup_q, multiplier_norm(MultiplierM.from_values(grid, qbar, decay=HEDGE_DECAY)))
            c = port.theta1(p, k, curve).functional()
            th_sq.append(float(c @ r.solve(c)))
    theta_norm = float(np.sqrt(np.mean(th_sq) * (ens.times[-1] - ens.times[0])))
    cm = multiplier_constant(grid, HEDGE_DECAY)
    return ConverseReport(float(s), float(k_prime), tuple(kp_levels), applicable, lhs, rhs,
                          float(k_prime * cm * sup_q * theta_norm), float(cm), float(sup_q), theta_norm)
