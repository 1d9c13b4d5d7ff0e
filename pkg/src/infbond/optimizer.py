"""Utility maximization through the duality solution ``X = phi(lambda xi_T)``.

``phi`` is the inverse of ``u'``. The multiplier ``lambda`` is calibrated to the
budget ``E_Q[phi(lambda xi_T)] = K0``; the optimal claim is then hedged with
:func:`infbond.hedging.exact_hedge`.

For deterministic ``gamma`` the density is a function of one Wiener integral:
under Q, ``ln xi_T = W^Q(gamma) + v/2`` with ``v = int |gamma|^2 dt``, so the
optimal claim is a cylinder claim with ``D_t X = lambda xi_T phi'(lambda xi_T) gamma_t``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .claims import CylinderClaim, IntegrandProcess, clark_ocone_integrand, ds_diagnostic, mc_mean
from .errors import CalibrationError, ConfigurationError, InvalidInputError
from .hedging import (_assemble_many, _running_wealth, check_completeness, exact_hedge,
                      replication_report, verify_self_financing)
from .market import MarketConfig, simulate_paths

LAMBDA_BRACKET = (1e-12, 1e12)


@dataclass
class UtilityFunction:
    """Utility ``u`` on ``(floor, inf)`` with ``u'``, ``u''``, ``phi = (u')^{-1}`` and ``phi'``.

    ``q`` and ``C`` are the growth exponent and constant of the Inada-type
    condition. Missing ``d2u``, ``phi`` or ``dphi`` are computed numerically.
    """

    kind: str
    u: object
    du: object
    d2u: object = None
    phi: object = None
    dphi: object = None
    floor: float = -np.inf
    q: float = 1.0
    C: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.floor > 0:
            raise InvalidInputError("domain floor must be <= 0")

    @classmethod
    def log(cls):
        return cls("log", np.log, lambda x: 1.0 / x, lambda x: -1.0 / x ** 2,
                   lambda y: 1.0 / y, lambda y: -1.0 / y ** 2, floor=0.0, q=1.0, C=1.0)

    @classmethod
    def power(cls, alpha: float):
        """``u(x) = x^alpha / alpha`` with ``alpha < 1``, ``alpha != 0``."""
        if not alpha < 1 or alpha == 0:
            raise InvalidInputError("power utility needs alpha < 1 and alpha != 0")
        beta = 1.0 / (alpha - 1.0)
        q = max(1.0 - alpha, 1.0 / (1.0 - alpha)) if alpha > 0 else 1.0 / (1.0 - alpha)
        return cls("power", lambda x: x ** alpha / alpha, lambda x: x ** (alpha - 1.0),
                   lambda x: (alpha - 1.0) * x ** (alpha - 2.0),
                   lambda y: y ** beta, lambda y: beta * y ** (beta - 1.0),
                   floor=0.0, q=q, C=abs(beta), params={"alpha": alpha})

    @classmethod
    def exponential(cls, a: float = 1.0):
        """``u(x) = -exp(-a x) / a`` on the whole line."""
        if a <= 0:
            raise InvalidInputError("risk aversion must be positive")
        return cls("exponential", lambda x: -np.exp(-a * x) / a, lambda x: np.exp(-a * x),
                   lambda x: -a * np.exp(-a * x), lambda y: -np.log(y) / a, lambda y: -1.0 / (a * y),
                   floor=-np.inf, q=1.0, C=1.0 / a, params={"a": a})

    @classmethod
    def custom(cls, u, du, d2u=None, phi=None, dphi=None, floor=-np.inf, q=1.0, C=1.0):
        return cls("custom", u, du, d2u, phi, dphi, floor, q, C)

    # numerical fallbacks
    def second(self, x):
        if self.d2u is not None:
            return self.d2u(x)
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        return (self.du(x + h) - self.du(x - h)) / (2 * h)

    def inverse_marginal(self, y):
        if self.phi is not None:
            return self.phi(y)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo0 = self.floor + 1e-12 if np.isfinite(self.floor) else -1e3
        out = np.empty_like(y)
        for i, yi in enumerate(y):
            lo, hi = lo0, max(1.0, lo0 + 1.0)
            while self.du(hi) > yi and hi < 1e15:
                hi *= 2.0
            if not np.isfinite(self.floor):
                while self.du(lo) < yi and lo > -1e15:
                    lo *= 2.0
            out[i] = brentq(lambda x: self.du(x) - yi, lo, hi, xtol=1e-14, rtol=1e-14)
        return out

    def inverse_marginal_derivative(self, y):
        if self.dphi is not None:
            return self.dphi(y)
        return 1.0 / self.second(self.inverse_marginal(y))


@dataclass
class UtilityReport:
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.clauses.values())

    @property
    def failing(self) -> list:
        return [name for name, c in self.clauses.items() if not c["passed"]]

    def as_dict(self) -> dict:
        return {"passed": self.passed, "clauses": self.clauses}


def _domain_grid(u: UtilityFunction) -> np.ndarray:
    if np.isfinite(u.floor):
        return u.floor + np.geomspace(1e-4, 1e4, 81)
    return np.linspace(-50.0, 50.0, 101)


def validate_utility(u: UtilityFunction, strict: bool = False) -> UtilityReport:
    """Numerical check of the Inada-type utility condition (branch ``u' > 0``).

    Clauses: ``concavity`` (``u'' < 0`` on a grid), ``inada`` (``u'`` blows up at the
    floor), ``growth near floor`` (``(1+|x|)^{-q} u'`` bounded away from zero),
    ``growth at infinity`` (``x^q u'`` bounded), ``inverse marginal growth``
    (``|y phi'(y)| <= C (y^q + y^{-q})``) and ``inverse marginal`` (``phi(u'(x)) = x``).
    With ``strict`` a failing clause raises InvalidInputError.
    """
    x = _domain_grid(u)
    res = {}
    with np.errstate(all="ignore"):
        d2 = np.array([u.second(v) for v in x])
        res["concavity"] = {"passed": bool(np.all(d2 < 0)), "max_second_derivative": float(np.max(d2))}

        if np.isfinite(u.floor):
            near = u.floor + np.geomspace(1.0, 1e-8, 17)
        else:
            near = -np.geomspace(1.0, 500.0, 17)
        dn = np.array([u.du(v) for v in near], dtype=float)
        res["inada"] = {"passed": bool(np.all(np.diff(dn) > 0) and dn[-1] >= 1e3 * max(dn[0], 1e-300)),
                        "marginal_at_floor": float(dn[-1])}

        g1 = (1.0 + np.abs(near)) ** (-u.q) * dn
        ok1 = bool(np.all(g1[-4:] > 0) and g1[-1] >= 0.5 * g1[-4])
        res["growth near floor"] = {"passed": ok1, "tail": [float(v) for v in g1[-4:]]}

        far = np.geomspace(1e2, 1e8, 13)
        g2 = far ** u.q * np.array([u.du(v) for v in far], dtype=float)
        ok2 = bool(np.all(np.isfinite(g2)) and g2[-1] <= 1.5 * g2[6] + 1e-300)
        res["growth at infinity"] = {"passed": ok2, "tail": [float(v) for v in g2[-3:]]}

        y = np.geomspace(1e-6, 1e6, 61)
        try:
            lhs = np.abs(y * np.array([u.inverse_marginal_derivative(v) for v in y], dtype=float).ravel())
            ratio = lhs / (u.C * (y ** u.q + y ** (-u.q)))
            res["inverse marginal growth"] = {"passed": bool(np.all(ratio <= 1 + 1e-9)),
                                              "max_ratio": float(np.max(ratio))}
        except (ValueError, RuntimeError, ZeroDivisionError) as exc:
            res["inverse marginal growth"] = {"passed": False, "max_ratio": float("inf"), "reason": str(exc)}

        try:
            back = np.array([u.inverse_marginal(u.du(v)) for v in x], dtype=float).ravel()
            err = float(np.max(np.abs(back - x) / np.maximum(1.0, np.abs(x))))
            res["inverse marginal"] = {"passed": bool(err <= 1e-10), "max_error": err}
        except (ValueError, RuntimeError, ZeroDivisionError) as exc:
            res["inverse marginal"] = {"passed": False, "max_error": float("inf"), "reason": str(exc)}
    rep = UtilityReport(res)
    if strict and not rep.passed:
        raise InvalidInputError(f"utility violates clause {rep.failing[0]!r}")
    return rep


# --------------------------------------------------------------------------
# Budget calibration
# --------------------------------------------------------------------------

@dataclass
class Calibration:
    lam: float
    lam_se: float
    budget: float
    budget_gap: float
    budget_se: float
    iterations: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def calibrate_lambda(u: UtilityFunction, xi_T, K0: float, weights=None, rtol: float = 1e-8) -> Calibration:
    """Bisection (in ``ln lambda``) on ``lambda -> E_Q[phi(lambda xi_T)] - K0``.

    ``xi_T`` are Q-samples; pass ``weights = xi_T`` when they are P-samples.
    """
    xi = np.asarray(xi_T, dtype=float)
    if np.any(xi <= 0):
        raise InvalidInputError("density samples must be positive")
    if not K0 > u.floor:
        raise InvalidInputError("initial wealth must exceed the utility floor")
    w = np.ones_like(xi) if weights is None else np.asarray(weights, dtype=float)

    def budget(lam):
        with np.errstate(all="ignore"):
            return float(np.mean(w * u.inverse_marginal(lam * xi)))

    lo, hi = LAMBDA_BRACKET
    glo, ghi = budget(lo) - K0, budget(hi) - K0
    if not (np.isfinite(glo) and np.isfinite(ghi) and glo > 0 > ghi):
        raise CalibrationError(f"no sign change of the budget gap on [{lo:g}, {hi:g}]: "
                               f"gaps {glo:.3e}, {ghi:.3e}")
    it = 0
    while hi / lo - 1.0 > rtol:
        mid = np.sqrt(lo * hi)
        if budget(mid) - K0 > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    lam = float(np.sqrt(lo * hi))
    vals = w * u.inverse_marginal(lam * xi)
    mean, se = mc_mean(vals)
    slope = float(np.mean(w * xi * u.inverse_marginal_derivative(lam * xi)))
    lam_se = float(se / abs(slope)) if slope != 0 else float("inf")
    return Calibration(lam, lam_se, mean, mean - K0, se, it)


def analytic_lambda(u: UtilityFunction, K0: float, v: float) -> float:
    """Closed-form multiplier for log and power utility when ``ln xi_T ~ N(v/2, v)`` under Q."""
    if u.kind == "log":
        return 1.0 / K0
    if u.kind == "power":
        beta = 1.0 / (u.params["alpha"] - 1.0)
        return float((K0 / np.exp(0.5 * beta * (1.0 + beta) * v)) ** (1.0 / beta))
    raise InvalidInputError(f"no closed form for {u.kind!r} utility")


# --------------------------------------------------------------------------
# Optimal claim
# --------------------------------------------------------------------------

class OptimalClaim(CylinderClaim):
    """``X = phi(lambda xi_T)`` with ``xi_T = exp(W^Q(gamma) + v/2)`` for deterministic gamma."""

    kind = "optimal_claim"

    def __init__(self, u: UtilityFunction, lam: float, gamma, v: float):
        self.u, self.lam, self.v = u, float(lam), float(v)

        def f(Z):
            with np.errstate(over="ignore"):
                return u.inverse_marginal(lam * np.exp(Z[..., 0] + 0.5 * v))

        def grad(Z):
            y = lam * np.exp(Z + 0.5 * v)
            return u.inverse_marginal_derivative(y) * y

        super().__init__(f, grad, [gamma])


@dataclass
class OptimalClaimResult:
    claim: OptimalClaim
    xhat: np.ndarray
    membership: object
    warnings: list


def optimal_claim(u: UtilityFunction, lam: float, ens, s_list=(1.0,), p_list=(2.0,)) -> OptimalClaimResult:
    """Realize ``X = phi(lambda xi_T)`` on a Q-ensemble and run the membership diagnostic."""
    cfg = ens.config
    if ens.measure != "Q":
        raise InvalidInputError("the optimal claim is realized on a Q-ensemble")
    v = cfg.gamma.integrated_square(ens.times)
    claim = OptimalClaim(u, lam, cfg.gamma, v)
    X = claim.realize(ens)
    gap = float(np.max(np.abs(np.log(lam * ens.xi_T) - np.log(lam) - claim_log_density(claim, ens))))
    notes = []
    if gap > 1e-8:
        notes.append(f"density readout differs from the Wiener-integral form by {gap:.3e}")
    y = lam * ens.xi_T
    env = u.C * (y ** u.q + y ** (-u.q))
    over = np.abs(y * u.inverse_marginal_derivative(y)) > env * (1 + 1e-9)
    if np.any(over):
        msg = f"growth envelope exceeded on {int(over.sum())} of {y.size} sampled states"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    membership = ds_diagnostic(claim, ens, s_list, p_list, route="malliavin", X=X)
    return OptimalClaimResult(claim, X, membership, notes)


def claim_log_density(claim: OptimalClaim, ens) -> np.ndarray:
    _, _, H = claim.canonical(ens)
    return np.einsum("pkn,kn->p", ens.increments(), H[0]) + 0.5 * claim.v


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------

@dataclass
class OptimalSolution:
    lam: float
    calibration: Calibration
    xhat: np.ndarray
    initial_wealth: float
    expected_utility: float
    utility_se: float
    portfolio: object
    membership: object
    replication: dict
    self_financing: dict
    comparisons: dict
    utility_report: dict
    completeness: dict
    warnings: list = field(default_factory=list)

    @property
    def dominates_comparisons(self) -> bool:
        return all(c["dominated_within_mc_error"] for c in self.comparisons.values())

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam, "calibration": self.calibration.as_dict(),
            "initial_wealth": self.initial_wealth, "expected_utility": self.expected_utility,
            "utility_se": self.utility_se, "membership": self.membership.as_dict(),
            "hedge_residual": self.portfolio.info.get("hedge_residual"),
            "replication": self.replication, "self_financing": self.self_financing,
            "comparisons": self.comparisons, "utility_report": self.utility_report,
            "completeness": self.completeness, "warnings": list(self.warnings),
        }


def _expected_utility(u, V, xi_T):
    """``E_P[u(V)] = E_Q[u(V) / xi_T]`` per-path terms (``-inf`` below the floor)."""
    with np.errstate(all="ignore"):
        vals = np.where(V > u.floor, u.u(np.maximum(V, u.floor + 1e-300)), -np.inf)
    return vals / xi_T


def comparison_portfolios(x: IntegrandProcess, ens, K0: float, base=None) -> dict:
    """Perturbations of the optimal hedge with the same initial wealth.

    Scaled risky parts (0.9, 1.1), risky parts lagged by one and five steps
    (re-expressed through the current step's operators) and the pure
    money-account position; each is self-financing by construction.
    """
    cfg = ens.config
    base = exact_hedge(x, ens) if base is None else base
    dW = ens.increments()
    zs = {"scaled 0.9": 0.9 * base.z, "scaled 1.1": 1.1 * base.z}
    for lag in (1, 5):
        z = np.zeros_like(base.z)
        z[:, lag:] = base.z[:, :-lag]
        zs[f"lagged {lag}"] = z
    zs["zero risky"] = np.zeros_like(base.z)
    Bs = [(base.l[k][:, None] * cfg.vol.evaluate(ens.times[k], cfg.grid.nodes).T) for k in range(base.z.shape[1])]
    Ys = []
    for z in zs.values():
        expo = np.stack([z[:, k] @ (base.Phi[k].T @ Bs[k]) for k in range(z.shape[1])], axis=1)
        Ys.append(_running_wealth(expo, dW, K0))
    ports = _assemble_many(cfg, ens, base.Phi, list(zs.values()), Ys, K0)
    return dict(zip(zs, ports))


def solve_optimal_portfolio(cfg: MarketConfig, u: UtilityFunction, K0: float, n_paths: int = 20000,
                            seed: int = 0, s: float = 1.0, ens=None, compare: bool = True,
                            workers: int = 1) -> OptimalSolution:
    """Calibrate, build the optimal claim, hedge it and compare against perturbed portfolios."""
    rep = validate_utility(u)
    hard = [c for c in rep.failing if c in ("concavity", "inada", "inverse marginal")]
    if hard:
        raise InvalidInputError(f"utility violates clause {hard[0]!r}")
    notes = [f"utility clause {c!r} not verified numerically" for c in rep.failing]
    comp = check_completeness(cfg, s)
    if comp.verdict == "violated":
        raise ConfigurationError("market is not complete at the requested s; "
                                 "use hedging.approximate_hedge for a regularized strategy")
    if ens is None:
        ens = simulate_paths(cfg, n_paths, seed=seed, measure="Q", workers=workers)
    cal = calibrate_lambda(u, ens.xi_T, K0)
    oc = optimal_claim(u, cal.lam, ens, s_list=(0.0, s))
    notes += oc.warnings
    x = clark_ocone_integrand(oc.claim, ens)
    x = IntegrandProcess(x.values, K0, x.dt, x.profiles)
    port = exact_hedge(x, ens)
    V = port.terminal_wealth
    eu_terms = _expected_utility(u, V, ens.xi_T)
    eu, eu_se = mc_mean(eu_terms)
    comparisons = {}
    if compare:
        for name, cp in comparison_portfolios(x, ens, K0, base=port).items():
            d = eu_terms - _expected_utility(u, cp.terminal_wealth, ens.xi_T)
            if not np.all(np.isfinite(d)):
                dm, dse = (np.inf, 0.0) if np.all(d[np.isfinite(d)] >= 0) else (float("nan"), 0.0)
            else:
                dm, dse = mc_mean(d)
            cu, cse = mc_mean(_expected_utility(u, cp.terminal_wealth, ens.xi_T))
            comparisons[name] = {"expected_utility": cu, "utility_se": cse, "difference": dm,
                                 "difference_se": dse,
                                 "dominated_within_mc_error": bool(dm >= -3.0 * dse)}
    return OptimalSolution(cal.lam, cal, oc.xhat, float(port.wealth[0, 0]), eu, eu_se, port,
                           oc.membership, replication_report(port, oc.xhat),
                           verify_self_financing(port).as_dict(), comparisons, rep.as_dict(),
                           comp.as_dict(), notes)
