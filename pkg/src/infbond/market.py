"""Zero-coupon market configuration and Monte Carlo simulation.

Discounted bond prices are simulated in log coordinates on a fixed grid of
calendar maturity dates ``u_j = j * dx`` (``dx`` the maturity-grid spacing):

    ln Pbar_{t+dt}(u) = ln Pbar_t(u) + sum_i sigma^i_t(u - t) dW^{Q,i} - 1/2 |sigma_t(u - t)|^2 dt

with ``sigma(T) = 0`` for ``T < 0`` so that a bond freezes once it matures.
Each calendar bond is then a discrete Q-martingale, prices stay positive, and
the Musiela curve ``pbar_t(T) = Pbar_t(t + T)`` is a pure relabelling, i.e. an
exact left translation whenever ``t`` is a multiple of ``dx``. Between
calendar nodes the curve is read out by linear interpolation of log prices.

Every path draws its normals from its own Philox stream (key = seed, path
index in the high counter word), so ensembles are reproducible and
independent of how paths are split across workers. Finer time grids are
obtained from the same coarse path by Brownian-bridge midpoint refinement.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curve_spaces import CurveH, MaturityGrid, MultiplierM, multiplier_norm
from .errors import ConfigurationError, DomainError, InvalidInputError

P_MEASURE = "P"
Q_MEASURE = "Q"


# --------------------------------------------------------------------------
# Curves
# --------------------------------------------------------------------------

def flat_curve(grid: MaturityGrid, rate: float) -> CurveH:
    """Discount curve ``exp(-rate * T)``."""
    return CurveH(grid, np.exp(-rate * grid.nodes))


def extended_log_curve(p: CurveH, T) -> np.ndarray:
    """``ln p(T)`` for any ``T >= 0``; flat forward rate past the last node."""
    T = np.asarray(T, dtype=float)
    lp = np.log(p.values)
    grid = p.grid
    f_last = -(lp[-1] - lp[-2]) / grid.dx
    inside = np.interp(np.minimum(T, grid.t_max), grid.nodes, lp)
    return inside - f_last * np.maximum(T - grid.t_max, 0.0)


def shifted_curve(p: CurveH, t: float) -> CurveH:
    """``T -> p(t + T)`` with flat-forward extension, strictly positive."""
    return CurveH(p.grid, np.exp(extended_log_curve(p, t + p.grid.nodes)), p.decay)


def forward_and_spot(curve: CurveH):
    """Instantaneous forward curve ``-d ln p / dT`` and spot rate ``f(0)``.

    Central differences inside, second-order one-sided differences at the ends.
    """
    v = curve.values
    if np.any(v <= 0):
        raise DomainError("forward rates need a strictly positive curve")
    f = -np.gradient(np.log(v), curve.grid.dx, edge_order=2)
    return CurveH(curve.grid, f, curve.decay), float(f[0])


# --------------------------------------------------------------------------
# Volatility and market price of risk
# --------------------------------------------------------------------------

class VolatilityModel:
    """Factor volatilities ``sigma^i_t(T)``; subclasses implement ``evaluate``.

    ``evaluate(t, T, log_curve=None)`` returns an array of shape ``(N, len(T))``.
    State-dependent models receive ``log_curve``, the values ``ln pbar_t(T)``
    (shape ``(len(T),)`` or ``(paths, len(T))``, result then ``(paths, N, len(T))``).
    """

    kind = "deterministic_general"
    N = 0

    @property
    def deterministic(self) -> bool:
        return self.kind != "state_dependent"

    def evaluate(self, t, T, log_curve=None):  # pragma: no cover - interface
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "N": self.N}


@dataclass
class DeterministicVol(VolatilityModel):
    """Deterministic volatility from a callable ``func(t, T) -> (N, len(T))``."""

    func: object
    N: int
    kind: str = "deterministic_general"
    note: str = ""

    def evaluate(self, t, T, log_curve=None):
        T = np.atleast_1d(np.asarray(T, dtype=float))
        out = np.asarray(self.func(t, T), dtype=float).reshape(self.N, T.size)
        return out

    def describe(self):
        return {"kind": self.kind, "N": self.N, "decay": self.note}


def zero_vol(N: int) -> DeterministicVol:
    return DeterministicVol(lambda t, T: np.zeros((N, np.size(T))), N,
                            "deterministic_diagonal", "zero")


def single_factor_vol(scale: float, kappa: float = 0.0, N: int = 1) -> DeterministicVol:
    """Bond volatility ``scale * (1 - exp(-kappa T)) / kappa`` on factor 1 (``scale * T`` if kappa = 0)."""

    def func(t, T):
        T = np.maximum(T, 0.0)
        prof = scale * T if kappa == 0 else scale * (-np.expm1(-kappa * T)) / kappa
        out = np.zeros((N, T.size))
        out[0] = prof
        return out

    return DeterministicVol(func, N, "deterministic_diagonal", f"single factor, scale {scale}, kappa {kappa}")


def h_orthonormal_profiles(grid: MaturityGrid, N: int):
    """Profiles ``e_1..e_N`` vanishing at 0 and orthonormal in the H inner product.

    Returns ``(E, R)`` with ``E`` the (M, N) nodal values and ``R`` the (N, N)
    matrix such that ``e_i = sum_j R[j, i] sin(j pi T / t_max)``.
    """
    from .curve_spaces import gram_matrix

    x = grid.nodes
    S = np.sin(np.outer(x, np.arange(1, N + 1)) * np.pi / grid.t_max)
    G = gram_matrix(grid, decay=False)
    L = np.linalg.cholesky(S.T @ G @ S)
    R = np.linalg.inv(L).T
    return S @ R, R


@dataclass
class OrthogonalFactorVol(VolatilityModel):
    """``sigma^i_t = c_i e_i / l_t`` with ``l_t(T) = pbar_0(t + T)`` and H-orthonormal ``e_i``.

    The hedging operator columns ``l_t sigma^i_t = c_i e_i`` are then
    H-orthogonal with norms ``c_i``, so ``A_t = diag(c_i^2)`` at every time.
    Past ``t_max`` the profiles are held flat.
    """

    grid: MaturityGrid
    coeffs: np.ndarray
    p0: CurveH
    kind: str = "deterministic_diagonal"
    note: str = ""
    _R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.N = self.coeffs.size
        _, self._R = h_orthonormal_profiles(self.grid, self.N)

    def profiles(self, T) -> np.ndarray:
        T = np.clip(np.asarray(T, dtype=float), 0.0, self.grid.t_max)
        S = np.sin(np.outer(np.arange(1, self.N + 1), T) * np.pi / self.grid.t_max)
        return self._R.T @ S

    def evaluate(self, t, T, log_curve=None):
        T = np.atleast_1d(np.asarray(T, dtype=float))
        l = np.exp(extended_log_curve(self.p0, t + np.maximum(T, 0.0)))
        return self.coeffs[:, None] * self.profiles(T) / l

    def describe(self):
        return {"kind": self.kind, "N": self.N, "decay": self.note}


def scenario_a_vol(grid, p0, N, scale=0.05):
    """Columns with H-norms ``scale / i``."""
    i = np.arange(1, N + 1)
    return OrthogonalFactorVol(grid, scale / i, p0, note=f"{scale} * i^-1")


def scenario_b_vol(grid, p0, N, scale=0.05):
    """Columns with H-norms ``scale * 2^-i``."""
    i = np.arange(1, N + 1)
    return OrthogonalFactorVol(grid, scale * 2.0 ** (-i), p0, note=f"{scale} * 2^-i")


@dataclass
class LevelDependentVol(VolatilityModel):
    """State-dependent volatility ``base(t, T) * pbar_t(T)^beta``."""

    base: VolatilityModel
    beta: float
    kind: str = "state_dependent"

    def __post_init__(self):
        self.N = self.base.N

    def evaluate(self, t, T, log_curve=None):
        sig = self.base.evaluate(t, T)
        if log_curve is None:
            raise InvalidInputError("state-dependent volatility needs the current curve")
        level = np.exp(self.beta * np.asarray(log_curve))
        if level.ndim == 1:
            return sig * level
        return sig[None, :, :] * level[:, None, :]


@dataclass
class GammaModel:
    """Deterministic market price of risk ``gamma_t`` (callable ``t -> (N,)``)."""

    func: object
    N: int

    def __call__(self, t) -> np.ndarray:
        return np.asarray(self.func(t), dtype=float).reshape(self.N)

    @classmethod
    def zero(cls, N):
        return cls(lambda t: np.zeros(N), N)

    @classmethod
    def constant(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(lambda t: values, values.size)

    def integrated_square(self, times) -> float:
        """``int sum_i (gamma^i)^2 dt`` with left-point sums on the given time grid."""
        dt = np.diff(times)
        return float(sum(np.sum(self(t) ** 2) * h for t, h in zip(times[:-1], dt)))


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass
class MarketConfig:
    grid: MaturityGrid
    N: int
    horizon: float
    steps: int
    p0: CurveH
    vol: VolatilityModel
    gamma: GammaModel
    drift: object = None  # optional callable (t, T) -> m_t(T); default -sum gamma sigma

    def __post_init__(self):
        if self.horizon <= 0 or self.steps < 1 or self.N < 1:
            raise InvalidInputError("horizon, steps and N must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def times(self, refine: int = 0) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps * 2 ** refine + 1)

    def drift_curve(self, t, T) -> np.ndarray:
        if self.drift is not None:
            return np.asarray(self.drift(t, T), dtype=float)
        return -self.gamma(t) @ self.vol.evaluate(t, T)


@dataclass
class Check:
    name: str
    passed: bool
    measured: float | None = None
    note: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {c.name: {"passed": c.passed, "measured": c.measured, "note": c.note}
                for c in self.checks}


def _sample_times(cfg, count=9):
    return np.linspace(0.0, cfg.horizon, count)


def validate_config(cfg: MarketConfig, tol: float = 1e-10) -> ValidationReport:
    """Check the market conditions on the grid (discrete proxies of the moment conditions)."""
    if cfg.p0.grid != cfg.grid:
        raise InvalidInputError("initial curve lives on a different grid")
    if cfg.vol.N != cfg.N or cfg.gamma.N != cfg.N:
        raise InvalidInputError(
            f"factor count mismatch: config N={cfg.N}, vol N={cfg.vol.N}, gamma N={cfg.gamma.N}")
    grid = cfg.grid
    T = grid.nodes
    checks = []
    checks.append(Check("p0(0) = 1", bool(abs(cfg.p0.values[0] - 1.0) <= 1e-12),
                        float(cfg.p0.values[0])))
    checks.append(Check("p0 > 0", bool(np.all(cfg.p0.values > 0)), float(cfg.p0.values.min())))

    times = _sample_times(cfg)
    state = None if cfg.vol.deterministic else np.log(cfg.p0.values)
    sig0, hs, vmax, drift_res, gam = 0.0, 0.0, 0.0, 0.0, 0.0
    for t in times:
        sig = cfg.vol.evaluate(t, T, state)
        sig0 = max(sig0, float(np.abs(sig[:, 0]).max()))
        hs = max(hs, float(sum(multiplier_norm(MultiplierM.from_values(grid, s)) ** 2 for s in sig)))
        vmax = max(vmax, float(np.sum(sig ** 2, axis=0).max()))
        g = cfg.gamma(t)
        gam = max(gam, float(np.sum(g ** 2)))
        m = cfg.drift(t, T) if cfg.drift is not None else -g @ sig
        drift_res = max(drift_res, float(np.abs(np.asarray(m) + g @ sig).max()))
    checks.append(Check("sigma(0) = 0", bool(sig0 <= tol), sig0))
    checks.append(Check("drift relation m = -sum gamma sigma", bool(drift_res <= tol), drift_res))
    checks.append(Check("sum ||sigma^i||_M^2 finite", bool(np.isfinite(hs)), hs))
    checks.append(Check("sum (gamma^i)^2 finite", bool(np.isfinite(gam)), gam))
    limit = np.inf if vmax == 0 else 1.0 / (4.0 * vmax)
    checks.append(Check("step stability dt <= 1/(4 max vol^2)", bool(cfg.dt <= limit), cfg.dt,
                        f"limit {limit:.6g}"))
    if not cfg.vol.deterministic:
        checks.append(Check("exponential moments", True, None, "asserted by user"))
    return ValidationReport(checks)


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------

def _normals(seed: int, path: int, level: int, shape) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, int(level), int(path)])
    return np.random.Generator(bitgen).standard_normal(shape)


def brownian_increments(seed: int, path: int, steps: int, N: int, dt: float, refine: int = 0):
    """Brownian increments (steps * 2**refine, N) of one path.

    The coarse increments are fixed by ``(seed, path)``; each refinement level
    splits every step at its midpoint with an independent bridge draw.
    """
    dW = _normals(seed, path, 0, (steps, N)) * np.sqrt(dt)
    h = dt
    for level in range(1, refine + 1):
        z = _normals(seed, path, level, dW.shape)
        first = 0.5 * dW + np.sqrt(h / 4.0) * z
        fine = np.empty((2 * dW.shape[0], N))
        fine[0::2] = first
        fine[1::2] = dW - first
        dW = fine
        h *= 0.5
    return dW


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

@dataclass
class MarketPath:
    times: np.ndarray
    checkpoint_steps: tuple
    curves: list
    short_rates: np.ndarray
    discount: np.ndarray
    xi: np.ndarray
    brownian_increments: np.ndarray
    seed: int
    index: int


@dataclass
class MarketEnsemble:
    """Simulated paths plus what is needed to regenerate their noise.

    Attributes
    ----------
    times : ndarray (K+1,)
    checkpoint_steps : tuple of int
        Steps at which full Musiela curves were stored.
    curves : ndarray (paths, checkpoints, M)
    track_dates, tracked : ndarray
        Fixed calendar maturities and their discounted prices (paths, checkpoints, dates).
    discount : ndarray (paths, K+1) or None
        ``pbar_t(0)`` (the inverse money account).
    short_rate : ndarray (paths, K+1) or None
    log_xi : ndarray (paths, K+1) or (paths, 1)
        Log density process (only the terminal value unless steps were recorded).
    boundary_residual : ndarray (paths,) or None
        ``max_t |ln pbar_t(0) + int_0^t r ds|``.
    """

    config: MarketConfig
    seed: int
    n_paths: int
    measure: str
    refine: int
    times: np.ndarray
    checkpoint_steps: tuple
    curves: np.ndarray
    track_dates: np.ndarray
    tracked: np.ndarray
    discount: np.ndarray | None
    short_rate: np.ndarray | None
    log_xi: np.ndarray
    boundary_residual: np.ndarray | None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def xi_T(self) -> np.ndarray:
        return np.exp(self.log_xi[:, -1])

    @property
    def xi(self) -> np.ndarray:
        if self.log_xi.shape[1] != self.times.size:
            raise InvalidInputError("density path was not recorded; simulate with record_steps=True")
        return np.exp(self.log_xi)

    def curve(self, path: int, step: int) -> CurveH:
        k = self.checkpoint_steps.index(step)
        return CurveH(self.config.grid, self.curves[path, k])

    def increments(self, paths=None, measure: str = Q_MEASURE) -> np.ndarray:
        """Regenerate Brownian increments (paths, K, N) under P or Q (full set cached)."""
        if paths is None:
            if measure not in self._cache:
                self._cache[measure] = self.increments(range(self.n_paths), measure)
            return self._cache[measure]
        idx = np.atleast_1d(paths)
        cfg = self.config
        base = np.stack([brownian_increments(self.seed, int(p), cfg.steps, cfg.N, cfg.dt, self.refine)
                         for p in idx])
        if measure == self.measure:
            return base
        shift = np.stack([cfg.gamma(t) for t in self.times[:-1]]) * self.dt
        return base - shift if measure == Q_MEASURE else base + shift

    def path(self, i: int) -> MarketPath:
        return MarketPath(
            times=self.times,
            checkpoint_steps=self.checkpoint_steps,
            curves=[CurveH(self.config.grid, c) for c in self.curves[i]],
            short_rates=None if self.short_rate is None else self.short_rate[i],
            discount=None if self.discount is None else self.discount[i],
            xi=np.exp(self.log_xi[i]),
            brownian_increments=self.increments([i])[0],
            seed=self.seed,
            index=i,
        )


class CalendarGrid:
    """Calendar-date grid covering every maturity seen during the horizon."""

    def __init__(self, cfg: MarketConfig):
        grid = cfg.grid
        self.dx = grid.dx
        n = int(np.ceil((grid.t_max + cfg.horizon) / grid.dx)) + 3
        self.u = np.arange(n) * grid.dx
        self.log_p0 = extended_log_curve(cfg.p0, self.u)

    def readout_index(self, t, T):
        """Left node and weight for linear interpolation at calendar dates ``t + T``."""
        pos = (t + np.asarray(T, dtype=float)) / self.dx
        j = np.floor(pos + 1e-9).astype(int)
        w = np.clip(pos - j, 0.0, 1.0)
        return j, w

    def read(self, logP, t, T):
        j, w = self.readout_index(t, T)
        return (1.0 - w) * logP[..., j] + w * logP[..., j + 1]


def _vol_on_calendar(cfg, cal, t, logP=None):
    T = cal.u - t
    live = T >= 0
    if cfg.vol.deterministic:
        sig = np.zeros((cfg.N, cal.u.size))
        sig[:, live] = cfg.vol.evaluate(t, T[live])
        return sig
    state = logP[:, live]
    sig = np.zeros((logP.shape[0], cfg.N, cal.u.size))
    sig[:, :, live] = cfg.vol.evaluate(t, T[live], state)
    return sig


def _simulate_block(cfg, cal, vol_steps, gammas, paths, seed, measure, refine,
                    ckpt, record, dt, dates):
    B = len(paths)
    K = cfg.steps * 2 ** refine
    dW = np.stack([brownian_increments(seed, p, cfg.steps, cfg.N, cfg.dt, refine) for p in paths])
    shift = gammas * dt  # (K, N)
    if measure == Q_MEASURE:
        dWQ, dWP = dW, dW + shift
    else:
        dWP, dWQ = dW, dW - shift

    logP = np.tile(cal.log_p0, (B, 1))
    T_nodes = cfg.grid.nodes
    curves = np.empty((B, len(ckpt), cfg.grid.M))
    tracked = np.empty((B, len(ckpt), dates.size))
    nrec = K + 1 if record else 1
    log_disc = np.zeros((B, nrec))
    rate = np.zeros((B, nrec))
    log_xi = np.zeros((B, nrec))
    lx = np.zeros(B)
    three = np.array([0.0, cal.dx, 2 * cal.dx])
    integ = np.zeros(B)
    resid = np.zeros(B)
    prev_r = None
    ck = {s: n for n, s in enumerate(ckpt)}

    def observe(k):
        nonlocal prev_r, integ, resid
        t = k * dt
        l3 = cal.read(logP, t, three)
        r = -(-3.0 * l3[:, 0] + 4.0 * l3[:, 1] - l3[:, 2]) / (2.0 * cal.dx)
        if prev_r is not None:
            integ = integ + 0.5 * (prev_r + r) * dt
        prev_r = r
        resid = np.maximum(resid, np.abs(l3[:, 0] + integ))
        if k in ck:
            curves[:, ck[k]] = np.exp(cal.read(logP, t, T_nodes))
            tracked[:, ck[k]] = np.exp(cal.read(logP, 0.0, dates))
        if record:
            log_disc[:, k] = l3[:, 0]
            rate[:, k] = r
            log_xi[:, k] = lx
        elif k == K:
            log_disc[:, 0] = l3[:, 0]
            rate[:, 0] = r
            log_xi[:, 0] = lx

    observe(0)
    for k in range(K):
        if vol_steps is not None:
            sig, half_var = vol_steps[k]
            logP += dWQ[:, k, :] @ sig - half_var
        else:
            sig = _vol_on_calendar(cfg, cal, k * dt, logP)
            logP += np.einsum("bn,bnu->bu", dWQ[:, k, :], sig) - 0.5 * np.sum(sig ** 2, axis=1) * dt
        g = gammas[k]
        lx = lx + dWP[:, k, :] @ g - 0.5 * float(g @ g) * dt
        observe(k + 1)
    return curves, tracked, log_disc, rate, log_xi, resid


def simulate_paths(cfg: MarketConfig, n_paths: int, seed: int = 0, measure: str = Q_MEASURE,
                   refine: int = 0, checkpoints=None, record_steps: bool = True,
                   block_size: int = 2048, workers: int = 1, validate: bool = True,
                   track_dates=()) -> MarketEnsemble:
    """Simulate an ensemble of market paths.

    Parameters
    ----------
    n_paths, seed
        Path ``p`` always uses the stream ``(seed, p)``.
    measure
        ``"Q"`` draws Q-Brownian increments, ``"P"`` draws P-Brownian increments;
        the other set is derived through ``W^Q = W - int gamma dt``.
    refine
        Brownian-bridge refinement level; the step count is ``steps * 2**refine``.
    checkpoints
        Step indices at which full curves are stored (default: 0, K/4, K/2, 3K/4, K).
    record_steps
        Store ``pbar_t(0)``, ``r_t`` and ``ln xi_t`` at every step (else terminal only).
    workers
        Thread count; results do not depend on it.
    track_dates
        Calendar maturity dates whose discounted prices are stored at the checkpoints.
    """
    if measure not in (P_MEASURE, Q_MEASURE):
        raise InvalidInputError(f"unknown measure {measure!r}")
    if n_paths < 1:
        raise InvalidInputError("need at least one path")
    if validate:
        report = validate_config(cfg)
        if not report.passed:
            failed = [c.name for c in report.checks if not c.passed]
            raise ConfigurationError(f"market configuration fails checks: {failed}")
    K = cfg.steps * 2 ** refine
    dt = cfg.horizon / K
    times = np.linspace(0.0, cfg.horizon, K + 1)
    if checkpoints is None:
        checkpoints = sorted({0, K // 4, K // 2, (3 * K) // 4, K})
    ckpt = tuple(int(c) for c in checkpoints)
    if any(c < 0 or c > K for c in ckpt):
        raise InvalidInputError("checkpoint outside the time grid")

    cal = CalendarGrid(cfg)
    dates = np.asarray(track_dates, dtype=float).reshape(-1)
    gammas = np.stack([cfg.gamma(t) for t in times[:-1]])
    vol_steps = None
    if cfg.vol.deterministic:
        vol_steps = []
        for k in range(K):
            sig = _vol_on_calendar(cfg, cal, k * dt)
            vol_steps.append((sig, 0.5 * np.sum(sig ** 2, axis=0) * dt))

    blocks = [list(range(a, min(a + block_size, n_paths))) for a in range(0, n_paths, block_size)]

    def run(paths):
        return _simulate_block(cfg, cal, vol_steps, gammas, paths, seed, measure, refine,
                               ckpt, record_steps, dt, dates)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    curves, tracked, disc, rate, lxi, resid = (np.concatenate(parts) for parts in zip(*results))
    return MarketEnsemble(
        config=cfg, seed=int(seed), n_paths=int(n_paths), measure=measure, refine=int(refine),
        times=times, checkpoint_steps=ckpt, curves=curves,
        track_dates=dates, tracked=tracked,
        discount=np.exp(disc) if record_steps else None,
        short_rate=rate if record_steps else None,
        log_xi=lxi, boundary_residual=resid,
    )


def density_process(cfg: MarketConfig, ensemble: MarketEnsemble) -> np.ndarray:
    """``xi_t`` per path and step: ``exp(sum int gamma dW - 1/2 int |gamma|^2 dt)``."""
    return ensemble.xi


def fixed_maturity_prices(ensemble: MarketEnsemble, maturity: float) -> np.ndarray:
    """``pbar_t(U - t)`` at every checkpoint for a tracked maturity date ``U`` (paths, checkpoints)."""
    hit = np.flatnonzero(np.isclose(ensemble.track_dates, maturity, rtol=0, atol=1e-12))
    if hit.size == 0:
        raise InvalidInputError(f"maturity date {maturity} was not tracked during simulation")
    return ensemble.tracked[:, :, hit[0]]


def write_ensemble_csv(path, ensemble: MarketEnsemble):
    """Checkpoint curves as rows ``path,time,node,value``."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time", "node", "value"])
        for p in range(ensemble.n_paths):
            for n, step in enumerate(ensemble.checkpoint_steps):
                t = repr(float(ensemble.times[step]))
                for k, v in enumerate(ensemble.curves[p, n]):
                    w.writerow([p, t, k, repr(float(v))])


@dataclass
class BrownianEnsemble:
    """Bare Q-Brownian paths with the same per-path streams as market ensembles."""

    N: int
    horizon: float
    steps: int
    n_paths: int
    seed: int = 0
    refine: int = 0
    measure: str = Q_MEASURE
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps * 2 ** self.refine + 1)

    @property
    def dt(self) -> float:
        return self.horizon / (self.steps * 2 ** self.refine)

    def increments(self, paths=None, measure: str = Q_MEASURE) -> np.ndarray:
        if measure != Q_MEASURE:
            raise InvalidInputError("bare Brownian ensembles carry no market price of risk")
        if paths is None:
            if "all" not in self._cache:
                self._cache["all"] = self.increments(range(self.n_paths))
            return self._cache["all"]
        return np.stack([brownian_increments(self.seed, int(p), self.steps, self.N,
                                             self.horizon / self.steps, self.refine)
                         for p in np.atleast_1d(paths)])
