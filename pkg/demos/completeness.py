"""Compare a market whose factor loadings decay polynomially with one where they decay geometrically.

Run with ``python3 demos/completeness.py``. With loadings 0.05/i the constant k
stays flat as more factors are included, so every sufficiently regular claim is
attainable. With loadings 0.05 2^-i the constant blows up (and becomes infinite
once the smallest eigenvalues fall below the numerical clamp), and the minimal
norm of a preimage of an explicit target grows without bound under truncation.
"""

from infbond.curve_spaces import MaturityGrid
from infbond.hedging import assemble_operators, check_completeness
from infbond.market import GammaModel, MarketConfig, flat_curve, scenario_a_vol, scenario_b_vol
from infbond.spectral import construct_obstructions

grid = MaturityGrid()
p0 = flat_curve(grid, 0.03)
N = 64
levels = (8, 16, 32, 64)

for label, vol in (("polynomial", scenario_a_vol(grid, p0, N)), ("geometric", scenario_b_vol(grid, p0, N))):
    cfg = MarketConfig(grid, N, 1.0, 1, p0, vol, GammaModel.zero(N))
    rep = check_completeness(cfg, 1.0, levels=levels)
    ks = ", ".join(f"{k:.3g}" for k in rep.k_by_level)
    print(f"{label:>10}: k at N = {levels} -> {ks}  ({rep.verdict})")

cfg = MarketConfig(grid, 128, 1.0, 1, p0, scenario_a_vol(grid, p0, 128), GammaModel.zero(128))
A = assemble_operators(cfg, 0.0).A
obs = construct_obstructions(lambda n: A[:n, :n], (16, 32, 64, 128))
print("minimal preimage norms of the obstruction target:",
      ", ".join(f"{v:.3g}" for v in obs.preimage_norm_curve))
