"""Corrector moments versus torus size.

Gradients are stationary, so <|grad phi|^2>^{1/2} is flat in M.  In d=2 the
corrector itself grows like (ln M)^{1/2}; the log model should fit the
variance better than any power M^p with p >= 0.2.
"""

from commlab.correctors import moment_scan
from commlab.ensemble import CoefficientMap, EnsembleSpec, SpectralCovariance
from commlab.fitting import log_vs_power
from commlab.grid import TorusGrid

spec = EnsembleSpec(TorusGrid(2, 16), SpectralCovariance(), CoefficientMap(), seed=100)
stats = moment_scan(spec, [16, 32, 64, 128], samples=32)
for q in ("grad_phi", "phi", "sigma"):
    M, v, se = stats.series(1, q, 2)
    print(f"{q:9}", " ".join(f"{x:.4f}+-{e:.4f}" for x, e in zip(v, se)),
          f" exponent {stats.exponents[(1, q, 2)]:+.3f}")
M, v, _ = stats.series(1, "phi", 2)
comp = log_vs_power(M, v ** 2)
print(f"variance of phi: R^2 log {comp.r2_log:.4f}, power {comp.r2_power:.4f} (p={comp.power_coeffs[2]:.2f})")
