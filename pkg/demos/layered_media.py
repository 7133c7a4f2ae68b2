"""Correctors of a layered medium against the one-dimensional closed form.

For a = s(x_1) Id the first corrector depends on x_1 only, the flux
s (1 + D_1 phi_1) is constant, and the effective matrix is diagonal with the
harmonic mean of s across the layers and the arithmetic mean along them.
The standard commutator then reduces to -abar_11 D_1 phi_1.
"""

import numpy as np

from commlab.commutator import standard_component
from commlab.correctors import build_hierarchy
from commlab.grid import gradient

M = 64
rng = np.random.default_rng(0)
s = 0.25 + 0.75 * rng.random(M)
a = np.zeros((2, 2, M, M))
a[0, 0] = a[1, 1] = s[:, None]

h = build_hierarchy(a, 1)
ab = h.abar[1][()]
print("effective matrix\n", ab)
print("harmonic mean   ", 1 / np.mean(1 / s))
print("arithmetic mean ", s.mean())

dphi = gradient(h.phi[(0,)])[0]
xi = standard_component(h, 1, 0, 0)
print("max |Xi_11 + abar_11 D_1 phi_1| =", np.abs(xi + ab[0, 0] * dphi).max())
