"""Margin maximization on the canonical four-bus model, both solver routes.

Run: python3 demos/02_synthesis.py   (about 20 s, mostly the first-order route)
"""

import numpy as np

from cpgrid import SparsityMask, SynthesisProblem, four_bus_canonical, max_gamma

model = four_bus_canonical()
print("open-loop eigenvalues:", np.round(model.open_loop_spectrum().real, 2))

masks = {
    "diagonal": np.eye(4, dtype=bool),
    "tridiagonal": np.abs(np.subtract.outer(range(4), range(4))) <= 1,
    "full": np.ones((4, 4), bool),
}
for name, allowed in masks.items():
    prob = SynthesisProblem(model, SparsityMask(allowed), beta=5000.0, rho=5.0)
    conic = max_gamma(prob)
    fo = max_gamma(prob, method="first_order")
    print(f"{name:>12}: gamma conic {conic.gamma:9.4f}  first-order {fo.gamma:9.4f}  "
          f"closed-loop max eig {conic.max_real:9.3f}")
