"""Periodic data and specialness: which perturbations of the cat map are rigid?

Three maps share the linearization A = [[3, 1], [1, 1]]. The conjugated map is
smoothly conjugate to A, so every periodic orbit carries A's exponents and its
unstable direction ignores the past. A generic trig perturbation breaks both.

    python demos/rigidity_tour.py
"""

import numpy as np

from anosov_lab import hyperbolic_bundles as hb
from anosov_lab import livsic_conformal as lc
from anosov_lab import periodic_data as pdata
from anosov_lab import torus_core as tc
from anosov_lab.errors import ObstructionNonzero

models = {
    "linear": tc.linear_model(),
    "conjugated": tc.conjugated_model(0.02),
    "trig eps=0.05": tc.trig_model(0.05),
}
A = models["linear"]
print(f"A has lambda_u = {A.split.lambda_u:.6f}, lambda_s = {A.split.lambda_s:.6f}, degree {A.degree}")

print("\n1. Periodic census and periodic data (periods <= 5)")
for name, f in models.items():
    counts = [sum(o.period for o in pdata.find_periodic(f, n)) for n in range(1, 6)]
    defect = pdata.periodic_data_defect(f, 5)
    print(f"  {name:14s} points {counts}  max |lambda(orbit) - lambda(A)| = {defect:.2e}")

print("\n2. Does E^u depend on the backward branch? (spread of angles, depth 30)")
p = np.array([0.31, 0.62])
for name, f in models.items():
    print(f"  {name:14s} spread = {hb.specialness_spread(f, p, depth=30):.2e}")

print("\n3. Livsic: log|Df|E^u| - lambda_u is a coboundary only when periodic sums vanish")
for name, f in models.items():
    try:
        psi = lc.observable_log_unstable(f, 128)
        sol = lc.solve_cohomology(f, psi, F=16, details=True)
        print(f"  {name:14s} solved, sup residual {sol.sup_residual:.1e}, sup|phi| {sol.phi.sup_norm():.3e}")
    except ObstructionNonzero as exc:
        print(f"  {name:14s} refused: periodic obstruction {exc.defect:.3g}")
