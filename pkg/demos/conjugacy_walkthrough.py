"""Three routes to the conjugacy h with h o A = g o h, and one dead end.

    python demos/conjugacy_walkthrough.py
"""

import numpy as np

from anosov_lab import conjugacy as cj
from anosov_lab import livsic_conformal as lc
from anosov_lab import torus_core as tc
from anosov_lab.errors import NoConvergence

g = tc.conjugated_model(0.02)

print("Grid solve of H(A x) = g(H(x)) on 256 x 256 points")
h = cj.base_conjugacy(g, N=256)
pts = np.random.default_rng(0).random((1000, 2))
err = np.max(tc.distance(h(pts), g.warp_apply(pts)))
print(f"  residual {h.residual:.1e}, sup|H - id| {h.sup_displacement():.4f}, error vs known warp {err:.1e}")

print("\nUnstable transfer function phi, needed by the leaf ODE")
phi = lc.solve_cohomology(g, lc.observable_log_unstable(g, 128), F=16)

print("\nLeaf ODE: conformal arclength along the g-leaf, two unit intervals of the A-leaf")
lm = cj.leaf_ode_conjugacy(g, phi=phi, h=h, span=2)
print(f"  anchors hit to {lm.endpoint_miss:.1e}; midpoint defect {lm.midpoint_defect():.1e}")
print(f"  intertwining g(h(t)) = h(A t) defect {np.max(lm.intertwining_defect(g)):.1e}")

print("\nAll three constructions on the unit segment of the A-leaf through 0")
rep = cj.method_agreement(g, h, phi, truth=g.warp_apply)
for k, v in rep.to_dict().items():
    print(f"  {k:16s} {v:.2e}")

print("\nRegularity along E^u at a random point")
base = np.array([0.37, 0.11])
reg = cj.regularity_estimate(h, base, g.split.e_u)
print(f"  derivative {reg.derivative:.10f}, stabilized {reg.stabilized}")
print(f"  exact |Dh e_u| = {np.linalg.norm(g.warp_jacobian(base) @ g.split.e_u):.10f}")

print("\nA generic perturbation is not conjugate to A: the grid solution blows up")
try:
    cj.base_conjugacy(tc.trig_model(0.02), N=128)
except NoConvergence as exc:
    print(f"  NoConvergence: {exc}")
loose = cj.base_conjugacy(tc.trig_model(0.02), N=128, strict=False)
print(f"  non-strict: residual {loose.residual:.1e} but sup|H - id| = {loose.sup_displacement():.1f}")
