"""The invariant density exp(-phi) dm and the entropy identities.

    python demos/srb_and_entropy.py
"""

import numpy as np

from anosov_lab import hyperbolic_bundles as hb
from anosov_lab import leaves as lv
from anosov_lab import srb_measures as sm
from anosov_lab import torus_core as tc

g = tc.conjugated_model(0.02)
rng = np.random.default_rng(1)

print("Delta^u along an unstable pair: the truncated products converge geometrically")
bx = hb.random_branch(g, rng.random(2), 30, rng)
by = hb.paired_branch(g, bx, lv.trace_leaf(g, bx.base, 0.1).points[-1])
r = sm.delta_u(g, bx, by)
print(f"  value {r.value:.12f}, theta {r.fit.theta:.3f} (1/mu_u = {1 / g.split.mu_u:.3f}), R2 {r.fit.r2:.4f}")

print("\nInvariant density on a 128 grid and box invariance m(g^-1 B) = m(B)")
m = sm.invariant_density(g, N=128, F=16)
boxes = sm.random_boxes(20, rng)
print(f"  worst box defect {np.max(sm.invariance_defects(g, m, boxes)):.1e}")

print("\nExponents and entropy (Birkhoff averages, 8 orbits x 10^4 steps)")
rep = sm.entropy_report(g, ns=range(3, 8))
print(f"  lambda_u {rep.lambda_u:.6f}  lambda_s {rep.lambda_s:.6f}  log k {rep.log_k:.6f}")
print(f"  h+ = lambda_u = {rep.h_plus:.6f},  h- = log k - lambda_s = {rep.h_minus:.6f}")
print(f"  separated-set growth rate {rep.h_separated:.4f}  counts {rep.separated_counts}")
