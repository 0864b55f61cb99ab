"""Closing lemma and specification on a map with two different periodic exponents.

    python demos/closing_and_specification.py
"""

import numpy as np

from anosov_lab import periodic_data as pdata
from anosov_lab import torus_core as tc

f = tc.trig_model(0.05)
o = pdata.find_periodic(f, 6)[-1]
print(f"A period-{o.period} orbit with lambda_u = {o.lambda_u:.6f}")

rng = np.random.default_rng(2)
for sigma in (1e-5, 1e-3):
    noisy = o.points + sigma * rng.standard_normal(o.points.shape)
    res = pdata.closing_lemma_shadow(f, np.vstack([noisy, noisy[:1]]))
    back = np.max(tc.distance(res.orbit.points, o.points))
    print(f"  noise {sigma:.0e}: shadow at distance {res.distance:.2e}, recovered orbit off by {back:.1e}")

table = pdata.periodic_table(f, 2)
p = min(table, key=lambda z: z.lambda_u)
q = max(table, key=lambda z: z.lambda_u)
print(f"\nBlocks from p (lambda_u {p.lambda_u:.5f}) and q (lambda_u {q.lambda_u:.5f})")
res = pdata.specification_concatenate(f, p, q, [200, 400, 200], gap=20)
print(f"  one periodic orbit of period {res.orbit.period}, residual {res.orbit.residual:.1e}")
for b in res.blocks:
    print(f"  block {b['index']} ({b['orbit']}, {b['length']} steps): "
          f"Birkhoff {b['birkhoff_lambda_u']:.5f} vs target {b['target_lambda_u']:.5f}")
print("\nThe growing schedule k_(j+1) = (k_1 + ... + k_j + j gap)^2:", pdata.lemma_block_lengths(4, 20))
