"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest -v tests/test_acceptance.py``; the summary lines are
printed even when output capture is on.
"""

import math
import time

import numpy as np
import pytest

from anosov_lab import conjugacy as cj
from anosov_lab import hyperbolic_bundles as hb
from anosov_lab import leaves as lv
from anosov_lab import livsic_conformal as lc
from anosov_lab import periodic_data as pdata
from anosov_lab import srb_measures as sm
from anosov_lab import torus_core as tc
from anosov_lab.errors import ObstructionNonzero
from anosov_lab.fields import GridField, eval_trig

from .conftest import warp_oracles

LAMBDA_U = math.log(2 + math.sqrt(2))
LAMBDA_S = math.log(2 - math.sqrt(2))
LOG2 = math.log(2)


@pytest.fixture(scope="module")
def phi256(conjugated):
    """Unstable transfer function of the conjugated model at the default resolution."""
    psi = lc.observable_log_unstable(conjugated, 256)
    return psi, lc.solve_cohomology(conjugated, psi, F=32, details=True)


def verdict(capsys, n, title, checks, elapsed, limit=None):
    """Print the criterion line and return the overall verdict."""
    checks = dict(checks)
    if limit is not None:
        checks[f"runtime<{limit:g}s"] = (elapsed < limit, f"{elapsed:.1f}s")
    ok = all(v[0] for v in checks.values())
    detail = "; ".join(f"{k} {'ok' if v[0] else 'FAIL'} ({v[1]})" for k, v in checks.items())
    with capsys.disabled():
        print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {title} [{elapsed:.1f}s] {detail}")
    return ok


def _det_count(A, n):
    """``|det(A^n - I)|`` in exact integer arithmetic."""
    (a, b), (c, d) = A
    P = [[1, 0], [0, 1]]
    for _ in range(n):
        P = [[P[0][0] * a + P[0][1] * c, P[0][0] * b + P[0][1] * d],
             [P[1][0] * a + P[1][1] * c, P[1][0] * b + P[1][1] * d]]
    return abs((P[0][0] - 1) * (P[1][1] - 1) - P[0][1] * P[1][0])


def test_criterion_1_exponent_sum(capsys, linear, conjugated):
    t0 = time.perf_counter()
    sp = linear.split
    lin_err = abs(sp.lambda_u + sp.lambda_s - LOG2)
    lu, ls, _ = sm.birkhoff_exponents(linear, n_orbits=4, length=2000)
    lin_birk = abs(lu.mean() + ls.mean() - LOG2)
    lu, ls, _ = sm.birkhoff_exponents(conjugated, n_orbits=8, length=10_000)
    conj_err = abs(lu.mean() + ls.mean() - LOG2)
    el = time.perf_counter() - t0
    ok = verdict(capsys, 1, "exponent sum lambda_u + lambda_s = log 2", {
        "linear": (lin_err < 1e-12 and lin_birk < 1e-12, f"{max(lin_err, lin_birk):.2e}"),
        "linear values": (abs(sp.lambda_u - LAMBDA_U) < 1e-12 and abs(sp.lambda_s - LAMBDA_S) < 1e-12,
                          f"{sp.lambda_u:.6f}, {sp.lambda_s:.6f}"),
        "conjugated Birkhoff": (conj_err < 1e-3, f"{conj_err:.2e}"),
    }, el, 10)
    assert ok


def test_criterion_2_periodic_census(capsys, linear, conjugated):
    t0 = time.perf_counter()
    checks = {}
    for name, f in (("linear", linear), ("conjugated", conjugated)):
        found = []
        for n in range(1, 7):
            orbits = pdata.find_periodic(f, n)
            found.append(sum(o.period for o in orbits))
        expected = [_det_count(f.A, n) for n in range(1, 7)]
        checks[name] = (found == expected, f"{found}")
    checks["n=1,2"] = (_det_count(linear.A, 1) == 1 and _det_count(linear.A, 2) == 7, "1, 7")
    el = time.perf_counter() - t0
    assert verdict(capsys, 2, "periodic census |det(A^n - I)|, n <= 6", checks, el, 60)


def test_criterion_3_periodic_rigidity(capsys, conjugated, trig05):
    t0 = time.perf_counter()
    d_conj = pdata.periodic_data_defect(conjugated, 5)
    d_trig = pdata.periodic_data_defect(trig05, 5)
    el = time.perf_counter() - t0
    assert verdict(capsys, 3, "periodic data match A", {
        "conjugated": (d_conj < 1e-6, f"{d_conj:.2e}"),
        "trig eps=0.05 flagged": (d_trig > 1e-6, f"{d_trig:.2e}"),
    }, el)


def _random_trig(rng, K=4):
    c = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            if (k1, k2) > (0, 0):
                z = (rng.standard_normal() + 1j * rng.standard_normal()) / (1 + k1 * k1 + k2 * k2)
                c[k1 + K, k2 + K] = z
                c[K - k1, K - k2] = np.conj(z)
    return c


def test_criterion_4_livsic(capsys, trig05, conjugated, phi256):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    N, F = 256, 32
    coef = _random_trig(rng)
    X = tc.grid_points(N)
    truth = eval_trig(coef, X)
    psi = GridField.from_values(eval_trig(coef, trig05.apply(X)) - truth, 64)
    phi = lc.solve_cohomology(trig05, psi, F=F)
    man_err = float(np.max(np.abs(phi.values - (truth - truth.mean()))))
    _, sol = phi256
    try:
        lc.observable_log_unstable(trig05, 64)
        gate = (False, "no obstruction raised")
    except ObstructionNonzero as exc:
        gate = (True, f"obstruction {exc.defect:.3g}")
    el = time.perf_counter() - t0
    assert verdict(capsys, 4, "Livsic solver", {
        "manufactured": (man_err < 1e-6, f"{man_err:.2e}"),
        "conjugated residual": (sol.sup_residual < 1e-4, f"{sol.sup_residual:.2e}"),
        "obstruction gate": gate,
    }, el, 120)


def test_criterion_5_conformal_scaling(capsys, linear, conjugated, phi256):
    t0 = time.perf_counter()
    target = 2 + math.sqrt(2)
    rng = np.random.default_rng(5)
    a, b = lc.random_unstable_pairs(linear, 100, rng)
    r_lin = np.max(np.abs(lc.conformal_scaling(linear, None, a, b).ratios / target - 1))
    a, b = lc.random_unstable_pairs(conjugated, 100, rng)
    r_conj = np.max(np.abs(lc.conformal_scaling(conjugated, phi256[1].phi, a, b).ratios / target - 1))
    el = time.perf_counter() - t0
    assert verdict(capsys, 5, "conformal metric scales by exp(lambda_u)", {
        "linear": (r_lin < 1e-9, f"{r_lin:.2e}"),
        "conjugated": (r_conj < 1e-6, f"{r_conj:.2e}"),
    }, el)


def test_criterion_6_conjugacy(capsys, conjugated, phi256):
    t0 = time.perf_counter()
    h = cj.base_conjugacy(conjugated, N=512)
    pts = np.random.default_rng(6).random((2000, 2))
    err_grid = float(np.max(tc.distance(h.U + tc.grid_points(512), conjugated.warp_apply(tc.grid_points(512)))))
    err_off = float(np.max(tc.distance(h(pts), conjugated.warp_apply(pts))))
    rep = cj.method_agreement(conjugated, h, phi256[1].phi, truth=conjugated.warp_apply)
    el = time.perf_counter() - t0
    assert verdict(capsys, 6, "conjugacy round trip", {
        "h vs h0": (max(err_grid, err_off) < 1e-3, f"grid {err_grid:.2e}, off-grid {err_off:.2e}"),
        "three methods agree": (rep.worst < 1e-4, f"{rep.worst:.2e}"),
        "residual": (h.residual < 1e-8, f"{h.residual:.2e}"),
    }, el, 300)


def test_criterion_7_srb(capsys, conjugated):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    s_u, s_s, jac = warp_oracles(conjugated)
    fits, oracle_err = [], 0.0
    for _ in range(5):
        bx = hb.random_branch(conjugated, rng.random(2), 30, rng)
        seg = lv.trace_leaf(conjugated, bx.base, 0.1)
        by = hb.paired_branch(conjugated, bx, seg.points[-1])
        r = sm.delta_u(conjugated, bx, by)
        fits.append(r.fit)
        oracle_err = max(oracle_err, abs(r.value - s_u(bx.base) / s_u(by.base)))
        x = rng.random(2)
        y = lv.trace_leaf(conjugated, x, 0.05, "stable").points[-1]
        r = sm.delta_s(conjugated, x, y)
        fits.append(r.fit)
        oracle_err = max(oracle_err, abs(r.value - jac(y) * s_s(y) / (jac(x) * s_s(x))))
    theta = max(f.theta for f in fits)
    r2 = min(f.r2 for f in fits)
    measure = sm.invariant_density(conjugated)
    boxes = sm.random_boxes(200, rng)
    box = float(np.max(sm.invariance_defects(conjugated, measure, boxes)))
    ent = sm.entropy_report(conjugated)
    sep = abs(ent.h_separated - LAMBDA_U)
    el = time.perf_counter() - t0
    assert verdict(capsys, 7, "SRB machinery", {
        "Delta fits": (theta < 1 and r2 > 0.95, f"theta<={theta:.3f}, R2>={r2:.4f}, oracle {oracle_err:.1e}"),
        "box invariance": (box < 1e-4, f"{box:.2e}"),
        "h+ = lambda_u = log k - lambda_s": (ent.checks["entropy_balance"] and ent.checks["exponent_sum"]
                                             and abs(ent.h_plus - LAMBDA_U) < 1e-3,
                                             f"{ent.h_plus:.5f} vs {ent.h_minus:.5f}"),
        "separated set": (sep < 0.15, f"{ent.h_separated:.4f}"),
    }, el)


def test_criterion_8_specification(capsys, trig05):
    t0 = time.perf_counter()
    o = pdata.find_periodic(trig05, 5)[-1]
    exact = pdata.closing_lemma_shadow(trig05, np.vstack([o.points, o.points[:1]]))
    rng = np.random.default_rng(8)
    noisy = o.points + 1e-3 * rng.standard_normal((o.period, 2))
    closed = pdata.closing_lemma_shadow(trig05, np.vstack([noisy, noisy[:1]]))
    true_gap = float(np.max(tc.distance(closed.orbit.points, o.points)))
    table = pdata.periodic_table(trig05, 2)
    p = min(table, key=lambda z: z.lambda_u)
    q = max(table, key=lambda z: z.lambda_u)
    res = pdata.specification_concatenate(trig05, p, q, [200, 400], gap=20)
    gaps = [abs(b["birkhoff_lambda_u"] - b["target_lambda_u"]) for b in res.blocks]
    el = time.perf_counter() - t0
    assert verdict(capsys, 8, "closing lemma and specification", {
        "exact orbit": (exact.distance < 1e-12, f"{exact.distance:.1e}"),
        "noisy orbit closes": (closed.distance < 1e-2 and true_gap < 1e-10, f"{closed.distance:.2e}"),
        "block averages": (max(gaps) < 0.05, ", ".join(f"{g:.1e}" for g in gaps)),
    }, el)


def test_criterion_9_specialness(capsys, linear, conjugated, trig05):
    t0 = time.perf_counter()
    p = np.array([0.31, 0.62])
    s_lin = hb.specialness_spread(linear, p, depth=30)
    s_conj = hb.specialness_spread(conjugated, p, depth=30)
    y = np.random.default_rng(9).random((25, 2))
    Es_y = hb.stable_field(trig05, y)
    pre = trig05.preimages(y)
    worst = 0.0
    for c in range(trig05.degree):
        z = pre[:, c]
        pulled = tc.solve2(trig05.jacobian(z), Es_y)
        pulled /= np.linalg.norm(pulled, axis=-1, keepdims=True)
        Es_z = hb.stable_field(trig05, z)
        worst = max(worst, float(np.max(np.abs(pulled[:, 0] * Es_z[:, 1] - pulled[:, 1] * Es_z[:, 0]))))
    el = time.perf_counter() - t0
    assert verdict(capsys, 9, "specialness probe", {
        "linear spread": (s_lin < 1e-10, f"{s_lin:.1e}"),
        "conjugated spread": (s_conj < 1e-6, f"{s_conj:.1e}"),
        "E^s branch independence": (worst < 1e-10, f"{worst:.1e}"),
    }, el)
