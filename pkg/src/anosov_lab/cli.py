"""Command-line driver: ``anosov-lab <subcommand> [options]``.

Every subcommand writes its artifacts into ``--out`` and a JSON report that
echoes the resolved configuration (seed included) together with a ``checks``
table. The exit status is 0 iff every check passed; module errors exit with a
code-specific status and a one-line JSON error on stderr. See
``README.md`` for the file schema.

Options may also come from an INI file (``--config``): a ``[common]`` section
for the global flags and one section per subcommand, with keys spelled like
the long options (``max_period = 5``). Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import re
import sys
from importlib import resources
from pathlib import Path

BUNDLED = {
    "linear": "linear.json",
    "trig-0": "trig-0.json",
    "trig-0.02": "trig-0.02.json",
    "trig-0.05": "trig-0.05.json",
    "conjugated": "conjugated.json",
}

EXIT_OK = 0
EXIT_CHECKS = 1
EXIT_USAGE = 2
EXIT_CODES = {
    "certification_failed": 10,
    "obstruction_nonzero": 11,
    "count_mismatch": 12,
    "no_convergence": 13,
    "residual_too_large": 14,
    "anchor_mismatch": 15,
    "leaf_trace_failure": 16,
    "invalid_model": 17,
}
EXIT_MODULE = 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")
_NOT_ECHOED = {"out", "config", "threads", "command", "func"}


class ConfigError(Exception):
    code = "config_error"


# ---------------------------------------------------------------------------
# models and output helpers


def resolve_model(name, validate=True):
    """Model from a bundled name or a JSON path."""
    from . import torus_core as tc

    if name in BUNDLED:
        text = resources.files("anosov_lab").joinpath("models", BUNDLED[name]).read_text()
        return tc.from_dict(json.loads(text), validate)
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"model {name!r} is neither a bundled name ({', '.join(BUNDLED)}) nor a file")
    return tc.load_model(path, validate)


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(float(v)) if hasattr(v, "dtype") else _fmt(v) for v in r])


def _echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def _report(args, name, body, checks):
    body = dict(body)
    body["config"] = _echo(args)
    body["checks"] = checks
    body["passed"] = all(checks.values())
    write_json(Path(args.out) / f"{name}.json", body)
    return body["passed"]


def _phi_for(f, N, F, max_period):
    """Unstable transfer function, or ``None`` for linear maps (``phi = 0``)."""
    from . import livsic_conformal as lc

    if f.is_linear:
        return None
    psi = lc.observable_log_unstable(f, N, max_period=max_period)
    return lc.solve_cohomology(f, psi, F)


# ---------------------------------------------------------------------------
# subcommands


def cmd_certify(args, f):
    from . import hyperbolic_bundles as hb
    from .errors import CertificationFailed

    params = hb.ConeParams(args.unstable_angle, args.stable_angle, args.expansion)
    rep = hb.certify_cones(f, params, n=args.grid, raise_on_fail=False)
    ok = _report(args, "certificate", rep, {"cones": rep["passed"]})
    if not ok:
        raise CertificationFailed(f"cone certificate failed ({rep['failed_check']} at cell {rep['cell']})",
                                  rep.get("cell"), rep)
    return ok


def cmd_periodic(args, f):
    from . import periodic_data as pdata

    orbits = pdata.periodic_table(f, args.max_period)
    rows = []
    for i, o in enumerate(orbits):
        for j, p in enumerate(o.points):
            rows.append([o.period, i, j, p[0], p[1], o.lambda_u, o.lambda_s, o.log_jacobian, o.residual])
    write_csv(Path(args.out) / "periodic.csv",
              ["period", "orbit", "index", "x", "y", "lambda_u", "lambda_s", "log_jacobian", "residual"], rows)
    counts = {}
    for n in range(1, args.max_period + 1):
        found = sum(o.period for o in orbits if n % o.period == 0)
        counts[str(n)] = {"found": found, "expected": pdata.linear_periodic_count(f.A, n)}
    defect = pdata.periodic_data_defect(f, orbits=orbits)
    body = {
        "counts": counts,
        "orbits": len(orbits),
        "periodic_data_defect": defect,
        "linear_lambda_u": f.split.lambda_u,
        "linear_lambda_s": f.split.lambda_s,
        "max_residual": max(o.residual for o in orbits),
    }
    checks = {"counts": all(c["found"] == c["expected"] for c in counts.values())}
    if args.expect_rigid:
        checks["periodic_data"] = defect < args.defect_tol
    return _report(args, "periodic", body, checks)


def cmd_livsic(args, f):
    import numpy as np

    from . import livsic_conformal as lc

    if args.observable == "unstable":
        obs = lc.observable_log_unstable(f, args.N, max_period=args.max_period, check=args.check, report=True)
        psi, extra = obs.field, {"lambda_u": obs.lambda_u, "max_obstruction": obs.max_obstruction}
    else:
        psi, extra = lc.observable_log_jacobian(f, args.N, args.max_period, args.check), {}
    sol = lc.solve_cohomology(f, psi, args.F, details=True)
    out = Path(args.out)
    psi.save(out / "psi.grid")
    sol.phi.save(out / "phi.grid")
    sol.residual.save(out / "residual.grid")
    rng = np.random.default_rng(args.seed)
    pts = rng.random((200, 2))
    cdef = lc.cocycle_defect(f, psi, sol.phi, pts, 5)
    body = dict(extra, observable=args.observable, sup_residual=sol.sup_residual, iterations=sol.iterations,
                phi_sup=sol.phi.sup_norm(), cocycle_defect_n5=float(np.max(np.abs(cdef))),
                grid=args.N, cutoff=args.F)
    return _report(args, "livsic", body, {"residual": sol.sup_residual < args.residual_tol})


def cmd_conformal(args, f):
    import numpy as np

    from . import livsic_conformal as lc
    from .fields import GridField

    if args.phi:
        phi = GridField.load(args.phi)
    else:
        phi = _phi_for(f, args.N, args.F, args.max_period)
    rng = np.random.default_rng(args.seed)
    a, b = lc.random_unstable_pairs(f, args.pairs, rng)
    d0 = lc.conformal_distances(f, phi, a, b)
    d1 = lc.conformal_distances(f, phi, f.lift_apply(a), f.lift_apply(b))
    ratios = d1 / d0
    target = math.exp(f.split.lambda_u)
    rel = np.abs(ratios / target - 1.0)
    write_csv(Path(args.out) / "conformal.csv",
              ["ax", "ay", "bx", "by", "d", "d_image", "ratio", "rel_error"],
              [[*a[i], *b[i], d0[i], d1[i], ratios[i], rel[i]] for i in range(len(a))])
    body = {"pairs": args.pairs, "target": target, "max_rel_error": float(rel.max()),
            "spread": float((ratios.max() - ratios.min()) / ratios.mean())}
    return _report(args, "conformal", body, {"scaling": float(rel.max()) < args.tol})


def cmd_srb(args, f):
    import numpy as np

    from . import srb_measures as sm

    out = Path(args.out)
    m = sm.invariant_density(f, args.N, args.F, args.max_period)
    m.density_field().save(out / "density.grid")
    rng = np.random.default_rng(args.seed)
    boxes = sm.random_boxes(args.boxes, rng)
    mass = m.box_mass(boxes)
    defects = sm.invariance_defects(f, m, boxes)
    write_csv(out / "boxes.csv", ["x0", "y0", "width", "height", "mass", "defect"],
              [[*boxes[i], mass[i], defects[i]] for i in range(len(boxes))])
    ent = sm.entropy_report(f, args.orbits, args.length, args.burn, args.seed, separated=not args.no_separated)
    write_json(out / "entropy.json", dict(ent.to_dict(), config=_echo(args)))
    body = {
        "cohomology_residual": m.residual,
        "normalizer": m.normalizer,
        "max_invariance_defect": float(defects.max()),
        "entropy": ent.to_dict(),
    }
    checks = {"invariance": float(defects.max()) < args.invariance_tol}
    checks.update({f"entropy_{k}": v for k, v in ent.checks.items()})
    return _report(args, "srb", body, checks)


def cmd_conjugacy(args, f):
    import numpy as np

    from . import conjugacy as cj
    from . import torus_core as tc

    out = Path(args.out)
    f, power = cj.orientation_normalized(f)
    h = cj.base_conjugacy(f, N=args.N, strict=not args.no_strict)
    h.save(out / "h")
    body = {
        "power": power,
        "grid": args.N,
        "residual": h.residual,
        "sweeps": h.sweeps,
        "sup_displacement": h.sup_displacement(),
        "bounded": h.bounded,
    }
    checks = {"residual": h.residual < args.residual_tol, "bounded": h.bounded}
    known = f.base if isinstance(f, tc.PowerEndomorphism) else f
    truth = getattr(known, "warp_apply", None)
    if truth is not None:
        X = tc.grid_points(args.N)
        err = float(np.max(np.linalg.norm(X + h.U - truth(X), axis=-1)))
        body["recovered_h_error"] = err
        checks["recovered_h"] = err < args.truth_tol
    if h.bounded:
        body["leaf_mapping_defect"] = cj.leaf_mapping_defect(f, h)
        checks["leaf_mapping"] = body["leaf_mapping_defect"] < 1e-5
        phi = _phi_for(f, args.phi_N, args.phi_F, args.max_period)
        agree = cj.method_agreement(f, h, phi, truth=truth)
        body["agreement"] = agree.to_dict()
        checks["agreement"] = agree.worst < args.agreement_tol
    rng = np.random.default_rng(args.seed)
    regs = []
    for p in rng.random((args.regularity_points, 2)):
        r = cj.regularity_estimate(h, p, f.split.e_u).to_dict()
        r["base"] = p.tolist()
        if truth is not None:
            r["reference_derivative"] = float(np.linalg.norm(known.warp_jacobian(p) @ f.split.e_u))
        regs.append(r)
    write_json(out / "regularity.json", {"estimates": regs, "config": _echo(args)})
    return _report(args, "conjugacy", body, checks)


def cmd_specification(args, f):
    from . import periodic_data as pdata

    orbits = pdata.periodic_table(f, args.max_period)
    p = min(orbits, key=lambda o: (o.lambda_u, o.period))
    q = max(orbits, key=lambda o: (o.lambda_u, -o.period))
    res = pdata.specification_concatenate(f, p, q, args.blocks, args.gap, args.epsilon)
    write_csv(Path(args.out) / "blocks.csv",
              ["index", "orbit", "start", "length", "target_lambda_u", "birkhoff_lambda_u", "tracking_distance"],
              [[b["index"], b["orbit"], b["start"], b["length"], b["target_lambda_u"], b["birkhoff_lambda_u"],
                b["tracking_distance"]] for b in res.blocks])
    body = dict(res.to_dict(), p_period=p.period, q_period=q.period,
                p_lambda_u=p.lambda_u, q_lambda_u=q.lambda_u)
    checks = {
        "tracked": all(b["tracked"] for b in res.blocks),
        "block_averages": all(abs(b["birkhoff_lambda_u"] - b["target_lambda_u"]) < args.tol for b in res.blocks),
    }
    return _report(args, "specification", body, checks)


def _parse_matrix(text):
    text = text.strip()
    if text.startswith("["):
        rows = json.loads(text)
    else:
        rows = [[int(x) for x in r.replace(",", " ").split()] for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ConfigError(f"matrix {text!r} is not square")
    return rows


def cmd_spectrum(args, f):
    from . import srb_measures as sm

    rep = sm.linear_spectrum(_parse_matrix(args.matrix))
    return _report(args, "spectrum", rep, {"square_integer": True})


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, needs_model=True):
    p.add_argument("--model", default="linear" if needs_model else None,
                   help="bundled model name or JSON file (default: linear)")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS/OpenMP worker threads")
    p.add_argument("--config", help="INI file with [common] and per-subcommand sections")


def build_parser():
    top = argparse.ArgumentParser(prog="anosov-lab", description=__doc__.split("\n")[0])
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="cone-field certificate")
    _common(p)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--unstable-angle", type=float, default=0.3)
    p.add_argument("--stable-angle", type=float, default=0.3)
    p.add_argument("--expansion", type=float, default=1.2)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("periodic", help="periodic orbit table and periodic-data defect")
    _common(p)
    p.add_argument("--max-period", type=int, default=5)
    p.add_argument("--expect-rigid", action="store_true", help="assert periodic data equal to the linear part")
    p.add_argument("--defect-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_periodic)

    p = sub.add_parser("livsic", help="solve the cohomological equation for an observable")
    _common(p)
    p.add_argument("--observable", choices=["unstable", "jacobian"], default="unstable")
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--F", type=int, default=32)
    p.add_argument("--max-period", type=int, default=4)
    p.add_argument("--no-check", dest="check", action="store_false", help="skip the periodic obstruction gate")
    p.add_argument("--residual-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_livsic)

    p = sub.add_parser("conformal", help="scaling of the conformal unstable metric")
    _common(p)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--phi", help="GridField file with the transfer function (computed if omitted)")
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--F", type=int, default=32)
    p.add_argument("--max-period", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_conformal)

    p = sub.add_parser("srb", help="invariant density, box invariance and entropy report")
    _common(p)
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--F", type=int, default=32)
    p.add_argument("--max-period", type=int, default=4)
    p.add_argument("--boxes", type=int, default=200)
    p.add_argument("--orbits", type=int, default=8)
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--burn", type=int, default=100)
    p.add_argument("--no-separated", action="store_true", help="skip the separated-set entropy estimate")
    p.add_argument("--invariance-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_srb)

    p = sub.add_parser("conjugacy", help="conjugacy to the linear part, method agreement, regularity")
    _common(p)
    p.add_argument("--N", type=int, default=512)
    p.add_argument("--phi-N", type=int, default=256)
    p.add_argument("--phi-F", type=int, default=32)
    p.add_argument("--max-period", type=int, default=4)
    p.add_argument("--regularity-points", type=int, default=4)
    p.add_argument("--no-strict", action="store_true", help="keep an unbounded grid solution instead of failing")
    p.add_argument("--residual-tol", type=float, default=1e-8)
    p.add_argument("--agreement-tol", type=float, default=1e-4)
    p.add_argument("--truth-tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_conjugacy)

    p = sub.add_parser("specification", help="concatenate orbit blocks into one periodic orbit")
    _common(p)
    p.add_argument("--max-period", type=int, default=2, help="periods searched for the two block orbits")
    p.add_argument("--blocks", type=int, nargs="+", default=[200, 400])
    p.add_argument("--gap", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--tol", type=float, default=0.05)
    p.set_defaults(func=cmd_specification)

    p = sub.add_parser("spectrum", help="eigenvalue splitting of an integer matrix (any dimension)")
    _common(p, needs_model=False)
    p.add_argument("--matrix", required=True, help="rows separated by ';' or a JSON list of lists")
    p.set_defaults(func=cmd_spectrum)
    return top


def _subparser(top, name):
    for act in top._subparsers._group_actions:
        if name in act.choices:
            return act.choices[name]
    raise KeyError(name)


def _line_of(text, section, key):
    cur = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return 0


def load_config(path, sub, command):
    """Defaults for ``sub`` from the INI file; errors carry line numbers."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep case: --N and --F are distinct from lowercase names
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    folded = {d.lower(): d for d in actions}
    values = {}
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            dest = dest if dest in actions else folded.get(dest.lower(), dest)
            line = _line_of(text, section, key)
            act = actions.get(dest)
            if act is None or dest == "config":
                raise ConfigError(f"{path}, line {line}: unknown option {key!r} for {command}")
            try:
                if act.nargs in ("+", "*"):
                    vals = raw.replace(",", " ").split()
                    values[dest] = [act.type(v) if act.type else v for v in vals]
                elif act.const is not None and act.nargs == 0:
                    flag = cp.getboolean(section, key)
                    values[dest] = act.const if flag else act.default
                else:
                    values[dest] = act.type(raw) if act.type else raw
                    if act.choices and values[dest] not in act.choices:
                        raise ValueError(f"expected one of {list(act.choices)}")
            except ValueError as exc:
                raise ConfigError(f"{path}, line {line}: bad value {raw!r} for {key!r}: {exc}") from exc
            if dest.endswith("tol") and values[dest] <= 0:
                raise ConfigError(f"{path}, line {line}: tolerance {key!r} must be positive")
    return values


def _fail(code, message, status, out=None):
    payload = {"error": code, "message": message}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            write_json(Path(out) / "error.json", payload)
        except OSError:
            pass
    return status


def main(argv=None):
    top = build_parser()
    args = top.parse_args(argv)
    if args.config:
        sub = _subparser(top, args.command)
        try:
            sub.set_defaults(**load_config(args.config, sub, args.command))
        except ConfigError as exc:
            return _fail(exc.code, str(exc), EXIT_USAGE)
        args = top.parse_args(argv)
    if args.threads < 1:
        return _fail("config_error", "--threads must be at least 1", EXIT_USAGE)
    for var in _THREAD_VARS:
        os.environ[var] = str(args.threads)
    Path(args.out).mkdir(parents=True, exist_ok=True)

    from .errors import AnosovLabError

    try:
        f = resolve_model(args.model) if args.model is not None else None
        ok = args.func(args, f)
    except ConfigError as exc:
        return _fail(exc.code, str(exc), EXIT_USAGE, args.out)
    except OSError as exc:
        return _fail("io_error", str(exc), EXIT_USAGE, args.out)
    except AnosovLabError as exc:
        return _fail(exc.code, str(exc), EXIT_CODES.get(exc.code, EXIT_MODULE), args.out)
    return EXIT_OK if ok else EXIT_CHECKS


if __name__ == "__main__":
    sys.exit(main())
