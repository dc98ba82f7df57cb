"""Command-line front end.

Subcommands::

    kernel eval      --k K --point x1,x2,x3,t
    eisenstein eval  --k K --p P --l L --M M --point x1,x2,x3,t
    eisenstein plan  --tol TOL --r R --t-max T [--k K --p P --l L]
    check            [--grids 4 8] [--out DIR]
    solve            --config FILE [--out DIR]

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy

from . import __version__

log_format = "%(levelname)s %(name)s: %(message)s"


@dataclass
class RunManifest:
    command: str
    config: dict
    versions: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    return {"parabolic_mhd": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fmt(v) -> str:
    return repr(float(v))


class UsageError(Exception):
    pass


def _point(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--point must be four comma-separated numbers, got {text!r}")
    if len(vals) != 4:
        raise UsageError(f"--point must be x1,x2,x3,t, got {text!r}")
    return vals[:3], vals[3]


def _positive(name, v):
    if not (math.isfinite(v) and v > 0):
        raise UsageError(f"{name} must be positive, got {v}")


def _lattice(p, l):
    from .eisenstein import LatticeSpec

    if not (1 <= p <= 3 and 0 <= l <= p):
        raise UsageError(f"need 0 <= l <= p <= 3 and p >= 1, got p={p}, l={l}")
    return LatticeSpec(p, l)


def _finish(manifest: RunManifest, out: Path | None, ok: bool) -> int:
    manifest.finished = _now()
    manifest.summary.setdefault("passed", ok)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        manifest.write(out / "manifest.json")
    return 0 if ok else 1


# -- kernel / eisenstein --------------------------------------------------------------------


def cmd_kernel(args) -> int:
    from .kernels import SpaceTimePoint, fundamental_E

    _positive("--k", args.k)
    x, t = _point(args.point)
    mv = fundamental_E(SpaceTimePoint.of(x, t), args.k)
    print(",".join(_fmt(c) for c in mv.coefficients))
    m = RunManifest("kernel eval", {"k": args.k, "point": args.point}, _versions(), _now())
    return _finish(m, args.out, True)


def cmd_eisenstein(args) -> int:
    from .eisenstein import choose_truncation, eisenstein
    from .kernels import SpaceTimePoint

    _positive("--k", args.k)
    lat = _lattice(args.p, args.l)
    m = RunManifest(f"eisenstein {args.action}", {k: v for k, v in vars(args).items() if k not in ("func", "out")},
                    _versions(), _now())
    if args.action == "eval":
        if args.M < 0:
            raise UsageError("--M must be nonnegative")
        x, t = _point(args.point)
        mv = eisenstein(SpaceTimePoint.of(x, t), args.k, lat, args.M)
        print(",".join(_fmt(c) for c in mv.coefficients))
    else:
        _positive("--tol", args.tol)
        _positive("--t-max", args.t_max)
        if args.r < 0:
            raise UsageError("--r must be nonnegative")
        plan = choose_truncation(args.tol, args.r, args.t_max, args.k, lat)
        print(f"M,bound\n{plan.M},{_fmt(plan.bound)}")
        m.summary = {"M": plan.M, "bound": plan.bound}
    return _finish(m, args.out, True)


# -- check suite ----------------------------------------------------------------------------

RATIO_MIN = 1.5


def _algebra_checks() -> list:
    """Grid-independent identities: (name, residual, tolerance)."""
    from .algebra import DIM, E1, E2, E3, F, FD, ONE, Rotor, mul
    from .eisenstein import LatticeSpec, eisenstein_array, tail_bound
    from .kernels import fundamental_E, fundamental_G, rotated_kernel, SpaceTimePoint

    rng = np.random.default_rng(0)
    gens = [E1, E2, E3]
    rel = 0.0
    for i, a in enumerate(gens):
        for j, b in enumerate(gens):
            rel = max(rel, abs(a * b + b * a + (2.0 if i == j else 0.0) * ONE))
        rel = max(rel, abs(a * F + F * a), abs(a * FD + FD * a))
    rel = max(rel, abs(F * F), abs(FD * FD), abs(F * FD + FD * F - ONE))
    a, b, c = (rng.standard_normal((200, DIM)) for _ in range(3))
    assoc = float(np.abs(mul(mul(a, b), c) - mul(a, mul(b, c))).max())
    x = rng.uniform(-1, 1, (200, 3))
    t = rng.uniform(0.05, 1, 200)
    red = float(np.abs(fundamental_E(x, 1.0, t=t) - fundamental_G(x, t=t)).max())
    rot = 0.0
    for i in range(20):
        q = rng.standard_normal(4)
        r = Rotor.from_array(q / np.linalg.norm(q))
        p = SpaceTimePoint.of(x[i], t[i])
        rot = max(rot, abs(rotated_kernel(r, p, 2.0) - fundamental_E(p, 2.0)))
    tail = 0.0
    lat = LatticeSpec(3, 1)
    xs = rng.uniform(-0.5, 0.5, (10, 3))
    r_ = float(np.linalg.norm(xs, axis=1).max())
    M = math.floor(r_) + 1
    for tt in (0.1, 0.5):
        diff = np.abs(eisenstein_array(xs, np.full(10, tt), 1.0, lat, M + 10) - eisenstein_array(xs, np.full(10, tt), 1.0, lat, M))
        tail = max(tail, float(np.linalg.norm(diff, axis=1).max()) / tail_bound(M, r_, tt, 1.0, 3))
    quasi = 0.0
    for p in (1, 2, 3):
        for l in range(p + 1):
            lat = LatticeSpec(p, l)
            base = eisenstein_array(xs, np.full(10, 0.3), 1.0, lat, M + 2)
            for d in range(p):
                sh = eisenstein_array(xs + np.eye(3)[d], np.full(10, 0.3), 1.0, lat, M + 2)
                err = float(np.linalg.norm(sh - (-1 if d < l else 1) * base, axis=1).max())
                quasi = max(quasi, err / (2 * tail_bound(M + 1, r_ + 1, 0.3, 1.0, p)))
    return [
        ("generator_relations", rel, 1e-14),
        ("associativity", assoc, 1e-12),
        ("kernel_reduction", red, 1e-14),
        ("rotation_invariance", rot, 1e-12),
        ("tail_bound_ratio", tail, 1.0),
        ("quasi_periodicity_ratio", quasi, 1.0),
    ]


def _grid_probes():
    """Residual functions ``name -> (grid_size -> residual)`` for the refinement suite.

    Residuals are measured away from a quarter-unit collar (``n // 4`` cells),
    so every resolution is compared on the same region.
    """
    from .algebra import basis_index
    from .eisenstein import LatticeSpec, eisenstein_array
    from .geometry import DomainSpec, Section, build_grid, lq_norm
    from .kernels import fundamental_E
    from .operators import (
        OperatorContext,
        bergman_build,
        bergman_P,
        bergman_Q,
        borel_pompeiu_residual,
        cauchy,
        interior_margin_mask,
        right_inverse_residual,
    )

    e1 = basis_index((1,))

    def bp_flat(n):
        g = build_grid(DomainSpec.unit_cube(), n)
        ctx = OperatorContext(g, 2.0)
        u = Section.from_function(g, lambda x, t: np.eye(32)[e1] * x[..., :1])
        return borel_pompeiu_residual(u, ctx, margin=n // 4)

    def ri_flat(n):
        g = build_grid(DomainSpec.unit_cube(), n)
        ctx = OperatorContext(g, 2.0)

        def bump(x, t):
            out = np.zeros(x.shape[:-1] + (32,))
            b = np.exp(-20 * np.sum((x - 0.5) ** 2, axis=-1) - 10 * (t - 0.4) ** 2)
            out[..., 0] = b
            out[..., basis_index((2,))] = b * x[..., 0]
            return out

        return right_inverse_residual(Section.from_function(g, bump), ctx, margin=n // 4)

    def cauchy_flat(n):
        g = build_grid(DomainSpec.unit_cube(), n)
        ctx = OperatorContext(g, 2.0)
        src = np.array([0.5, 0.5, 0.5])
        u = Section.from_function(g, lambda x, t: fundamental_E(x - src, 2.0, t=t + 0.25))
        r = cauchy(u.face_values, ctx) - u
        sel = interior_margin_mask(g, n // 4)
        return float(np.linalg.norm(r.values[sel]) / np.linalg.norm(u.values[sel]))

    @lru_cache(maxsize=None)
    def bergman(n):
        # parabolic scaling tau ~ h^2 keeps the boundary system well conditioned
        lat = LatticeSpec(3, 1)
        g = build_grid(DomainSpec.torus(3, 1, T=0.25), (n, max(2, math.ceil(n * n / 4))))
        ctx = OperatorContext(g, 2.0, kind="periodized")
        fac = bergman_build(ctx)
        rng = np.random.default_rng(0)
        idem = 0.0
        for _ in range(10):
            s = Section(g, rng.standard_normal((g.n_cells, 32)))
            P = bergman_P(s, fac)
            idem = max(idem, lq_norm(bergman_P(P, fac) - P) / lq_norm(s))
        u = Section.from_function(g, lambda x, t: eisenstein_array(x - 0.5, t + 0.1, 2.0, lat, 6))
        return idem, lq_norm(bergman_Q(u, fac)) / lq_norm(u)

    def refines(res, ratio):
        return ratio is None or ratio >= RATIO_MIN

    return {
        "borel_pompeiu_cube": (bp_flat, refines),
        "right_inverse_cube": (ri_flat, refines),
        "cauchy_reproduction_cube": (cauchy_flat, refines),
        "bergman_idempotence_torus": (lambda n: bergman(n)[0], lambda res, ratio: res <= 1e-6),
        "bergman_q_probe_torus": (lambda n: bergman(n)[1], lambda res, ratio: ratio is None or ratio > 1.0),
    }


def run_checks(grids) -> tuple[list, bool]:
    rows = []
    ok = True
    for name, res, tol in _algebra_checks():
        passed = bool(res <= tol)
        ok &= passed
        rows.append([name, "-", _fmt(res), "", "pass" if passed else "fail"])
    for name, (fn, rule) in _grid_probes().items():
        prev = None
        for n in grids:
            res = fn(n)
            ratio = prev / res if prev is not None else None
            passed = bool(np.isfinite(res)) and bool(rule(res, ratio))
            ok &= passed
            rows.append([name, str(n), _fmt(res), "" if ratio is None else _fmt(ratio), "pass" if passed else "fail"])
            prev = res
    return rows, ok


def cmd_check(args) -> int:
    grids = args.grids or [4, 8]
    if any(n < 3 for n in grids):
        raise UsageError("grid sizes must be >= 3")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    m = RunManifest("check", {"grids": grids}, _versions(), _now())
    rows, ok = run_checks(grids)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["test", "grid", "residual", "ratio", "result"])
    w.writerows(rows)
    (out / "report.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    m.outputs = ["report.csv"]
    m.summary = {"passed": ok, "failed": [r[0] + "@" + r[1] for r in rows if r[4] == "fail"]}
    return _finish(m, out, ok)


# -- solve ----------------------------------------------------------------------------------


def cmd_solve(args) -> int:
    from .mhd import load_config, solve, write_history_csv, write_state_csv

    try:
        run = load_config(args.config)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    m = RunManifest("solve", run.snapshot(), _versions(), _now())
    grid = run.grid()
    state = solve(run.mhd, run.boundary_data(grid))
    write_state_csv(state, out / "state.csv")
    write_history_csv(state, out / "history.csv")
    m.outputs = ["state.csv", "history.csv"]
    m.summary = {"passed": state.converged, "iterations": state.iterations, "converged": state.converged}
    print(f"iterations,{state.iterations}\nconverged,{state.converged}")
    return _finish(m, out, state.converged)


# -- entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parabolic-mhd", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    kp = sub.add_parser("kernel", help="evaluate the fundamental solution")
    kp.add_argument("action", choices=["eval"])
    kp.add_argument("--k", type=float, required=True)
    kp.add_argument("--point", required=True)
    kp.add_argument("--out", type=Path)
    kp.set_defaults(func=cmd_kernel)

    ep = sub.add_parser("eisenstein", help="periodised kernel and truncation plans")
    ep.add_argument("action", choices=["eval", "plan"])
    ep.add_argument("--k", type=float, default=1.0)
    ep.add_argument("--p", type=int, default=3)
    ep.add_argument("--l", type=int, default=0)
    ep.add_argument("--M", type=int, default=4)
    ep.add_argument("--point", default="0,0,0,1")
    ep.add_argument("--tol", type=float, default=1e-8)
    ep.add_argument("--r", type=float, default=0.0)
    ep.add_argument("--t-max", dest="t_max", type=float, default=1.0)
    ep.add_argument("--out", type=Path)
    ep.set_defaults(func=cmd_eisenstein)

    cp = sub.add_parser("check", help="run the identity suite and write report.csv")
    cp.add_argument("--grids", type=int, nargs="*", default=None)
    cp.add_argument("--out", type=Path, default=Path("."))
    cp.set_defaults(func=cmd_check)

    sp = sub.add_parser("solve", help="run the MHD fixed-point solver")
    sp.add_argument("--config", type=Path, required=True)
    sp.add_argument("--out", type=Path, default=Path("."))
    sp.set_defaults(func=cmd_solve)
    return ap


def main(argv=None) -> int:
    import logging

    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format=log_format)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"{ap.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
