"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from parabolic_mhd.algebra import DIM, E1, E2, E3, F, FD, ONE, VECTOR_SLOTS, Rotor, basis_index, mul
from parabolic_mhd.eisenstein import LatticeSpec, eisenstein_array, tail_bound
from parabolic_mhd.geometry import DomainSpec, Section, build_grid, lq_norm
from parabolic_mhd.kernels import KernelSpec, SpaceTimePoint, apply_dirac_fd, fundamental_E, fundamental_G, rotated_kernel
from parabolic_mhd.mhd import BoundaryData, MHDConfig, RunConfig, build_operators, solve
from parabolic_mhd.operators import (
    OperatorContext,
    bergman_build,
    bergman_P,
    bergman_Q,
    borel_pompeiu_residual,
    cauchy,
    interior_margin_mask,
    operator_norm_estimates,
    right_inverse_residual,
)

RATIO = 1.5


def margin(n):
    """Cells in a quarter-unit collar, so every grid is measured on the same region."""
    return n // 4


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_01_algebra_relations(report):
    rng = np.random.default_rng(1)
    with Timer() as tm:
        gens = [E1, E2, E3]
        rel = 0.0
        for i, a in enumerate(gens):
            for j, b in enumerate(gens):
                rel = max(rel, abs(a * b + b * a + (2.0 * ONE if i == j else 0.0)))
            rel = max(rel, abs(a * F + F * a), abs(a * FD + FD * a))
        rel = max(rel, abs(F * F), abs(FD * FD), abs(F * FD + FD * F - ONE))
        a, b, c = (rng.standard_normal((1000, DIM)) for _ in range(3))
        assoc = float(np.abs(mul(mul(a, b), c) - mul(a, mul(b, c))).max())
    ok = rel <= 1e-14 and assoc <= 1e-12 and tm.elapsed < 1.0
    assert report("criterion 1 algebra", ok, f"relations={rel:.1e} assoc={assoc:.1e} time={tm.elapsed:.2f}s")


def test_02_kernel_reduction(report):
    rng = np.random.default_rng(2)
    with Timer() as tm:
        x = rng.uniform(-2, 2, (1000, 3))
        t = rng.uniform(0.01, 2, 1000)
        err = float(np.abs(fundamental_E(x, 1.0, t=t) - fundamental_G(x, t=t)).max())
    ok = err <= 1e-14 and tm.elapsed < 1.0
    assert report("criterion 2 kernel reduction", ok, f"err={err:.1e} time={tm.elapsed:.2f}s")


def test_03_monogenicity(report):
    rng = np.random.default_rng(3)
    ratios = []
    with Timer() as tm:
        for i in range(10):
            k = (1.0, 2.0, 4.0)[i % 3]
            x = rng.uniform(-1, 1, 3)
            t = rng.uniform(0.3, 1.0)

            def f(y, s, k=k):
                return fundamental_E(SpaceTimePoint.of(y, s), k).coefficients

            r1 = np.linalg.norm(apply_dirac_fd(f, x, t, k, 1e-2))
            r2 = np.linalg.norm(apply_dirac_fd(f, x, t, k, 5e-3))
            ratios.append(r1 / r2)
    ok = all(3 <= r <= 5 for r in ratios) and tm.elapsed < 5.0
    assert report("criterion 3 monogenicity", ok, f"ratios in [{min(ratios):.3f}, {max(ratios):.3f}] time={tm.elapsed:.2f}s")


def test_04_rotation_invariance(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    with Timer() as tm:
        for _ in range(100):
            q = rng.standard_normal(4)
            a = Rotor.from_array(q / np.linalg.norm(q))
            p = SpaceTimePoint.of(rng.uniform(-1, 1, 3), rng.uniform(0.05, 1.0))
            k = rng.uniform(0.5, 4.0)
            worst = max(worst, abs(rotated_kernel(a, p, k) - fundamental_E(p, k)))
    ok = worst <= 1e-12 and tm.elapsed < 1.0
    assert report("criterion 4 rotation invariance", ok, f"err={worst:.1e} time={tm.elapsed:.2f}s")


def _cell_samples(rng, n, p):
    x = np.zeros((n, 3))
    x[:, :p] = rng.uniform(-0.5, 0.5, (n, p))
    x[:, p:] = rng.uniform(-0.5, 0.5, (n, 3 - p))
    return x


def test_05_tail_bound(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    with Timer() as tm:
        for p in (1, 2, 3):
            for l in range(p + 1):
                lat = LatticeSpec(p, l)
                for k in (1.0, 4.0):
                    for t in (0.1, 0.5):
                        x = _cell_samples(rng, 10, p)
                        r = float(np.linalg.norm(x, axis=1).max())
                        ts = np.full(10, t)
                        for M in (math.floor(r) + 1, math.floor(r) + 3):
                            diff = eisenstein_array(x, ts, k, lat, M + 10) - eisenstein_array(x, ts, k, lat, M)
                            measured = float(np.linalg.norm(diff, axis=1).max())
                            worst = max(worst, measured / tail_bound(M, r, t, k, p))
    ok = worst <= 1.0 and tm.elapsed < 60.0
    assert report("criterion 5 tail bound", ok, f"max measured/bound={worst:.2e} time={tm.elapsed:.2f}s")


def test_06_quasi_periodicity(report):
    rng = np.random.default_rng(6)
    worst = 0.0
    with Timer() as tm:
        for p in (1, 2, 3):
            for l in range(p + 1):
                lat = LatticeSpec(p, l)
                x = _cell_samples(rng, 20, p)
                t = rng.uniform(0.1, 0.5, 20)
                r = float(np.linalg.norm(x, axis=1).max())
                M = math.floor(r) + 3
                base = eisenstein_array(x, t, 1.0, lat, M)
                for d in range(p):
                    shifted = eisenstein_array(x + np.eye(3)[d], t, 1.0, lat, M)
                    sign = -1.0 if d < l else 1.0
                    err = np.linalg.norm(shifted - sign * base, axis=1)
                    bound = np.array([2 * tail_bound(M - 1, r + 1, float(s), 1.0, p) for s in t])
                    worst = max(worst, float((err / bound).max()))
    ok = worst <= 1.0 and tm.elapsed < 60.0
    assert report("criterion 6 quasi-periodicity", ok, f"max err/bound={worst:.2e} time={tm.elapsed:.2f}s")


def _bp_probe_flat(x, t):
    out = np.zeros(x.shape[:-1] + (DIM,))
    out[..., basis_index((1,))] = x[..., 0]
    out[..., 0] = np.sin(x[..., 1]) * np.exp(-t)
    out[..., basis_index((), "fd")] = x[..., 2] * t
    return out


def _ri_probe_flat(x, t):
    out = np.zeros(x.shape[:-1] + (DIM,))
    b = np.exp(-20 * np.sum((x - 0.5) ** 2, axis=-1) - 10 * (t - 0.4) ** 2)
    out[..., 0] = b
    out[..., basis_index((2,))] = b * x[..., 0]
    return out


def _torus_probes(l):
    def u(x, t):
        out = np.zeros(x.shape[:-1] + (DIM,))
        s = np.cos(np.pi * x[..., 0]) if l else np.cos(2 * np.pi * x[..., 0])
        out[..., basis_index((1,))] = s * np.exp(-t)
        out[..., 0] = np.sin(2 * np.pi * x[..., 1]) * t
        return out

    def g(x, t):
        out = np.zeros(x.shape[:-1] + (DIM,))
        s = np.sin(np.pi * x[..., 0]) if l else np.sin(2 * np.pi * x[..., 0])
        out[..., 0] = s * np.cos(2 * np.pi * x[..., 2]) * np.exp(-10 * (t - 0.4) ** 2)
        return out

    return u, g


def test_07_borel_pompeiu_and_right_inverse(report):
    rows = []
    with Timer() as tm:
        cases = [("cube", DomainSpec.unit_cube(), 2.0, "flat", _bp_probe_flat, _ri_probe_flat)]
        for l in (0, 1):
            u, g = _torus_probes(l)
            cases.append((f"torus l={l}", DomainSpec.torus(3, l), 1.0, "periodized", u, g))
        for name, dom, k, kind, ufun, gfun in cases:
            res = {"BP": [], "RI": []}
            tol = 0.0
            for n in (4, 8):
                grid = build_grid(dom, n)
                ctx = OperatorContext(grid, k, kind=kind)
                if kind == "periodized":
                    tol = ctx.plan.tol
                m = margin(n)
                res["BP"].append(borel_pompeiu_residual(Section.from_function(grid, ufun), ctx, margin=m))
                res["RI"].append(right_inverse_residual(Section.from_function(grid, gfun), ctx, margin=m))
            for which, (coarse, fine) in res.items():
                # the truncation tolerance widens the budget for the fine residual
                rows.append((f"{which} {name}", coarse, fine, coarse >= RATIO * max(fine - tol, 0.0)))
    ok = all(r[3] for r in rows) and tm.elapsed < 600
    detail = " ".join(f"[{r[0]} {r[1]:.2e}->{r[2]:.2e} ratio {r[1] / r[2]:.2f}]" for r in rows)
    assert report("criterion 7 Borel-Pompeiu/right inverse", ok, f"{detail} time={tm.elapsed:.0f}s")


def test_08_cauchy_reproduction(report):
    src = np.array([0.5, 0.5, 0.5])
    errs = []
    with Timer() as tm:
        for n in (4, 8):
            grid = build_grid(DomainSpec.unit_cube(), n)
            ctx = OperatorContext(grid, 2.0)
            u = Section.from_function(grid, lambda x, t: fundamental_E(x - src, 2.0, t=t + 0.25))
            r = cauchy(u.face_values, ctx) - u
            sel = interior_margin_mask(grid, margin(n))
            errs.append(float(np.linalg.norm(r.values[sel]) / np.linalg.norm(u.values[sel])))
    ratio = errs[0] / errs[1]
    ok = ratio >= RATIO and tm.elapsed < 300
    assert report("criterion 8 Cauchy reproduction", ok, f"err {errs[0]:.2e}->{errs[1]:.2e} ratio {ratio:.2f} time={tm.elapsed:.0f}s")


def test_09_bergman_projection(report):
    k, T, l = 2.0, 0.25, 1
    lat = LatticeSpec(3, l)
    idem, qs = [], []
    with Timer() as tm:
        for res in ((4, 4), (8, 16)):
            grid = build_grid(DomainSpec.torus(3, l, T=T), res)
            ctx = OperatorContext(grid, k, kind="periodized")
            fac = bergman_build(ctx)
            rng = np.random.default_rng(9)
            worst = 0.0
            for _ in range(10):
                s = Section(grid, rng.standard_normal((grid.n_cells, DIM)))
                P = bergman_P(s, fac)
                worst = max(worst, lq_norm(bergman_P(P, fac) - P) / lq_norm(s))
            idem.append(worst)
            u = Section.from_function(
                grid, lambda x, t: eisenstein_array(x - 0.5, t + 0.1, KernelSpec(k), lat, M=6)
            )
            qs.append(lq_norm(bergman_Q(u, fac)) / lq_norm(u))
    ok = max(idem) <= 1e-6 and qs[1] < qs[0] and tm.elapsed < 300
    detail = f"|P^2-P| {idem[0]:.1e}/{idem[1]:.1e} |Q probe| {qs[0]:.2e}->{qs[1]:.2e}"
    assert report("criterion 9 Bergman projection", ok, f"{detail} time={tm.elapsed:.0f}s")


@pytest.fixture(scope="module")
def mhd_setup():
    run = RunConfig(MHDConfig(max_outer=5, outer_tol=1e-30), n=8, nt=8, T=0.125)
    grid = run.grid()
    return run, grid, build_operators(grid, run.mhd)


def test_10_mhd_sanity(report, mhd_setup):
    run, grid, ops = mhd_setup
    with Timer() as tm:
        # (a) zero data
        zero = solve(replace(run.mhd, outer_tol=1e-10), run.boundary_data(grid), ops)
        zmax = max(np.abs(zero.u.values).max(), np.abs(zero.B.values).max(), np.abs(zero.p.values).max())
        ok_a = zero.iterations == 1 and zero.converged and zmax == 0.0

        # (b) constant magnetic field, velocity at rest
        b0 = np.array([0.3, 0.2, 0.1])
        drift = []
        solve(
            run.mhd,
            replace(run, B0=tuple(b0)).boundary_data(grid),
            ops,
            callback=lambda n, s: drift.append(
                max(np.abs(s.B.values[:, VECTOR_SLOTS] - b0).max(), np.abs(s.u.values).max())
            ),
        )
        ok_b = max(drift) <= 1e-12

        # (c) B == 0 against magnetics switched off
        def u0(x, t):
            return np.stack([0.1 * np.sin(2 * np.pi * x[..., 1]), 0.05 * np.cos(2 * np.pi * x[..., 2]), 0 * x[..., 0]], -1)

        bd = BoundaryData.from_functions(grid, u0=u0)
        cfg = replace(run.mhd, max_outer=3)
        on = solve(cfg, bd, ops)
        off = solve(replace(cfg, magnetics=False), bd, ops)
        ok_c = (
            np.array_equal(on.u.values, off.u.values)
            and np.array_equal(on.p.values, off.p.values)
            and np.array_equal(on.B.values, off.B.values)
        )

        # (d) small perturbation of a uniform field
        st = solve(run.mhd, replace(run, B0=(1.0, 0.0, 0.0), perturbation=0.1).boundary_data(grid), ops)
        res = [h[1] + h[2] for h in st.history]
        decreasing = sum(1 for a, b in zip(res, res[1:]) if b < a)
        strictly = all(b < a for a, b in zip(res, res[1:])) and decreasing >= 3
        du0, dB0 = st.history[0][3], st.history[0][4]
        ok_div = all(h[3] <= 10 * du0 and h[4] <= 10 * dB0 for h in st.history)
        ok_d = strictly and ok_div
    ok = ok_a and ok_b and ok_c and ok_d and tm.elapsed < 600
    detail = (
        f"(a) {ok_a} iters={zero.iterations} (b) {ok_b} drift={max(drift):.1e} (c) {ok_c} "
        f"(d) {ok_d} residuals={['%.1e' % r for r in res]} div u {du0:.1e}->{st.history[-1][3]:.1e} "
        f"div B {dB0:.1e}->{st.history[-1][4]:.1e} time={tm.elapsed:.0f}s"
    )
    assert report("criterion 10 MHD sanity", ok, detail)


def test_11_boundedness(report):
    with Timer() as tm:
        est = []
        for n in (8, 16):
            grid = build_grid(DomainSpec.torus(3, 0), n)
            ctx = OperatorContext(grid, 1.0, kind="periodized")
            est.append(operator_norm_estimates(ctx, qs=(1.0, 2.0), derivatives=(None, 0), n_probes=40, seed=11))
    var = {key: abs(est[1][key] - est[0][key]) / est[1][key] for key in est[0]}
    ok = max(var.values()) < 0.25 and tm.elapsed < 300
    detail = " ".join(
        f"[q={q:g} {'T' if d is None else 'dT'} {est[0][q, d]:.3f}->{est[1][q, d]:.3f}]" for q, d in sorted(var, key=str)
    )
    assert report("criterion 11 boundedness", ok, f"{detail} max variation {max(var.values()):.1%} time={tm.elapsed:.0f}s")
