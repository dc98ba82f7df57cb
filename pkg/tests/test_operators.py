import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_mhd.algebra import DIM, basis_index
from parabolic_mhd.geometry import DomainSpec, Section, build_grid, lq_norm
from parabolic_mhd.operators import (
    OperatorContext,
    apply_dirac,
    bergman_build,
    bergman_P,
    bergman_Q,
    cauchy,
    curl,
    divergence,
    gradient,
    interior_margin_mask,
    smooth_probe,
    spectral_derivative,
    teodorescu,
    trace,
)


@pytest.fixture(scope="module")
def cube():
    g = build_grid(DomainSpec.unit_cube(), 4)
    return g, OperatorContext(g, 2.0)


@pytest.fixture(scope="module")
def torus_bergman():
    g = build_grid(DomainSpec.torus(3, 1, T=0.25), (4, 4))
    ctx = OperatorContext(g, 2.0, kind="periodized")
    return g, ctx, bergman_build(ctx)


def _random(g, seed):
    return Section(g, np.random.default_rng(seed).standard_normal((g.n_cells, DIM)))


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 100))
def test_teodorescu_is_linear(cube, a, seed):
    g, ctx = cube
    u, v = _random(g, seed), _random(g, seed + 1)
    lhs = teodorescu(Section(g, a * u.values + v.values), ctx).values
    rhs = a * teodorescu(u, ctx).values + teodorescu(v, ctx).values
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_teodorescu_is_causal(cube):
    g, ctx = cube
    late = np.zeros(g.shape + (DIM,))
    late[:, :, :, 2:] = 1.0
    out = teodorescu(Section.from_box(g, late), ctx).box()
    assert np.abs(out[:, :, :, :2]).max() < 1e-14 * np.abs(out).max()


def test_target_rows(cube):
    g, ctx = cube
    u = _random(g, 3)
    rows = np.array([0, 5, 17])
    assert np.allclose(teodorescu(u, ctx, target=rows), teodorescu(u, ctx).values[rows])


def test_cauchy_shape_checks(cube):
    g, ctx = cube
    with pytest.raises(ValueError):
        cauchy(np.zeros((3, DIM)), ctx)
    with pytest.raises(ValueError):
        cauchy(Section.zeros(g), ctx)
    assert trace(_random(g, 0)).shape == (g.n_faces, DIM)


def test_exclude_policy_and_kinds_validated():
    g = build_grid(DomainSpec.unit_cube(), 3)
    with pytest.raises(ValueError):
        OperatorContext(g, 1.0, policy="other")
    with pytest.raises(ValueError):
        OperatorContext(g, 1.0, kind="other")


def test_dirac_of_constant_is_mass_term(cube):
    g, ctx = cube
    c = np.zeros(DIM)
    c[0] = 1.0
    out = apply_dirac(Section(g, np.tile(c, (g.n_cells, 1))), ctx)
    fd = np.zeros(DIM)
    fd[basis_index((), "fd")] = 1.0
    assert np.allclose(out.values, fd)


def test_vector_calculus_identities():
    g = build_grid(DomainSpec.torus(3, 0), (8, 2))
    X = g.box_coordinates()
    phi = np.sin(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1]) + np.sin(2 * np.pi * X[2])
    assert np.abs(curl(gradient(phi, g), g)).max() < 1e-12
    A = np.stack([np.sin(2 * np.pi * X[1]), np.cos(2 * np.pi * X[2]), np.sin(2 * np.pi * X[0])], -1)
    assert np.abs(divergence(curl(A, g), g)).max() < 1e-12


def test_margin_mask():
    g = build_grid(DomainSpec.unit_cube(), 4)
    sel = interior_margin_mask(g, 1)
    assert sel.sum() == 2**3 * 3
    gt = build_grid(DomainSpec.torus(3, 0), 4)
    assert interior_margin_mask(gt, 1).sum() == 4**3 * 3


@pytest.mark.parametrize("l", [0, 1])
def test_spectral_derivative_exact_on_modes(l):
    g = build_grid(DomainSpec.torus(3, l), (8, 2))
    X = g.box_coordinates()
    w = np.pi if l else 2 * np.pi
    f = np.sin(w * X[0])
    assert np.allclose(spectral_derivative(f, g, 0), w * np.cos(w * X[0]), atol=1e-12)


def test_smooth_probe_respects_spin_sign():
    g = build_grid(DomainSpec.torus(3, 1), (8, 2))
    s = smooth_probe(g, np.random.default_rng(0))
    assert np.isfinite(s.values).all() and lq_norm(s) > 0


def test_bergman_projection_properties(torus_bergman):
    g, ctx, fac = torus_bergman
    s = _random(g, 7)
    P = bergman_P(s, fac)
    assert lq_norm(bergman_P(P, fac) - P) <= 1e-6 * lq_norm(s)
    assert np.allclose((P + bergman_Q(s, fac)).values, s.values, atol=0)
    a = 2.5
    assert np.allclose(bergman_P(Section(g, a * s.values), fac).values, a * P.values, atol=1e-10)


def test_bergman_rejects_foreign_context(torus_bergman):
    g, ctx, fac = torus_bergman
    other = OperatorContext(g, 2.0, kind="periodized")
    with pytest.raises(ValueError):
        bergman_P(_random(g, 0), fac, other)
    with pytest.raises(ValueError):
        bergman_build(ctx, lam=-1.0)
