import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_mhd.eisenstein import LatticeSpec
from parabolic_mhd.geometry import (
    DomainSpec,
    EmptyDomainError,
    Section,
    build_grid,
    difference,
    lq_norm,
    project,
    read_section_csv,
    sobolev_norm,
    torus_norm,
    write_section_csv,
)


def test_cube_grid_counts():
    g = build_grid(DomainSpec.unit_cube(), 4)
    assert g.shape == (4, 4, 4, 4) and g.n_cells == 256
    assert g.h == 0.25 and g.tau == 0.25
    assert g.n_faces > 0 and np.all(g.face_areas() > 0)


def test_torus_has_only_time_faces():
    g = build_grid(DomainSpec.torus(3, 1, T=0.5), (4, 2))
    normals = g.face_normals()
    assert np.all(normals[:, :3] == 0)
    assert g.signs == (-1, 1, 1)


def test_periodic_extent_enforced():
    with pytest.raises(ValueError):
        DomainSpec(LatticeSpec(1, 0), upper=(2.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        DomainSpec.unit_cube(T=0.0)


def test_empty_mask_rejected():
    with pytest.raises(EmptyDomainError):
        build_grid(DomainSpec(mask=lambda x: np.zeros(x.shape[:-1], bool)), 4)


def test_ball_mask():
    g = build_grid(DomainSpec(mask=lambda x: np.sum((x - 0.5) ** 2, axis=-1) < 0.16), 8)
    assert 0 < g.n_cells < 8**4


def test_box_roundtrip():
    g = build_grid(DomainSpec.unit_cube(), (3, 2))
    v = np.arange(g.n_cells, dtype=float)
    assert np.array_equal(g.from_box(g.to_box(v)), v)


def test_csv_roundtrip(tmp_path):
    g = build_grid(DomainSpec.unit_cube(), 3)
    s = Section(g, np.random.default_rng(0).standard_normal((g.n_cells, 32)))
    write_section_csv(s, tmp_path / "s.csv")
    assert np.array_equal(read_section_csv(g, tmp_path / "s.csv").values, s.values)


@settings(max_examples=30, deadline=None)
@given(st.floats(1, 6), st.floats(0.1, 3))
def test_lq_norm_homogeneous(q, c):
    g = build_grid(DomainSpec.unit_cube(), 3)
    s = Section(g, np.random.default_rng(1).standard_normal((g.n_cells, 32)))
    assert lq_norm(Section(g, c * s.values), q) == pytest.approx(c * lq_norm(s, q), rel=1e-12)


def test_lq_norm_of_constant():
    g = build_grid(DomainSpec.unit_cube(T=2.0), 4)
    s = Section(g, np.ones((g.n_cells, 32)) / np.sqrt(32))
    assert lq_norm(s, 2) == pytest.approx(np.sqrt(2.0))
    assert lq_norm(s, np.inf) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lq_norm(s, 0.5)


def test_sobolev_dominates_lq():
    g = build_grid(DomainSpec.unit_cube(), 4)
    s = Section.from_function(g, lambda x, t: np.repeat(np.sin(3 * x[..., :1]) * t[..., None], 32, -1))
    diag = {}
    assert sobolev_norm(s, 1, 1, diagnostics=diag) > lq_norm(s)
    assert diag.get("one_sided")


@pytest.mark.parametrize("l", [0, 1])
def test_difference_second_order_on_torus(l):
    errs = []
    for n in (16, 32):
        g = build_grid(DomainSpec.torus(3, l), (n, 2))
        X = g.box_coordinates()
        w = np.pi if l else 2 * np.pi
        f = np.exp(1j * w * X[0]).real if not l else np.cos(w * X[0] + 0.3)
        df = -w * np.sin(w * X[0] + (0.3 if l else 0.0))
        errs.append(np.abs(difference(f, g, 0) - df).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_difference_exact_on_quadratics_in_cube():
    g = build_grid(DomainSpec.unit_cube(), 6)
    X = g.box_coordinates()
    assert np.allclose(difference(X[1] ** 2, g, 1), 2 * X[1], atol=1e-12)


def test_projection_and_torus_norm():
    lat = LatticeSpec(2, 0)
    assert np.allclose(project([1.25, -0.25, 3.0], lat), [0.25, 0.75, 3.0])
    assert torus_norm([0.9, 0.0, 0.0, 0.0], lat) == pytest.approx(0.1)
    assert torus_norm([0.9, 0.0, 0.0, 0.0], lat, np.inf) == pytest.approx(0.1)
