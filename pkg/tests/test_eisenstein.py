import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_mhd.algebra import Rotor
from parabolic_mhd.eisenstein import (
    LatticeSpec,
    TruncationError,
    choose_truncation,
    cyclic_eisenstein,
    eisenstein,
    eisenstein_array,
    lattice_sign,
    rotor_order,
    shell,
    tail_bound,
)
from parabolic_mhd.kernels import SpaceTimePoint, fundamental_E

lattices = st.integers(1, 3).flatmap(lambda p: st.tuples(st.just(p), st.integers(0, p)))


@pytest.mark.parametrize("p", [1, 2, 3])
def test_shell_sizes(p):
    for m in range(4):
        expected = 1 if m == 0 else (2 * m + 1) ** p - (2 * m - 1) ** p
        pts = shell(m, p)
        assert len(pts) == expected
        assert np.all(np.abs(pts).max(axis=1) == m)
        assert np.all(pts[:, p:] == 0)


def test_shell_rejects_negative():
    with pytest.raises(ValueError):
        shell(-1, 2)


def test_lattice_sign():
    assert lattice_sign([1, 0, 0], 1) == -1
    assert lattice_sign([1, 1, 0], 2) == 1
    assert lattice_sign([1, 0, 0], 0) == 1
    assert lattice_sign([0, 3, 0], 1) == 1


def test_single_shell_is_the_flat_kernel():
    p = SpaceTimePoint.of([0.1, -0.2, 0.3], 0.4)
    assert eisenstein(p, 2.0, LatticeSpec(3, 1), 0).allclose(fundamental_E(p, 2.0), atol=0)


def test_lattice_spec_validation():
    with pytest.raises(ValueError):
        LatticeSpec(2, 3)
    with pytest.raises(ValueError):
        LatticeSpec(0, 0)


@settings(max_examples=30, deadline=None)
@given(lattices, st.floats(0.05, 0.8), st.sampled_from([1.0, 4.0]))
def test_tail_bound_dominates(pl, t, k):
    lat = LatticeSpec(*pl)
    rng = np.random.default_rng(int(t * 1e6))
    x = rng.uniform(-0.5, 0.5, (5, 3))
    r = float(np.linalg.norm(x, axis=1).max())
    M = math.floor(r) + 1
    ts = np.full(5, t)
    diff = eisenstein_array(x, ts, k, lat, M + 8) - eisenstein_array(x, ts, k, lat, M)
    assert np.linalg.norm(diff, axis=1).max() <= tail_bound(M, r, t, k, lat.p)


def test_tail_bound_requires_large_enough_M():
    with pytest.raises(TruncationError):
        tail_bound(0, 1.5, 0.5, 1.0, 3)
    assert tail_bound(3, 0.5, 0.0, 1.0, 3) == 0.0


def test_tail_bound_decreases_in_M():
    vals = [tail_bound(M, 0.8, 0.5, 1.0, 3) for M in range(1, 6)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_choose_truncation_meets_tolerance():
    plan = choose_truncation(1e-8, 0.5, 1.0, 1.0, LatticeSpec(3, 0))
    assert plan.bound <= 1e-8
    assert tail_bound(plan.M - 1, 0.5, 1.0, 1.0, 3) > 1e-8 or plan.M == 1
    with pytest.raises(TruncationError):
        choose_truncation(1e-300, 0.5, 50.0, 1.0, LatticeSpec(3, 0), cap=4)


@settings(max_examples=20, deadline=None)
@given(lattices, st.floats(0.1, 0.5))
def test_quasi_periodicity(pl, t):
    lat = LatticeSpec(*pl)
    x = np.array([[0.2, -0.1, 0.3]])
    M = 3
    base = eisenstein_array(x, np.array([t]), 1.0, lat, M)
    for d in range(lat.p):
        sh = eisenstein_array(x + np.eye(3)[d], np.array([t]), 1.0, lat, M)
        sign = -1 if d < lat.l else 1
        assert np.linalg.norm(sh - sign * base) <= 2 * tail_bound(M - 1, 1.4, t, 1.0, lat.p)


def test_cyclic_kernel_requires_finite_order():
    a = Rotor.from_axis_angle([0, 0, 1], math.pi / 2)
    # a quarter turn is a quaternion of order 8 (a^4 = -1)
    assert rotor_order(a, 8) and not rotor_order(a, 4)
    p = SpaceTimePoint.of([0.1, 0.2, 0.3], 0.5)
    assert cyclic_eisenstein(p, 1.0, LatticeSpec(3, 0), 2, a, 8).coefficients.shape == (32,)
    with pytest.raises(ValueError):
        cyclic_eisenstein(p, 1.0, LatticeSpec(3, 0), 2, a, 3)
