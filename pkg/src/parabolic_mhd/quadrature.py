"""Kernel weight tables for cell and face quadrature on regular grids.

The heat kernel factorises over the coordinate axes, and so does a
lattice sum over a max-norm cube.  Every coefficient of ``E`` (and of its
periodisation) is a combination of one-dimensional factors

    g(z, s)     = sqrt(k / 4 pi s) exp(-k z^2 / 4 s)        (density)
    P(a, b, s)  = int_a^b g dz                               (cell mass)
    dg(a, b, s) = g(b, s) - g(a, s)                          (integral of dg/dz)

each summed over periodic images ``z + n`` with the spin sign ``sign^n``.
Tables are indexed by integer cell offsets ``target - source``; the time
direction is integrated with Gauss-Legendre nodes in ``u = sqrt(s)``.

Two quadratures are provided: ``"cell"`` integrates the kernel exactly over
each source cell/face (piecewise-constant density), ``"midpoint"`` samples the
kernel at cell/face centres and drops the singular cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

__all__ = ["AxisInfo", "volume_table", "spatial_face_table", "temporal_face_table", "N_TIME_NODES"]

N_TIME_NODES = 24
_GL_X, _GL_W = np.polynomial.legendre.leggauss(N_TIME_NODES)


@dataclass(frozen=True)
class AxisInfo:
    h: float
    sign: int  # 0 non-periodic, +1 periodic, -1 antiperiodic
    images: int  # truncation order M for periodic axes

    def shifts(self) -> tuple[np.ndarray, np.ndarray]:
        if self.sign == 0:
            return np.zeros(1), np.ones(1)
        n = np.arange(-self.images, self.images + 1)
        return n.astype(float), np.where(n % 2 == 0, 1.0, float(self.sign))


def _density(z, s, k):
    s_safe = np.where(s > 0, s, 1.0)
    val = np.sqrt(k / (4 * np.pi * s_safe)) * np.exp(-k * z * z / (4 * s_safe))
    return np.where(s > 0, val, 0.0)


def _mass(a, b, s, k):
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.sqrt(k / (4 * np.pi * np.where(s > 0, s, 1.0))) * np.sqrt(np.pi)
        val = 0.5 * (erf(b * c) - erf(a * c))
    # causal kernel: no mass for s <= 0, so d/ds of the mass carries the unit impulse at s = 0
    return np.where(s > 0, val, 0.0)


def _image_sum(func, axis: AxisInfo, *z, s):
    shifts, signs = axis.shifts()
    total = 0.0
    for n, sg in zip(shifts, signs):
        total = total + sg * func(*(zz + n for zz in z), s)
    return total


class _Factors:
    """One-dimensional factors along an axis at cell offsets ``o`` (shape ``(L, 1, 1)``)."""

    def __init__(self, axis: AxisInfo, offsets: np.ndarray, s: np.ndarray, k: float, staggered: bool = False):
        self.axis = axis
        self.k = k
        h = axis.h
        o = offsets.reshape(-1, 1, 1).astype(float)
        self.s = s
        if staggered:
            self.c = (o + 0.5) * h
        else:
            self.c = o * h
            self.lo = (o - 0.5) * h
            self.hi = (o + 0.5) * h

    def mass(self):
        k = self.k
        return _image_sum(lambda a, b, s: _mass(a, b, s, k), self.axis, self.lo, self.hi, s=self.s)

    def dg(self):
        k = self.k
        return _image_sum(
            lambda a, b, s: _density(b, s, k) - _density(a, s, k), self.axis, self.lo, self.hi, s=self.s
        )

    def dmass_ds(self):
        k = self.k

        def f(a, b, s):
            s_safe = np.where(s > 0, s, 1.0)
            return np.where(s > 0, -(b * _density(b, s, k) - a * _density(a, s, k)) / (2 * s_safe), 0.0)

        return _image_sum(f, self.axis, self.lo, self.hi, s=self.s)

    def point(self):
        k = self.k
        return _image_sum(lambda z, s: _density(z, s, k), self.axis, self.c, s=self.s)

    def point_dz(self):
        k = self.k

        def f(z, s):
            s_safe = np.where(s > 0, s, 1.0)
            return -k * z / (2 * s_safe) * _density(z, s, k)

        return _image_sum(f, self.axis, self.c, s=self.s)

    def point_ds(self):
        k = self.k

        def f(z, s):
            s_safe = np.where(s > 0, s, 1.0)
            return (k * z * z / (4 * s_safe**2) - 0.5 / s_safe) * _density(z, s, k)

        return _image_sum(f, self.axis, self.c, s=self.s)


def _time_nodes(t_offsets: np.ndarray, tau: float):
    """Quadrature nodes ``s`` and weights for each time offset's interval ``[(o-1/2)tau, (o+1/2)tau] & s > 0``."""
    lo = np.clip((t_offsets - 0.5) * tau, 0.0, None)
    hi = np.clip((t_offsets + 0.5) * tau, 0.0, None)
    ulo, uhi = np.sqrt(lo), np.sqrt(hi)
    mid = 0.5 * (ulo + uhi)[:, None]
    half = 0.5 * (uhi - ulo)[:, None]
    u = mid + half * _GL_X[None, :]
    w = half * _GL_W[None, :] * 2 * u
    return lo, hi, (u * u)[None, :, :], w


def _offsets(n: int, pad: int, staggered: bool) -> np.ndarray:
    if staggered:
        return np.arange(-n - pad, n + pad)
    return np.arange(-(n - 1) - pad, n + pad)


def volume_table(axes, tau: float, nt: int, pads, k: float, quadrature: str = "cell") -> np.ndarray:
    """Weights ``K[c, o1, o2, o3, ot]`` with ``T u(y) = sum_x sum_c b_c K[c, y - x] u(x)``.

    ``c`` runs over the kernel slots ``(e1, e2, e3, f, fd)``; offsets along axis
    ``d`` run from ``-(n_d - 1) - pad_d`` to ``n_d - 1 + pad_d``.
    """
    ns = [a[0] for a in axes]
    infos = [a[1] for a in axes]
    t_off = _offsets(nt, pads[3], False)
    sq = np.sqrt(k)
    if quadrature == "midpoint":
        s = np.clip(t_off * tau, 0.0, None)[None, :, None]
        fac = [_Factors(infos[d], _offsets(ns[d], pads[d], False), s, k) for d in range(3)]
        g = [f.point()[..., 0] * infos[d].h for d, f in enumerate(fac)]
        gz = [f.point_dz()[..., 0] * infos[d].h for d, f in enumerate(fac)]
        gs = [f.point_ds()[..., 0] * infos[d].h for d, f in enumerate(fac)]
        out = _combine_point(g, gz, gs, sq) * tau
        centre = tuple(ns[d] - 1 + pads[d] for d in range(3)) + (nt - 1 + pads[3],)
        out[(slice(None),) + centre] = 0.0
        return out
    lo, hi, s, w = _time_nodes(t_off, tau)
    fac = [_Factors(infos[d], _offsets(ns[d], pads[d], False), s, k) for d in range(3)]
    mass = [f.mass() for f in fac]
    dg = [f.dg() for f in fac]
    out = np.empty((5, *(len(_offsets(ns[d], pads[d], False)) for d in range(3)), len(t_off)))
    out[0] = np.einsum("atq,btq,ctq,tq->abct", dg[0], mass[1], mass[2], w) / sq
    out[1] = np.einsum("atq,btq,ctq,tq->abct", mass[0], dg[1], mass[2], w) / sq
    out[2] = np.einsum("atq,btq,ctq,tq->abct", mass[0], mass[1], dg[2], w) / sq
    out[4] = np.einsum("atq,btq,ctq,tq->abct", mass[0], mass[1], mass[2], w)
    ends = []
    for edge in (hi, lo):
        se = edge[None, :, None]
        m = [
            _Factors(infos[d], _offsets(ns[d], pads[d], False), se, k).mass()[..., 0] for d in range(3)
        ]
        ends.append(np.einsum("at,bt,ct->abct", *m))
    out[3] = ends[0] - ends[1]
    empty = hi <= 0
    out[..., empty] = 0.0
    return out


def _combine_point(g, gz, gs, sq):
    out = np.empty((5,) + g[0].shape[:1] + g[1].shape[:1] + g[2].shape[:1] + g[0].shape[1:])
    out[0] = np.einsum("at,bt,ct->abct", gz[0], g[1], g[2]) / sq
    out[1] = np.einsum("at,bt,ct->abct", g[0], gz[1], g[2]) / sq
    out[2] = np.einsum("at,bt,ct->abct", g[0], g[1], gz[2]) / sq
    out[3] = (
        np.einsum("at,bt,ct->abct", gs[0], g[1], g[2])
        + np.einsum("at,bt,ct->abct", g[0], gs[1], g[2])
        + np.einsum("at,bt,ct->abct", g[0], g[1], gs[2])
    )
    out[4] = np.einsum("at,bt,ct->abct", g[0], g[1], g[2])
    return out


def spatial_face_table(
    axes, normal: int, tau: float, nt: int, pads, k: float, quadrature: str = "cell", moment: bool = False
):
    """Weights for faces orthogonal to spatial axis ``normal``.

    Along ``normal`` the offset is ``target index - plane index`` (planes sit at
    ``x = plane * h``), running from ``-n - pad`` to ``n - 1 + pad``.  The weight
    is the kernel integrated over the face (area ``h^2`` times the cell's time
    interval) or, for ``"midpoint"``, sampled at the face centre times the area.
    With ``moment=True`` the kernel is weighted by ``(t - t_face) / tau`` inside
    the face's time interval, the coefficient of a linear-in-time density.
    """
    ns = [a[0] for a in axes]
    infos = [a[1] for a in axes]
    t_off = _offsets(nt, pads[3], False)
    sq = np.sqrt(k)
    h = infos[normal].h
    if quadrature == "midpoint":
        s = np.clip(t_off * tau, 0.0, None)[None, :, None]
        if moment:  # the centre sample has zero first moment
            shape = [len(_offsets(ns[d], pads[d], d == normal)) for d in range(3)]
            return np.zeros((5, *shape, len(t_off)))
        fac = [
            _Factors(infos[d], _offsets(ns[d], pads[d], d == normal), s, k, staggered=(d == normal))
            for d in range(3)
        ]
        g = [f.point()[..., 0] * (1.0 if d == normal else infos[d].h) for d, f in enumerate(fac)]
        gz = [f.point_dz()[..., 0] * (1.0 if d == normal else infos[d].h) for d, f in enumerate(fac)]
        gs = [f.point_ds()[..., 0] * (1.0 if d == normal else infos[d].h) for d, f in enumerate(fac)]
        return _combine_point(g, gz, gs, sq) * tau
    lo, hi, s, w = _time_nodes(t_off, tau)
    w0 = w
    if moment:
        # t - t_face = o tau - s for time offset o
        w = w * (t_off[:, None] * tau - s[0]) / tau
    fac = [
        _Factors(infos[d], _offsets(ns[d], pads[d], d == normal), s, k, staggered=(d == normal)) for d in range(3)
    ]
    # along the normal the face is a point: density and its z-derivative
    f_mass = [fac[d].point() if d == normal else fac[d].mass() for d in range(3)]
    f_dz = [fac[d].point_dz() if d == normal else fac[d].dg() for d in range(3)]
    shape = [len(_offsets(ns[d], pads[d], d == normal)) for d in range(3)]
    out = np.empty((5, *shape, len(t_off)))
    for c in range(3):
        parts = [f_dz[d] if d == c else f_mass[d] for d in range(3)]
        out[c] = np.einsum("atq,btq,ctq,tq->abct", *parts, w) / sq
    out[4] = np.einsum("atq,btq,ctq,tq->abct", *f_mass, w)
    ends = []
    for edge in (hi, lo):
        se = edge[None, :, None]
        m = []
        for d in range(3):
            fd = _Factors(infos[d], _offsets(ns[d], pads[d], d == normal), se, k, staggered=(d == normal))
            m.append((fd.point() if d == normal else fd.mass())[..., 0])
        ends.append(np.einsum("at,bt,ct->abct", *m))
    if moment:
        # int sigma dM = [sigma M] + (1/tau) int M ds with sigma = (o tau - s) / tau
        s_hi = (t_off * tau - hi) / tau
        s_lo = (t_off * tau - lo) / tau
        out[3] = s_hi * ends[0] - s_lo * ends[1] + np.einsum("atq,btq,ctq,tq->abct", *f_mass, w0) / tau
    else:
        out[3] = ends[0] - ends[1]
    out[..., hi <= 0] = 0.0
    return out


def temporal_face_table(axes, tau: float, nt: int, pads, k: float, quadrature: str = "cell"):
    """Weights for faces orthogonal to time.

    The time offset is ``target index - plane index`` (planes at ``t = plane *
    tau``), from ``-nt - pad`` to ``nt - 1 + pad``; the spatial face is a cell
    cross-section of volume ``h^3``.
    """
    ns = [a[0] for a in axes]
    infos = [a[1] for a in axes]
    t_off = _offsets(nt, pads[3], True)
    s = np.clip((t_off + 0.5) * tau, 0.0, None)[None, :, None]
    sq = np.sqrt(k)
    fac = [_Factors(infos[d], _offsets(ns[d], pads[d], False), s, k) for d in range(3)]
    if quadrature == "midpoint":
        g = [f.point()[..., 0] * infos[d].h for d, f in enumerate(fac)]
        gz = [f.point_dz()[..., 0] * infos[d].h for d, f in enumerate(fac)]
        gs = [f.point_ds()[..., 0] * infos[d].h for d, f in enumerate(fac)]
        return _combine_point(g, gz, gs, sq)
    mass = [f.mass()[..., 0] for f in fac]
    dg = [f.dg()[..., 0] for f in fac]
    dm = [f.dmass_ds()[..., 0] for f in fac]
    out = _combine_point(mass, dg, dm, sq)
    out[..., s[0, :, 0] <= 0] = 0.0
    return out
