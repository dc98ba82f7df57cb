"""Discrete parabolic Dirac operator and its integral calculus on voxel grids.

Orientation (fixed by the Borel-Pompeiu calibration in the test-suite)::

    T u(y, t0) = int_G E(y - x, t0 - t; k) u(x, t) dx dt          (past sources)
    F w(y, t0) = -int_dG E(y - x, t0 - t; k) n(x, t) w(x, t) dsigma
    n          = (1/sqrt(k)) sum_j nu_j e_j + nu_t f               (outward normal)

so that ``u = F tr u + T D+ u`` inside ``G`` and ``D+ T g = g``.

Kernel sums are translation invariant in the cell offset, so both transforms
are evaluated as FFT convolutions with tables from :mod:`.quadrature`.  The
``"exclude"`` diagonal policy samples the kernel at cell/face centres and
skips the singular cell; ``"local-correction"`` integrates the kernel exactly
over every source cell, which also handles the cells next to the singularity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.fft import irfftn, next_fast_len, rfftn
from scipy.linalg.interpolative import estimate_spectral_norm

from .algebra import DIM, LEFT, MODULES, Rotor, basis_index
from .eisenstein import TruncationPlan, _eisenstein_components, choose_truncation, rotor_order
from .geometry import Section, SpaceTimeGrid, difference
from .kernels import KERNEL_SLOTS, KernelSpec, _spec
from .quadrature import AxisInfo, spatial_face_table, temporal_face_table, volume_table

__all__ = [
    "OperatorContext",
    "BergmanFactorization",
    "BergmanSingularError",
    "apply_dirac",
    "teodorescu",
    "cauchy",
    "trace",
    "borel_pompeiu_residual",
    "right_inverse_residual",
    "bergman_build",
    "bergman_P",
    "bergman_Q",
    "gradient",
    "divergence",
    "curl",
    "interior_margin_mask",
    "spectral_derivative",
    "smooth_probe",
    "operator_norm_estimates",
]

log = logging.getLogger(__name__)

KINDS = ("flat", "periodized", "cyclic")
POLICIES = ("exclude", "local-correction")

_E = [basis_index((j,)) for j in (1, 2, 3)]
_F = basis_index((), "f")
_FD = basis_index((), "fd")


class BergmanSingularError(np.linalg.LinAlgError):
    """Boundary system is numerically singular; pass a positive regularisation."""


def _pairs(rep: np.ndarray) -> list[tuple[int, int, int, float]]:
    """Nonzero entries ``(slot, row, col, value)`` of the kernel-slot left actions."""
    out = []
    for c, blade in enumerate(KERNEL_SLOTS):
        m = rep[blade]
        for k, j in zip(*np.nonzero(m)):
            out.append((c, int(k), int(j), float(m[k, j])))
    return out


_PAIRS_FULL = _pairs(LEFT)


def _dense(rep: np.ndarray) -> np.ndarray:
    """Kernel-slot left actions ``(5, m, m)`` for a small module."""
    return np.ascontiguousarray(rep[KERNEL_SLOTS])


@dataclass(eq=False)
class OperatorContext:
    """Grid, kernel and quadrature choices shared by all integral operators.

    ``kind`` selects the flat kernel ``E``, the periodised kernel on the
    domain's lattice (truncated per ``plan``; chosen from ``tol`` when not
    given) or the cyclic-group kernel for ``rotor`` of order ``order``.
    """

    grid: SpaceTimeGrid
    kernel: KernelSpec = field(default_factory=KernelSpec)
    kind: str = "flat"
    plan: Optional[TruncationPlan] = None
    policy: str = "local-correction"
    rotor: Optional[Rotor] = None
    order: int = 1
    tol: float = 1e-10

    def __post_init__(self):
        self.kernel = _spec(self.kernel)
        if self.kind not in KINDS:
            raise ValueError(f"kernel kind must be one of {KINDS}")
        if self.policy not in POLICIES:
            raise ValueError(f"diagonal policy must be one of {POLICIES}")
        lat = self.grid.spec.lattice
        if self.kind != "flat":
            if lat is None:
                raise ValueError("periodised kernels need a lattice in the domain spec")
            if self.plan is None:
                self.plan = choose_truncation(self.tol, self.offset_radius, self.grid.spec.T, self.kernel, lat)
        if self.kind == "cyclic":
            if self.rotor is None:
                raise ValueError("cyclic kernel needs a rotor")
            if not isinstance(self.rotor, Rotor):
                self.rotor = Rotor.from_array(self.rotor)
            if not rotor_order(self.rotor, self.order):
                raise ValueError(f"rotor does not have order dividing {self.order}")
            if self.policy != "exclude":
                raise ValueError("the cyclic kernel only supports the 'exclude' policy")
        self._fft_cache: dict = {}

    # -- geometry -----------------------------------------------------------

    @property
    def k(self) -> float:
        return self.kernel.k

    @property
    def offset_radius(self) -> float:
        ext = [self.grid.spec.upper[d] - self.grid.spec.lower[d] for d in range(3)]
        return float(np.linalg.norm(ext) + self.grid.h)

    @property
    def truncation_error(self) -> float:
        """Recorded tail bound of the truncation plan (0 for the flat kernel)."""
        return 0.0 if self.plan is None else float(self.plan.bound)

    @cached_property
    def axes(self):
        signs = self.grid.signs if self.kind != "flat" else (0, 0, 0)
        M = self.plan.M if self.plan is not None else 0
        return [(self.grid.shape[d], AxisInfo(self.grid.h, signs[d], M if signs[d] else 0)) for d in range(3)]

    @property
    def quadrature(self) -> str:
        return "midpoint" if self.policy == "exclude" else "cell"

    @cached_property
    def faces(self):
        """Per-face ``(axis, plane coordinates (i1, i2, i3, it), outward sign)``."""
        g = self.grid
        axis = np.array([f.axis for f in g.faces], dtype=int)
        cells = g.face_cells()
        normals = g.face_normals()
        sign = normals[np.arange(len(axis)), axis].astype(int) if len(axis) else np.zeros(0, int)
        plane = cells.copy()
        for d in range(4):
            sel = axis == d
            up = sel & (sign > 0)
            plane[up, d] += 1
            if d < 3 and g.periodic[d]:
                plane[sel, d] %= g.shape[d]
        return axis, plane, sign

    @cached_property
    def top_faces(self) -> np.ndarray:
        axis, _, sign = self.faces
        return (axis == 3) & (sign > 0)

    # -- tables ---------------------------------------------------------------

    def _table(self, which: int) -> np.ndarray:
        key = ("table", which)
        if key not in self._fft_cache:
            n_t, tau, k = self.grid.shape[3], self.grid.tau, self.k
            pads = (0, 0, 0, 0)
            if self.kind == "cyclic":
                tab = self._cyclic_table(which)
            elif which < 0:
                tab = volume_table(self.axes, tau, n_t, pads, k, self.quadrature)
            elif which < 3:
                tab = spatial_face_table(self.axes, which, tau, n_t, pads, k, self.quadrature)
            elif 4 <= which < 7:
                tab = spatial_face_table(self.axes, which - 4, tau, n_t, pads, k, self.quadrature, moment=True)
            else:
                tab = temporal_face_table(self.axes, tau, n_t, pads, k, self.quadrature)
            self._fft_cache[key] = tab
        return self._fft_cache[key]

    def _cyclic_table(self, which: int) -> np.ndarray:
        g = self.grid
        n = g.shape
        h, tau = g.h, g.tau
        coords, measure = [], g.h**3 * g.tau
        for d in range(3):
            if which == d:
                coords.append((np.arange(-n[d], n[d]) + 0.5) * h)
            else:
                coords.append(np.arange(-(n[d] - 1), n[d]) * h)
        if which == 3:
            s = (np.arange(-n[3], n[3]) + 0.5) * tau
        else:
            s = np.arange(-(n[3] - 1), n[3]) * tau
        if 0 <= which < 3:
            measure = h * h * tau
        elif which == 3:
            measure = h**3
        Z = np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)
        lat = g.spec.lattice
        total = np.zeros(Z.shape[:3] + (len(s), 5))
        power = Rotor.identity()
        pos = s > 0
        for _ in range(self.order):
            power = power * self.rotor
            R = power.matrix()
            zr = Z @ R.T
            for it in np.flatnonzero(pos):
                c = self._components_excluding_origin(zr, s[it], lat)
                c[..., :3] = c[..., :3] @ R  # conj(a) v a = R^T v
                total[..., it, :] += c
        if which < 0:
            centre = tuple(n[d] - 1 for d in range(3)) + (n[3] - 1,)
            total[centre] = 0.0
        return np.moveaxis(total, -1, 0) * measure

    def _components_excluding_origin(self, z, s, lat):
        spec = KernelSpec(self.k, singular_radius=0.0)
        return _eisenstein_components(z, np.full(z.shape[:-1], s), spec, lat, self.plan.M)

    # -- convolution engine -----------------------------------------------------

    def _convolve(self, which: int, src: np.ndarray, pairs, lo) -> np.ndarray:
        """Apply table ``which`` to channel-first ``src (..., m, S1..S4)``; targets are the full box."""
        table = self._table(which)
        S = src.shape[-4:]
        L = table.shape[1:]
        n = self.grid.shape
        fshape = tuple(
            next_fast_len(max(n[d] - 1 + lo[d] + 1, S[d] + L[d] - 1 - lo[d]), real=True) for d in range(4)
        )
        key = ("fft", which, fshape)
        if key not in self._fft_cache:
            self._fft_cache[key] = rfftn(table, s=fshape, axes=(1, 2, 3, 4))
        kh = self._fft_cache[key]
        axes = (-4, -3, -2, -1)
        m = src.shape[-5]
        active = [j for j in range(m) if np.any(src[..., j, :, :, :, :])]
        out = np.zeros(src.shape[:-4] + n)
        if not active:
            return out
        crop = (Ellipsis,) + tuple(slice(lo[d], lo[d] + n[d]) for d in range(4))
        spectra = rfftn(src[..., active, :, :, :, :], s=fshape, axes=axes)
        if isinstance(pairs, np.ndarray):
            # dense left action (5, m, m): contract channels slot by slot
            acc = 0
            for c in range(5):
                mix = np.tensordot(pairs[c][:, active], spectra, axes=([1], [-5]))  # (m, ..., F)
                acc = acc + kh[c] * mix
            res = irfftn(acc, s=fshape, axes=axes)[crop]
            return np.moveaxis(res, 0, -5)
        pos = {j: i for i, j in enumerate(active)}
        acc: dict[int, np.ndarray] = {}
        for c, k, j, v in pairs:
            if j in pos:
                term = kh[c] * spectra[..., pos[j], :, :, :, :]
                if k in acc:
                    acc[k] += v * term
                else:
                    acc[k] = v * term
        for k, spec_k in acc.items():
            out[..., k, :, :, :, :] = irfftn(spec_k, s=fshape, axes=axes)[crop]
        return out

    def volume_apply(self, src: np.ndarray, pairs=_PAIRS_FULL) -> np.ndarray:
        n = self.grid.shape
        lo = tuple(n[d] - 1 for d in range(4))
        src = src * self.grid.box_mask
        return self._convolve(-1, src, pairs, lo) * self.grid.box_mask

    def face_apply(self, density: np.ndarray, pairs=_PAIRS_FULL) -> np.ndarray:
        """Sum of face contributions for weighted face densities ``(..., n_faces, m)``."""
        n = self.grid.shape
        axis, plane, _ = self.faces
        m = density.shape[-1]
        out = np.zeros(density.shape[:-2] + (m,) + n)
        for d in range(4):
            sel = np.flatnonzero(axis == d)
            if not len(sel):
                continue
            shape = tuple(n[a] + 1 if a == d else n[a] for a in range(4))
            src = np.zeros(density.shape[:-2] + (m,) + shape)
            p = plane[sel]
            vals = np.moveaxis(density[..., sel, :], -1, -2)  # (..., m, faces)
            src[(Ellipsis, slice(None), p[:, 0], p[:, 1], p[:, 2], p[:, 3])] = vals
            lo = tuple(n[a] if a == d else n[a] - 1 for a in range(4))
            out += self._convolve(d if d < 3 else 3, src, pairs, lo)
            if d < 3 and n[3] > 1 and self.kind != "cyclic":
                # linear-in-time face data: slope per time step along each face's history
                slope = np.gradient(src, axis=-1)
                out += self._convolve(d + 4, slope, pairs, lo)
        return out * self.grid.box_mask

    def face_weights(self, values: np.ndarray, rep=LEFT) -> np.ndarray:
        """``-n * value`` per face, with ``n`` the scaled outward normal multivector."""
        axis, _, sign = self.faces
        out = np.empty_like(values)
        for d in range(4):
            sel = axis == d
            if not sel.any():
                continue
            blade = _E[d] if d < 3 else _F
            scale = 1.0 / math.sqrt(self.k) if d < 3 else 1.0
            w = (-scale * sign[sel])[:, None]
            out[..., sel, :] = w * (values[..., sel, :] @ rep[blade].T)
        return out


# -- helpers ------------------------------------------------------------------------


def _box_channels_first(s: Section) -> np.ndarray:
    return np.moveaxis(s.box(), -1, 0)


def _section_from_channels(grid: SpaceTimeGrid, box: np.ndarray) -> Section:
    return Section.from_box(grid, np.moveaxis(box, 0, -1))


def _check_grid(s: Section, ctx: OperatorContext):
    if s.grid is not ctx.grid:
        raise ValueError("section and operator context live on different grids")


def _left(blade: int, arr: np.ndarray) -> np.ndarray:
    return arr @ LEFT[blade].T


# -- differential operators -----------------------------------------------------------


def apply_dirac(s: Section, ctx: OperatorContext, sign: int = 1) -> Section:
    """``D(+/-) u = (1/sqrt(k)) sum e_j d_j u + f d_t u +/- fd u`` with grid differences."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    _check_grid(s, ctx)
    grid = ctx.grid
    if min(grid.shape[:3]) < 3:
        raise ValueError("apply_dirac needs at least 3 cells along every spatial axis")
    box = s.box()
    out = sign * _left(_FD, box)
    for d in range(3):
        out += _left(_E[d], difference(box, grid, d)) / math.sqrt(ctx.k)
    out += _left(_F, difference(box, grid, 3))
    return Section.from_box(grid, out)


def gradient(box: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Spatial gradient of a scalar box ``(n1, n2, n3, nt)`` -> ``(..., 3)``."""
    return np.stack([difference(box, grid, d) for d in range(3)], axis=-1)


def divergence(box: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Divergence of a vector box ``(n1, n2, n3, nt, 3)``."""
    return sum(difference(box[..., d], grid, d) for d in range(3))


def curl(box: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    d = [[difference(box[..., i], grid, j) for j in range(3)] for i in range(3)]
    return np.stack([d[2][1] - d[1][2], d[0][2] - d[2][0], d[1][0] - d[0][1]], axis=-1)


# -- integral operators ---------------------------------------------------------------


def teodorescu(s: Section, ctx: OperatorContext, target=None):
    """``T u`` on the interior cells; with ``target`` (indices into the cell list) only those rows."""
    _check_grid(s, ctx)
    out = ctx.volume_apply(_box_channels_first(s))
    res = _section_from_channels(ctx.grid, out)
    return res if target is None else res.values[np.asarray(target)]


def trace(s: Section) -> np.ndarray:
    """Boundary values by nearest-interior-cell sampling, shape ``(n_faces, 32)``."""
    c = s.grid.face_cells()
    box = s.box()
    return box[c[:, 0], c[:, 1], c[:, 2], c[:, 3]]


def cauchy(tr, ctx: OperatorContext, target=None):
    """``F w`` for boundary data ``w`` (``(n_faces, 32)`` array or a Section carrying face values)."""
    if isinstance(tr, Section):
        if tr.face_values is None:
            raise ValueError("section carries no boundary values; pass trace(section)")
        tr = tr.face_values
    tr = np.asarray(tr, dtype=float)
    if tr.shape != (ctx.grid.n_faces, DIM):
        raise ValueError(f"boundary data must have shape {(ctx.grid.n_faces, DIM)}")
    out = ctx.face_apply(ctx.face_weights(tr))
    res = _section_from_channels(ctx.grid, out)
    return res if target is None else res.values[np.asarray(target)]


def interior_margin_mask(grid: SpaceTimeGrid, margin: int = 1) -> np.ndarray:
    """Interior cells at least ``margin`` cells away from the spatial boundary and from ``t = 0``."""
    box = grid.box_mask.copy()
    core = box.copy()
    for d in range(3):
        if grid.periodic[d]:
            continue
        for shift in range(1, margin + 1):
            for sgn in (1, -1):
                shifted = np.zeros_like(box)
                sl_dst = [slice(None)] * 4
                sl_src = [slice(None)] * 4
                if sgn > 0:
                    sl_dst[d], sl_src[d] = slice(shift, None), slice(None, -shift)
                else:
                    sl_dst[d], sl_src[d] = slice(None, -shift), slice(shift, None)
                shifted[tuple(sl_dst)] = box[tuple(sl_src)]
                core &= shifted
    core[:, :, :, :margin] = False
    return grid.from_box(core)


def borel_pompeiu_residual(u: Section, ctx: OperatorContext, margin: int = 1, tr=None) -> float:
    """L2 norm of ``F tr u + T D+ u - u`` over interior cells with a boundary margin."""
    _check_grid(u, ctx)
    if tr is None:
        tr = u.face_values if u.face_values is not None else trace(u)
    r = cauchy(tr, ctx) + teodorescu(apply_dirac(u, ctx), ctx) - u
    sel = interior_margin_mask(ctx.grid, margin)
    return float(np.sqrt(np.sum(r.values[sel] ** 2) * ctx.grid.cell_volume))


def right_inverse_residual(g: Section, ctx: OperatorContext, margin: int = 1) -> float:
    """Relative L2 residual ``|D+ T g - g| / |g|`` over interior cells with a margin."""
    r = apply_dirac(teodorescu(g, ctx), ctx) - g
    sel = interior_margin_mask(ctx.grid, margin)
    return float(np.linalg.norm(r.values[sel]) / np.linalg.norm(g.values[sel]))


# -- Bergman projection -----------------------------------------------------------------


@dataclass(eq=False)
class BergmanFactorization:
    """Factorised boundary system ``tr T F + lam I`` over face degrees of freedom.

    In the reduced form the unknowns are the weighted densities ``-n w`` on
    all faces except ``t = T`` (whose contribution vanishes inside by
    causality), expressed in each irreducible module of the algebra; the
    equations are the components of the boundary trace in the same range of
    ``-n``.  (Weighting the equations by ``-n`` as well would make the
    ``t = 0`` block vanish identically in the continuum limit.)  The full form
    keeps 32 unknowns per face and uses ``tr T F`` literally.
    """

    ctx: OperatorContext
    lam: tuple
    reduced: bool
    faces: np.ndarray
    bases: list
    blocks: list  # per component: (matrix, lu, piv)
    condition: tuple
    norm: tuple

    @property
    def size(self) -> int:
        return self.blocks[0][0].shape[0]


def _face_bases(ctx: OperatorContext, faces: np.ndarray, rep) -> list:
    """Per face: orthonormal basis ``U`` of the range of ``W = -n`` in module ``rep``, and ``W``."""
    axis, _, sign = ctx.faces
    cache = {}
    out = []
    for f in faces:
        d, sg = int(axis[f]), int(sign[f])
        if (d, sg) not in cache:
            blade = _E[d] if d < 3 else _F
            scale = 1.0 / math.sqrt(ctx.k) if d < 3 else 1.0
            W = -scale * sg * rep[blade]
            u, s, _ = np.linalg.svd(W)
            cache[(d, sg)] = (u[:, : int(np.sum(s > 1e-12 * s.max()))], W)
        out.append(cache[(d, sg)])
    return out


def _translation_orbits(ctx: OperatorContext, faces: np.ndarray):
    """Map faces to representatives under lattice translations of the grid, if the domain allows it.

    Returns ``(rep_of, shift)`` with the representative's position in ``faces``
    and the cell shift along each periodic axis, or ``None`` when no axis is
    both periodic and translation invariant.
    """
    g = ctx.grid
    per = [d for d in range(3) if g.periodic[d] and np.all(g.mask == np.take(g.mask, [0], axis=d))]
    if not per or ctx.kind != "periodized":
        return None
    axis, plane, sign = ctx.faces
    key = {}
    rep_of = np.empty(len(faces), dtype=int)
    shift = np.zeros((len(faces), 3), dtype=int)
    for i, f in enumerate(faces):
        pos = plane[f].copy()
        shift[i, per] = pos[per]
        pos[per] = 0
        k = (int(axis[f]), int(sign[f]), tuple(pos))
        rep_of[i] = key.setdefault(k, i)
    return rep_of, shift, per


def _block_columns(ctx, pairs, faces, bases, cols, batch=32) -> np.ndarray:
    """Columns of the reduced boundary matrix for the listed ``(face position, basis index)`` pairs."""
    m = pairs.shape[-1]
    offsets = np.cumsum([0] + [b[0].shape[1] for b in bases])
    out = np.empty((offsets[-1], len(cols)))
    cells = ctx.grid.face_cells()
    for start in range(0, len(cols), batch):
        chunk = cols[start : start + batch]
        dens = np.zeros((len(chunk), ctx.grid.n_faces, m))
        for b, (i, j) in enumerate(chunk):
            dens[b, faces[i]] = bases[i][0][:, j]
        tv = ctx.volume_apply(ctx.face_apply(dens, pairs), pairs)
        tr = np.moveaxis(tv, -5, -1)[:, cells[faces, 0], cells[faces, 1], cells[faces, 2], cells[faces, 3]]
        for i, (U, _) in enumerate(bases):
            out[offsets[i] : offsets[i + 1], start : start + len(chunk)] = (tr[:, i] @ U).T
    return out


def _build_block(ctx, rep, faces, bases) -> np.ndarray:
    pairs = _dense(rep)
    dims = np.array([b[0].shape[1] for b in bases])
    offsets = np.concatenate([[0], np.cumsum(dims)])
    N = offsets[-1]
    orbits = _translation_orbits(ctx, faces)
    if orbits is None:
        cols = [(i, j) for i in range(len(faces)) for j in range(dims[i])]
        return _block_columns(ctx, pairs, faces, bases, cols)
    rep_of, shift, per = orbits
    reps = np.unique(rep_of)
    cols = [(i, j) for i in reps for j in range(dims[i])]
    base = _block_columns(ctx, pairs, faces, bases, cols)
    col_of = {}
    pos = 0
    for i in reps:
        col_of[i] = pos
        pos += dims[i]
    # A[g, f] = K(p_g - p_f); K(d + n) = sign * K(d) along each periodic axis
    axis, plane, sign = ctx.faces
    n = ctx.grid.shape
    signs = ctx.grid.signs
    lookup = {(int(axis[f]), int(sign[f]), tuple(plane[f])): i for i, f in enumerate(faces)}
    A = np.empty((N, N))
    row_dofs = [np.arange(offsets[i], offsets[i + 1]) for i in range(len(faces))]
    for delta in {tuple(r) for r in shift}:
        delta = np.array(delta)
        members = np.flatnonzero((shift == delta).all(axis=1))
        # for each row face g, the face g0 = g - delta (wrapped) and the accumulated spin sign
        perm = np.empty(len(faces), dtype=int)
        fac = np.ones(len(faces))
        for i, f in enumerate(faces):
            p = plane[f].copy()
            for d in per:
                q = p[d] - delta[d]
                if q < 0:
                    q += n[d]
                    fac[i] *= signs[d]
                p[d] = q
            perm[i] = lookup[(int(axis[f]), int(sign[f]), tuple(p))]
        src_rows = np.concatenate([row_dofs[perm[i]] for i in range(len(faces))])
        row_fac = np.repeat(fac, dims)
        for i in members:
            c0 = col_of[rep_of[i]]
            A[:, offsets[i] : offsets[i + 1]] = row_fac[:, None] * base[src_rows, c0 : c0 + dims[i]]
    return A


def _build_full_block(ctx, faces, batch=64) -> np.ndarray:
    n_faces = ctx.grid.n_faces
    cells = ctx.grid.face_cells()
    N = len(faces) * DIM
    A = np.empty((N, N))
    for start in range(0, N, batch):
        idx = np.arange(start, min(N, start + batch))
        dens = np.zeros((len(idx), n_faces, DIM))
        dens[np.arange(len(idx)), faces[idx // DIM], idx % DIM] = 1.0
        vol = ctx.face_apply(ctx.face_weights(dens))
        tv = ctx.volume_apply(vol)
        tr = np.moveaxis(tv, -5, -1)[:, cells[faces, 0], cells[faces, 1], cells[faces, 2], cells[faces, 3]]
        A[:, idx] = tr.reshape(len(idx), N).T
    return A


def bergman_build(
    ctx: OperatorContext, lam: Optional[float] = None, reduced: bool = True, rel_lam: float = 1e-10
) -> BergmanFactorization:
    """Assemble and LU-factorise the boundary system; ``lam=None`` uses ``rel_lam * |A|_2``."""
    if ctx.grid.n_faces < 1:
        raise ValueError("the domain has no boundary faces")
    if lam is not None and lam < 0:
        raise ValueError("regularisation must be nonnegative")
    if reduced:
        faces = np.flatnonzero(~ctx.top_faces)
        comps = [MODULES.rho[0], MODULES.rho[1]]
        mats = []
        bases = []
        for rep in comps:
            b = _face_bases(ctx, faces, rep)
            bases.append(b)
            mats.append(_build_block(ctx, rep, faces, b))
    else:
        faces = np.arange(ctx.grid.n_faces)
        bases = [None]
        mats = [_build_full_block(ctx, faces)]
    blocks, conds, norms, lams = [], [], [], []
    for A in mats:
        nrm = float(estimate_spectral_norm(A)) if A.shape[0] > 1 else float(abs(A).max())
        lm = rel_lam * nrm if lam is None else float(lam)
        M = A + lm * np.eye(A.shape[0])
        lu, piv = sla.lu_factor(M, check_finite=False)
        anorm = np.linalg.norm(M, 1)
        rcond = sla.lapack.dgecon(lu, anorm, norm="1")[0]
        if not rcond > np.finfo(float).eps:
            raise BergmanSingularError(
                f"boundary system is numerically singular (rcond={rcond:.2e}); use lam > 0"
            )
        blocks.append((A, lu, piv))
        conds.append(1.0 / rcond)
        norms.append(nrm)
        lams.append(lm)
    log.info("bergman system size %d, condition estimates %s", mats[0].shape[0], conds)
    return BergmanFactorization(ctx, tuple(lams), reduced, faces, bases, blocks, tuple(conds), tuple(norms))


def bergman_P(s: Section, fac: BergmanFactorization, ctx: Optional[OperatorContext] = None) -> Section:
    """``P u = F (tr T F + lam)^-1 tr T u``."""
    ctx = fac.ctx if ctx is None else ctx
    if ctx is not fac.ctx or s.grid is not ctx.grid:
        raise ValueError("factorisation was built for a different grid/context")
    cells = ctx.grid.face_cells()[fac.faces]
    if not fac.reduced:
        tu = teodorescu(s, ctx).box()
        rhs = tu[cells[:, 0], cells[:, 1], cells[:, 2], cells[:, 3]].reshape(-1)
        A, lu, piv = fac.blocks[0]
        w = sla.lu_solve((lu, piv), rhs).reshape(-1, DIM)
        full = np.zeros((ctx.grid.n_faces, DIM))
        full[fac.faces] = w
        return cauchy(full, ctx)
    y = MODULES.split(s.box())  # (n..., 2, 2, 8)
    out = np.zeros_like(y)
    for c, rep in enumerate(MODULES.rho):
        pairs = _dense(rep)
        bases = fac.bases[c]
        A, lu, piv = fac.blocks[c]
        src = np.moveaxis(y[..., c, :, :], (-2, -1), (0, 1))  # (copies, 8, n...)
        tv = ctx.volume_apply(src, pairs)
        tr = np.moveaxis(tv, 1, -1)[:, cells[:, 0], cells[:, 1], cells[:, 2], cells[:, 3]]  # (copies, faces, 8)
        rhs = np.concatenate([tr[:, i] @ U for i, (U, _) in enumerate(bases)], axis=1)
        z = sla.lu_solve((lu, piv), rhs.T).T
        dens = np.zeros((2, ctx.grid.n_faces, rep.shape[-1]))
        pos = 0
        for i, (U, _) in enumerate(bases):
            r = U.shape[1]
            dens[:, fac.faces[i]] = z[:, pos : pos + r] @ U.T
            pos += r
        vol = ctx.face_apply(dens, pairs)
        out[..., c, :, :] = np.moveaxis(vol, (0, 1), (-2, -1))
    return Section.from_box(ctx.grid, MODULES.join(out) * ctx.grid.box_mask[..., None])


def bergman_Q(s: Section, fac: BergmanFactorization, ctx: Optional[OperatorContext] = None) -> Section:
    return s - bergman_P(s, fac, ctx)


# -- empirical operator norms ---------------------------------------------------------------


def spectral_derivative(box: np.ndarray, grid: SpaceTimeGrid, axis: int) -> np.ndarray:
    """Fourier derivative along a periodic spatial axis (spin twist handled by a half-mode shift)."""
    sign = grid.signs[axis]
    if not sign or not grid.mask.all():
        raise ValueError("spectral derivative needs a fully periodic axis")
    n = box.shape[axis]
    m = np.fft.fftfreq(n, 1.0 / n) + (0.5 if sign < 0 else 0.0)
    if n % 2 == 0 and sign > 0:
        m[n // 2] = 0.0  # the Nyquist mode has no odd derivative
    shape = [1] * box.ndim
    shape[axis] = n
    twist = np.exp(1j * np.pi * np.arange(n) / n).reshape(shape) if sign < 0 else 1.0
    spec = np.fft.fft(box * np.conj(twist), axis=axis)
    return np.real(np.fft.ifft(spec * (2j * np.pi * m).reshape(shape), axis=axis) * twist)


def smooth_probe(grid: SpaceTimeGrid, rng: np.random.Generator, max_mode: int = 1) -> Section:
    """Random trigonometric section with wavenumbers ``|m|_max <= max_mode`` and a linear time profile.

    The probe is a fixed continuum function, so norm ratios measured with it
    are comparable across resolutions.
    """
    x = grid.cell_centers
    out = np.zeros((grid.n_cells, DIM))
    half = [0.5 if s < 0 else 0.0 for s in grid.signs]
    for m in np.ndindex(*(2 * max_mode + 1,) * 3):
        freq = (np.array(m) - max_mode + np.array(half)) * 2 * np.pi
        phase = x[:, :3] @ freq + rng.uniform(0, 2 * np.pi)
        tprof = rng.standard_normal() + rng.standard_normal() * x[:, 3] / grid.spec.T
        out += np.outer(np.cos(phase) * tprof, rng.standard_normal(DIM))
    return Section(grid, out)


def operator_norm_estimates(
    ctx: OperatorContext, qs=(1.0, 2.0), derivatives=(None, 0), n_probes: int = 50, seed: int = 0
) -> dict:
    """``max ||A g||_q / ||g||_q`` over smooth random probes for ``A = T`` and ``A = d/dx_k T``.

    Keys are ``(q, k)`` with ``k = None`` for ``T`` itself.  All estimates
    share the same probes and one application of ``T`` per probe.
    """
    from .geometry import lq_norm

    rng = np.random.default_rng(seed)
    best = {(q, d): 0.0 for q in qs for d in derivatives}
    for _ in range(n_probes):
        g = smooth_probe(ctx.grid, rng)
        tg = teodorescu(g, ctx)
        for d in derivatives:
            out = tg if d is None else Section.from_box(ctx.grid, spectral_derivative(tg.box(), ctx.grid, d))
            for q in qs:
                best[q, d] = max(best[q, d], lq_norm(out, q) / lq_norm(g, q))
    return best
