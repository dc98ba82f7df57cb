"""Voxelised space-time domains, boundary faces, sections and norms.

Domains are products of a static spatial cell mask with a time interval
``[0, T]``.  The first ``p`` spatial axes of a toroidal/cylindrical domain are
periodic with unit period; sections on such domains obey
``f(x + e_d) = sign_d * f(x)`` with ``sign_d = -1`` on the first ``l`` axes.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .algebra import DIM
from .eisenstein import LatticeSpec

__all__ = [
    "DomainSpec",
    "BoundaryFace",
    "SpaceTimeGrid",
    "Section",
    "build_grid",
    "torus_norm",
    "project",
    "lq_norm",
    "sobolev_norm",
    "difference",
    "write_section_csv",
    "read_section_csv",
    "EmptyDomainError",
]

log = logging.getLogger(__name__)


class EmptyDomainError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Product domain ``mask x [0, T]``.

    ``lattice=None`` is flat space.  ``lower``/``upper`` give the spatial box;
    periodic axes must span exactly one unit.  ``mask`` is an optional
    callable ``mask(x) -> bool array`` evaluated at cell centres.
    """

    lattice: Optional[LatticeSpec] = None
    lower: tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: tuple[float, float, float] = (1.0, 1.0, 1.0)
    T: float = 1.0
    mask: Optional[object] = None

    def __post_init__(self):
        for d in range(self.p):
            if not np.isclose(self.upper[d] - self.lower[d], 1.0, rtol=0, atol=1e-14):
                raise ValueError(f"periodic axis {d + 1} must have extent exactly 1")
        if not self.T > 0:
            raise ValueError("time interval must have positive length")

    @property
    def p(self) -> int:
        return 0 if self.lattice is None else self.lattice.p

    @property
    def signs(self) -> tuple[int, int, int]:
        """Per-axis wrap sign; 0 marks a non-periodic axis."""
        if self.lattice is None:
            return (0, 0, 0)
        return self.lattice.axis_signs()

    @classmethod
    def unit_cube(cls, T: float = 1.0) -> "DomainSpec":
        return cls(None, T=T)

    @classmethod
    def torus(cls, p: int = 3, l: int = 0, T: float = 1.0) -> "DomainSpec":
        return cls(LatticeSpec(p, l), T=T)


@dataclass(frozen=True)
class BoundaryFace:
    center: tuple[float, float, float, float]
    normal: tuple[float, float, float, float]
    area: float
    axis: int  # 0, 1, 2 spatial or 3 temporal
    cell: tuple[int, int, int, int]  # adjacent interior cell


@dataclass(eq=False)
class SpaceTimeGrid:
    """Cell-centred grid on a :class:`DomainSpec`.

    ``mask`` has shape ``(n1, n2, n3)``; interior cells are listed in
    lexicographic ``(i1, i2, i3, it)`` order.  Faces are grouped by axis
    (spatial axes first, then time) and ordered lexicographically inside each
    group.
    """

    spec: DomainSpec
    shape: tuple[int, int, int, int]
    h: float
    tau: float
    mask: np.ndarray
    faces: list = field(repr=False)
    face_planes: dict = field(repr=False)

    @property
    def signs(self):
        return self.spec.signs

    @property
    def periodic(self) -> tuple[bool, bool, bool]:
        return tuple(s != 0 for s in self.signs)

    @property
    def cell_volume(self) -> float:
        return self.h**3 * self.tau

    @property
    def box_mask(self) -> np.ndarray:
        """Interior indicator on the full ``(n1, n2, n3, nt)`` box."""
        return np.broadcast_to(self.mask[..., None], self.shape)

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum()) * self.shape[3]

    @property
    def cell_indices(self) -> np.ndarray:
        return np.argwhere(self.box_mask)

    def axis_centers(self, d: int) -> np.ndarray:
        if d == 3:
            return (np.arange(self.shape[3]) + 0.5) * self.tau
        return self.spec.lower[d] + (np.arange(self.shape[d]) + 0.5) * self.h

    @property
    def cell_centers(self) -> np.ndarray:
        """``(n_cells, 4)`` array of ``(x1, x2, x3, t)``."""
        idx = self.cell_indices
        return np.stack([self.axis_centers(d)[idx[:, d]] for d in range(4)], axis=1)

    def box_coordinates(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*(self.axis_centers(d) for d in range(4)), indexing="ij")

    def to_box(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        out = np.zeros(self.shape + values.shape[1:], dtype=values.dtype)
        out[self.box_mask] = values
        return out

    def from_box(self, box: np.ndarray) -> np.ndarray:
        return np.asarray(box)[self.box_mask]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_cells(self) -> np.ndarray:
        return np.array([f.cell for f in self.faces], dtype=int).reshape(-1, 4)

    def face_normals(self) -> np.ndarray:
        return np.array([f.normal for f in self.faces]).reshape(-1, 4)

    def face_areas(self) -> np.ndarray:
        return np.array([f.area for f in self.faces])

    def face_centers(self) -> np.ndarray:
        return np.array([f.center for f in self.faces]).reshape(-1, 4)


def build_grid(spec: DomainSpec, resolution: Sequence[int]) -> SpaceTimeGrid:
    """Voxelise ``spec``; ``resolution`` is ``n`` (cube, ``nt = n``), ``(n, nt)`` or ``(n1, n2, n3, nt)``."""
    res = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(res) == 1:
        res = res * 4
    elif len(res) == 2:
        res = (res[0],) * 3 + (res[1],)
    if len(res) != 4 or min(res) < 2:
        raise ValueError("resolution must be >= 2 along every axis")
    steps = [(spec.upper[d] - spec.lower[d]) / res[d] for d in range(3)]
    if not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        raise ValueError(f"spatial cells must be cubes, got steps {steps}")
    h = steps[0]
    tau = spec.T / res[3]
    centers = np.meshgrid(*(spec.lower[d] + (np.arange(res[d]) + 0.5) * h for d in range(3)), indexing="ij")
    if spec.mask is None:
        mask = np.ones(res[:3], dtype=bool)
    else:
        mask = np.asarray(spec.mask(np.stack(centers, axis=-1)), dtype=bool).reshape(res[:3])
    if not mask.any():
        raise EmptyDomainError("domain has no interior cell")

    faces: list[BoundaryFace] = []
    planes: dict = {}
    periodic = [s != 0 for s in spec.signs]
    nt = res[3]
    for d in range(3):
        # plane f separates cells f-1 and f along axis d; value +1/-1 is the outward normal
        n = res[d]
        padded = np.zeros(tuple(res[a] + 2 if a == d else res[a] for a in range(3)), dtype=bool)
        sl = [slice(None)] * 3
        sl[d] = slice(1, n + 1)
        padded[tuple(sl)] = mask
        if periodic[d]:
            sl_lo = [slice(None)] * 3
            sl_lo[d] = slice(0, 1)
            sl_src = [slice(None)] * 3
            sl_src[d] = slice(n - 1, n)
            padded[tuple(sl_lo)] = mask[tuple(sl_src)]
            sl_hi = [slice(None)] * 3
            sl_hi[d] = slice(n + 1, n + 2)
            sl_src[d] = slice(0, 1)
            padded[tuple(sl_hi)] = mask[tuple(sl_src)]
        below = np.take(padded, range(0, n + 1), axis=d)
        above = np.take(padded, range(1, n + 2), axis=d)
        orient = below.astype(int) - above.astype(int)  # +1: interior below the plane
        if periodic[d]:
            # the plane at the far end duplicates plane 0
            orient = np.take(orient, range(0, n), axis=d)
            orient = np.concatenate([orient, np.zeros_like(np.take(orient, [0], axis=d))], axis=d)
        planes[d] = orient
        for idx in np.argwhere(orient != 0):
            sgn = int(orient[tuple(idx)])
            cell = list(idx)
            if sgn > 0:
                cell[d] = (idx[d] - 1) % n
            for it in range(nt):
                c = [spec.lower[a] + (idx[a] + 0.5) * h for a in range(3)]
                c[d] = spec.lower[d] + idx[d] * h
                normal = [0.0, 0.0, 0.0, 0.0]
                normal[d] = float(sgn)
                faces.append(
                    BoundaryFace(
                        center=(c[0], c[1], c[2], (it + 0.5) * tau),
                        normal=tuple(normal),
                        area=h * h * tau,
                        axis=d,
                        cell=(int(cell[0]), int(cell[1]), int(cell[2]), it),
                    )
                )
    tplane = np.zeros(res[:3] + (nt + 1,), dtype=int)
    tplane[..., 0] = -mask.astype(int)
    tplane[..., nt] = mask
    planes[3] = tplane
    for ft, sgn, it in ((0, -1.0, 0), (nt, 1.0, nt - 1)):
        for idx in np.argwhere(mask):
            c = [spec.lower[a] + (idx[a] + 0.5) * h for a in range(3)]
            faces.append(
                BoundaryFace(
                    center=(c[0], c[1], c[2], ft * tau),
                    normal=(0.0, 0.0, 0.0, sgn),
                    area=h**3,
                    axis=3,
                    cell=(int(idx[0]), int(idx[1]), int(idx[2]), it),
                )
            )
    return SpaceTimeGrid(spec, res, h, tau, mask, faces, planes)


# -- sections ---------------------------------------------------------------


@dataclass(eq=False)
class Section:
    """Algebra-valued function on the interior cells of a grid.

    ``values`` has shape ``(n_cells, 32)``; optional ``face_values`` has shape
    ``(n_faces, 32)`` and carries trace data.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    face_values: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells, DIM):
            raise ValueError(f"expected values of shape {(self.grid.n_cells, DIM)}, got {self.values.shape}")
        if self.face_values is not None:
            self.face_values = np.asarray(self.face_values, dtype=float)
            if self.face_values.shape != (self.grid.n_faces, DIM):
                raise ValueError("face values do not match the face count")

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "Section":
        return cls(grid, np.zeros((grid.n_cells, DIM)))

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, func) -> "Section":
        """Sample ``func(x, t) -> (..., 32)`` at cell centres (and face centres)."""
        cc = grid.cell_centers
        fc = grid.face_centers()
        return cls(grid, func(cc[:, :3], cc[:, 3]), func(fc[:, :3], fc[:, 3]) if len(fc) else None)

    @classmethod
    def from_box(cls, grid: SpaceTimeGrid, box: np.ndarray) -> "Section":
        return cls(grid, grid.from_box(box))

    def box(self) -> np.ndarray:
        return self.grid.to_box(self.values)

    def __add__(self, other: "Section") -> "Section":
        return Section(self.grid, self.values + other.values)

    def __sub__(self, other: "Section") -> "Section":
        return Section(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Section":
        return Section(self.grid, c * self.values)

    __rmul__ = __mul__

    def periodic_extension(self, omega) -> np.ndarray:
        """Values of the section translated by the lattice vector ``omega`` (spin sign applied)."""
        sign = 1.0
        for d, w in enumerate(np.asarray(omega, dtype=int)):
            if w and self.grid.signs[d] == 0:
                raise ValueError("translation along a non-periodic axis")
            if self.grid.signs[d] < 0 and w % 2:
                sign = -sign
        return sign * self.values


# -- manifold geometry ------------------------------------------------------


def project(point, lat: LatticeSpec):
    """Representative with the periodic coordinates reduced to ``[0, 1)``."""
    from .kernels import SpaceTimePoint

    if isinstance(point, SpaceTimePoint):
        x = np.array(point.x)
        x[: lat.p] = np.mod(x[: lat.p], 1.0)
        x[: lat.p] = np.where(x[: lat.p] >= 1.0, 0.0, x[: lat.p])
        return SpaceTimePoint.of(x, point.t)
    x = np.array(point, dtype=float)
    x[..., : lat.p] = np.mod(x[..., : lat.p], 1.0)
    return x


def torus_norm(point, lat: LatticeSpec, q: float = 2.0) -> float:
    """``min_w ||(x + w, t)||_q`` over the lattice ``Omega_p``."""
    from .kernels import SpaceTimePoint

    if isinstance(point, SpaceTimePoint):
        x, t = np.array(point.x), point.t
    else:
        x, t = np.asarray(point[:3], dtype=float), float(point[3])
    y = x.copy()
    y[: lat.p] = y[: lat.p] - np.round(y[: lat.p])
    v = np.abs(np.append(y, t))
    if np.isinf(q):
        return float(v.max())
    return float(np.sum(v**q) ** (1.0 / q))


# -- norms and differences --------------------------------------------------


def difference(box: np.ndarray, grid: SpaceTimeGrid, axis: int, diagnostics: Optional[dict] = None) -> np.ndarray:
    """Derivative along a spatial axis (0-2) or time (3) of a box array ``(n1, n2, n3, nt, ...)``.

    Spatial axes: central differences, periodic wrap with the spin sign on torus
    axes, second-order one-sided at the edges of the mask.  Time: backward
    differences (forward on the first layer).
    """
    box = np.asarray(box)
    mask = grid.box_mask
    extra = (Ellipsis,) + (None,) * (box.ndim - 4)
    if axis == 3:
        out = np.empty_like(box)
        out[:, :, :, 1:] = (box[:, :, :, 1:] - box[:, :, :, :-1]) / grid.tau
        out[:, :, :, :1] = (box[:, :, :, 1:2] - box[:, :, :, :1]) / grid.tau
        return out
    h = grid.h
    sign = grid.signs[axis]
    if sign:
        fwd = np.roll(box, -1, axis=axis)
        bwd = np.roll(box, 1, axis=axis)
        n = box.shape[axis]
        if sign < 0:
            idx_last = [slice(None)] * box.ndim
            idx_last[axis] = slice(n - 1, n)
            fwd[tuple(idx_last)] *= -1
            idx_first = [slice(None)] * box.ndim
            idx_first[axis] = slice(0, 1)
            bwd[tuple(idx_first)] *= -1
        m_f = np.roll(mask, -1, axis=axis)
        m_b = np.roll(mask, 1, axis=axis)
        if mask.all():
            return (fwd - bwd) / (2 * h)
        fwd2 = np.roll(fwd, -1, axis=axis)
        bwd2 = np.roll(bwd, 1, axis=axis)
        m_f2 = np.roll(m_f, -1, axis=axis)
        m_b2 = np.roll(m_b, 1, axis=axis)
    else:
        pad = [(0, 0)] * box.ndim
        pad[axis] = (2, 2)
        padded = np.pad(box, pad)
        mpad = np.pad(mask, [(2, 2) if a == axis else (0, 0) for a in range(4)])
        n = box.shape[axis]

        def take(arr, shift):
            return np.take(arr, range(2 + shift, 2 + shift + n), axis=axis)

        fwd, bwd, fwd2, bwd2 = (take(padded, s) for s in (1, -1, 2, -2))
        m_f, m_b, m_f2, m_b2 = (take(mpad, s) for s in (1, -1, 2, -2))
    central = m_f & m_b
    one_f2 = ~central & m_f & m_f2
    one_b2 = ~central & m_b & m_b2
    one_f1 = ~central & ~one_f2 & m_f
    one_b1 = ~central & ~one_b2 & ~m_f & m_b
    out = np.zeros_like(box)
    out = np.where(central[extra], (fwd - bwd) / (2 * h), out)
    out = np.where(one_f2[extra], (-3 * box + 4 * fwd - fwd2) / (2 * h), out)
    out = np.where(one_b2[extra], (3 * box - 4 * bwd + bwd2) / (2 * h), out)
    out = np.where(one_f1[extra], (fwd - box) / h, out)
    out = np.where(one_b1[extra], (box - bwd) / h, out)
    edge = mask & ~central
    if diagnostics is not None and edge.any():
        diagnostics["one_sided"] = True
    return np.where(mask[extra], out, 0.0)


def _pointwise_norm(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    return np.abs(values) if values.ndim == 1 else np.linalg.norm(values, axis=-1)


def lq_norm(s: Section, q: float = 2.0) -> float:
    """Discrete ``L_q`` norm ``(sum |value|^q * h^3 tau)^(1/q)`` (``q = inf`` gives the max)."""
    a = _pointwise_norm(s.values)
    if np.isinf(q):
        return float(a.max(initial=0.0))
    if q < 1:
        raise ValueError("q must be >= 1")
    return float(np.sum(a**q * s.grid.cell_volume) ** (1.0 / q))


def sobolev_norm(s: Section, k_x: int, k_t: int, q: float = 2.0, diagnostics: Optional[dict] = None) -> float:
    """Discrete ``W^{k_x, k_t}_q`` norm: L_q plus all mixed differences up to the given orders."""
    if np.isinf(q):
        raise ValueError("Sobolev norms need q < inf")
    grid = s.grid
    diag = {} if diagnostics is None else diagnostics
    total = lq_norm(s, q) ** q
    base = s.box()
    for alpha in itertools.product(range(k_x + 1), repeat=3):
        if sum(alpha) > k_x:
            continue
        for beta in range(k_t + 1):
            if sum(alpha) + beta == 0:
                continue
            d = base
            for axis, order in enumerate(alpha):
                for _ in range(order):
                    d = difference(d, grid, axis, diag)
            for _ in range(beta):
                d = difference(d, grid, 3, diag)
            total += lq_norm(Section.from_box(grid, d), q) ** q
    if diag.get("one_sided"):
        log.info("sobolev_norm used one-sided differences at the domain edge")
    return float(total ** (1.0 / q))


# -- CSV exchange -----------------------------------------------------------

CSV_HEADER = ["i1", "i2", "i3", "it", "x1", "x2", "x3", "t"] + [f"c{n}" for n in range(DIM)]


def write_section_csv(s: Section, path) -> None:
    idx = s.grid.cell_indices
    cc = s.grid.cell_centers
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i, c, v in zip(idx, cc, s.values):
            w.writerow([*map(int, i), *map(repr, map(float, c)), *map(repr, map(float, v))])


def read_section_csv(grid: SpaceTimeGrid, path) -> Section:
    box = np.zeros(grid.shape + (DIM,))
    seen = np.zeros(grid.shape, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError("unexpected section CSV header")
        for row in reader:
            i = tuple(int(v) for v in row[:4])
            box[i] = [float(v) for v in row[8:]]
            seen[i] = True
    if not np.array_equal(seen, grid.box_mask):
        raise ValueError("section CSV does not cover exactly the interior cells of the grid")
    return Section.from_box(grid, box)
