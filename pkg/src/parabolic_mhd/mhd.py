"""Quaternionic fixed-point solver for incompressible viscous MHD.

One outer step of the scheme, with ``TQT = T Q T`` built from the kernel of
the respective Reynolds number, reads::

    Re(Q T grad p_n)  = (1/mu0) Re(Q T [L(B) - C(u)])           (n - 1 data)
    u_n               = (Re/mu0) TQT [L(B) - C(u)] - Re^2 TQT grad p_n + F(u data)
    B_n^(i)           = Rm^2 TQT [(B^(i-1).grad) u_n - (u_n.grad) B^(i-1)] + F(B data)

where ``L(B) = rot B x B`` and ``C(u) = (u.grad) u``.  Boundary and initial
data enter through the Cauchy transform of their trace, and every update is
projected back onto the vector blades.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import lsqr

from .algebra import DIM, VECTOR_SLOTS
from .geometry import DomainSpec, Section, SpaceTimeGrid, build_grid, lq_norm
from .kernels import KernelSpec
from .eisenstein import LatticeSpec
from .operators import (
    BergmanFactorization,
    OperatorContext,
    bergman_build,
    bergman_Q,
    cauchy,
    curl,
    divergence,
    teodorescu,
)

__all__ = [
    "MHDConfig",
    "MHDState",
    "BoundaryData",
    "MHDOperators",
    "MHDSolver",
    "SolverDivergenceError",
    "PressureSolveError",
    "InnerIterationError",
    "convective",
    "lorentz",
    "magnetic_bracket",
    "pressure_matrix",
    "pressure_step",
    "velocity_step",
    "magnetic_step",
    "build_operators",
    "solve",
    "parse_config",
    "load_config",
    "RunConfig",
]

log = logging.getLogger(__name__)

MODES = ("paper-literal", "corrected")
GROUPINGS = ("whole", "printed")


class SolverDivergenceError(RuntimeError):
    """Outer residual grew over consecutive steps; ``history`` holds the run log."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class PressureSolveError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class InnerIterationError(RuntimeError):
    def __init__(self, message, ratio):
        super().__init__(message)
        self.ratio = ratio


@dataclass(frozen=True)
class MHDConfig:
    """Physical parameters and iteration controls.

    ``mode="corrected"`` replaces the prefactor of the convective term by
    ``convective_prefactor``; ``pressure_grouping="printed"`` applies ``Q T``
    to the Lorentz term only on the right-hand side of the pressure equation.
    """

    Re: float = 1.0
    Rm: float = 1.0
    mu0: float = 1.0
    outer_tol: float = 1e-10
    inner_tol: float = 1e-10
    max_outer: int = 20
    max_inner: int = 20
    mode: str = "paper-literal"
    convective_prefactor: float = 1.0
    pressure_grouping: str = "whole"
    pressure_tol: float = 1e-12
    pressure_maxiter: int = 20000
    kernel_tol: float = 1e-10
    magnetics: bool = True

    def __post_init__(self):
        for name in ("Re", "Rm", "mu0", "outer_tol", "inner_tol", "pressure_tol", "kernel_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive real, got {v!r}")
        if self.max_outer < 1 or self.max_inner < 1 or self.pressure_maxiter < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.pressure_grouping not in GROUPINGS:
            raise ValueError(f"pressure_grouping must be one of {GROUPINGS}")

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        """Prefactors ``(lorentz, convective, pressure, magnetic)`` of the update lines."""
        lc = self.Re / self.mu0
        cc = lc if self.mode == "paper-literal" else self.convective_prefactor
        return lc, cc, self.Re**2, self.Rm**2


@dataclass(eq=False)
class MHDState:
    u: Section
    B: Section
    p: Section
    history: list = field(default_factory=list)  # (n, du, dB, div u, div B)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.history)


def _vector_faces(grid: SpaceTimeGrid, values) -> np.ndarray:
    if values is None:
        return np.zeros((grid.n_faces, 3))
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_faces, 3):
        raise ValueError(f"face data must have shape {(grid.n_faces, 3)}")
    return values


def _face_kinds(grid: SpaceTimeGrid):
    normals = grid.face_normals()
    bottom = normals[:, 3] < 0
    top = normals[:, 3] > 0
    return bottom, top, ~(bottom | top)


@dataclass(eq=False)
class BoundaryData:
    """Velocity and magnetic boundary/initial values on the faces, shape ``(n_faces, 3)``.

    ``u0``/``B0`` live on the ``t = 0`` faces, ``h`` on the lateral faces and
    ``g`` (the lateral velocity) must vanish.
    """

    grid: SpaceTimeGrid
    u0: Optional[np.ndarray] = None
    B0: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def __post_init__(self):
        bottom, _, lateral = _face_kinds(self.grid)
        self.u0 = _vector_faces(self.grid, self.u0) * bottom[:, None]
        self.B0 = _vector_faces(self.grid, self.B0) * bottom[:, None]
        self.h = _vector_faces(self.grid, self.h) * lateral[:, None]
        self.g = _vector_faces(self.grid, self.g)
        if np.any(self.g != 0):
            raise ValueError("the lateral velocity trace g must vanish")

    @classmethod
    def from_functions(cls, grid: SpaceTimeGrid, u0=None, B0=None, h=None) -> "BoundaryData":
        """Evaluate ``f(x, t) -> (..., 3)`` callables at the face centres."""
        fc = grid.face_centers()

        def ev(f):
            return None if f is None else np.asarray(f(fc[:, :3], fc[:, 3]), dtype=float).reshape(-1, 3)

        return cls(grid, ev(u0), ev(B0), ev(h))

    def velocity_trace(self) -> np.ndarray:
        return _embed_faces(self.u0 + self.g)

    def magnetic_trace(self) -> np.ndarray:
        return _embed_faces(self.B0 + self.h)

    def divergence_compatibility(self) -> float:
        """Net flux of ``h`` through the lateral boundary per unit time (logged only)."""
        _, _, lateral = _face_kinds(self.grid)
        n = self.grid.face_normals()[:, :3]
        a = self.grid.face_areas()
        return float(np.sum(np.einsum("fi,fi->f", self.h, n) * a * lateral) / self.grid.spec.T)


def _embed_faces(vec: np.ndarray) -> np.ndarray:
    out = np.zeros((len(vec), DIM))
    out[:, VECTOR_SLOTS] = vec
    return out


# -- pointwise nonlinear terms ---------------------------------------------------------


def _vector_box(s: Section) -> np.ndarray:
    return s.box()[..., VECTOR_SLOTS]


def _vector_section(grid: SpaceTimeGrid, box: np.ndarray) -> Section:
    out = np.zeros(box.shape[:-1] + (DIM,))
    out[..., VECTOR_SLOTS] = box
    return Section.from_box(grid, out)


def _vec(s: Section) -> Section:
    out = np.zeros_like(s.values)
    out[:, VECTOR_SLOTS] = s.values[:, VECTOR_SLOTS]
    return Section(s.grid, out)


def _scalar_section(grid: SpaceTimeGrid, values: np.ndarray) -> Section:
    out = np.zeros((grid.n_cells, DIM))
    out[:, 0] = values
    return Section(grid, out)


def _check_vector(s: Section, name: str):
    other = np.delete(s.values, VECTOR_SLOTS, axis=1)
    if np.any(other != 0):
        raise ValueError(f"{name} must be vector-valued")


def convective(u: Section, w: Section, ctx=None) -> Section:
    """``(u . grad) w`` by central differences (periodic wrap on torus axes)."""
    _check_vector(u, "u")
    _check_vector(w, "w")
    grid = u.grid
    from .geometry import difference

    ub, wb = _vector_box(u), _vector_box(w)
    out = sum(ub[..., j, None] * difference(wb, grid, j) for j in range(3))
    return _vector_section(grid, out)


def lorentz(B: Section, ctx=None) -> Section:
    """``rot B x B``; the ``1/mu0`` factor is left to the caller."""
    _check_vector(B, "B")
    b = _vector_box(B)
    return _vector_section(B.grid, np.cross(curl(b, B.grid), b))


def magnetic_bracket(u: Section, B: Section) -> Section:
    """``(B . grad) u - (u . grad) B``; antisymmetric in its arguments."""
    return convective(B, u) - convective(u, B)


def _div_norm(s: Section) -> float:
    d = divergence(_vector_box(s), s.grid)
    return lq_norm(_scalar_section(s.grid, s.grid.from_box(d)))


# -- operator bundle ----------------------------------------------------------------------


@dataclass(eq=False)
class MHDOperators:
    """Contexts and Bergman factorisations for the velocity (``k = Re``) and magnetic (``k = Rm``) kernels."""

    grid: SpaceTimeGrid
    ctx_u: OperatorContext
    fac_u: BergmanFactorization
    ctx_B: OperatorContext
    fac_B: BergmanFactorization
    _pressure: Optional[np.ndarray] = None

    def tqt(self, s: Section, which: str = "u") -> Section:
        ctx, fac = (self.ctx_u, self.fac_u) if which == "u" else (self.ctx_B, self.fac_B)
        return teodorescu(bergman_Q(teodorescu(s, ctx), fac, ctx), ctx)

    def qt(self, s: Section) -> Section:
        return bergman_Q(teodorescu(s, self.ctx_u), self.fac_u, self.ctx_u)

    @property
    def pressure(self) -> np.ndarray:
        if self._pressure is None:
            self._pressure = pressure_matrix(self)
        return self._pressure


def build_operators(grid: SpaceTimeGrid, cfg: MHDConfig, lam: Optional[float] = None) -> MHDOperators:
    kind = "flat" if grid.spec.lattice is None else "periodized"
    ctx_u = OperatorContext(grid, KernelSpec(cfg.Re), kind=kind, tol=cfg.kernel_tol)
    fac_u = bergman_build(ctx_u, lam)
    if cfg.Rm == cfg.Re:
        ctx_B, fac_B = ctx_u, fac_u
    else:
        ctx_B = OperatorContext(grid, KernelSpec(cfg.Rm), kind=kind, tol=cfg.kernel_tol)
        fac_B = bergman_build(ctx_B, lam)
    return MHDOperators(grid, ctx_u, fac_u, ctx_B, fac_B)


# -- pressure ------------------------------------------------------------------------------


def _gradient_section(grid: SpaceTimeGrid, p: np.ndarray) -> Section:
    from .operators import gradient

    return _vector_section(grid, gradient(grid.to_box(p), grid))


def _pressure_apply(ops: MHDOperators, p: np.ndarray) -> np.ndarray:
    return ops.qt(_gradient_section(ops.grid, p)).values[:, 0]


def _translation_axes(grid: SpaceTimeGrid) -> list[int]:
    if not grid.mask.all():
        return []
    return [d for d in range(3) if grid.signs[d] > 0]


def pressure_matrix(ops: MHDOperators) -> np.ndarray:
    """Dense matrix of ``p -> Re(Q T grad p)`` on the cell list.

    On periodic axes without spin twist the map commutes with cell
    translations, so only impulses at index 0 along those axes are applied and
    the remaining columns are obtained by rolling.
    """
    grid = ops.grid
    axes = _translation_axes(grid)
    n = grid.n_cells
    A = np.zeros((n, n))
    if not axes:
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            A[:, j] = _pressure_apply(ops, e)
        return A
    shape = grid.shape
    col_index = np.arange(n).reshape(shape)
    reps = [range(1) if d in axes else range(shape[d]) for d in range(4)]
    import itertools

    for rep in itertools.product(*reps):
        e = np.zeros(shape)
        e[rep] = 1.0
        resp = _pressure_apply(ops, e.reshape(-1)).reshape(shape)
        for shift in itertools.product(*[range(shape[d]) if d in axes else range(1) for d in range(3)]):
            moved = np.roll(resp, shift, axis=(0, 1, 2))
            target = tuple(rep[d] + shift[d] if d < 3 else rep[3] for d in range(4))
            A[:, col_index[target]] = moved.reshape(-1)
    return A


def _slice_mean_zero(grid: SpaceTimeGrid, p: np.ndarray) -> np.ndarray:
    box = grid.to_box(p)
    cnt = grid.mask.sum()
    means = box.sum(axis=(0, 1, 2)) / cnt
    return grid.from_box(box - means * grid.box_mask)


def pressure_rhs(ops: MHDOperators, u: Section, B: Section, cfg: MHDConfig) -> np.ndarray:
    lc, cc, _, _ = cfg.coefficients
    L = lorentz(B) if cfg.magnetics else Section.zeros(ops.grid)
    C = convective(u, u)
    if cfg.pressure_grouping == "whole":
        return ops.qt(lc * L - cc * C).values[:, 0] / cfg.Re
    return (ops.qt(lc * L) - cc * C).values[:, 0] / cfg.Re


def pressure_step(state: MHDState, ops: MHDOperators, cfg: MHDConfig, rhs: Optional[np.ndarray] = None) -> Section:
    """Least-squares solve of ``Re(Q T grad p) = rhs``; the result has zero mean on every time slice."""
    grid = ops.grid
    b = pressure_rhs(ops, state.u, state.B, cfg) if rhs is None else np.asarray(rhs, dtype=float)
    if not np.any(b):
        return Section.zeros(grid)
    A = ops.pressure
    res = lsqr(A, b, atol=cfg.pressure_tol, btol=cfg.pressure_tol, iter_lim=cfg.pressure_maxiter)
    x, istop, itn, r1 = res[0], res[1], res[2], res[3]
    if istop == 7:
        raise PressureSolveError(f"pressure solve stopped after {itn} iterations (residual {r1:.3e})", r1)
    return _scalar_section(grid, _slice_mean_zero(grid, x))


def velocity_step(state: MHDState, p: Section, ops: MHDOperators, cfg: MHDConfig, bdata: BoundaryData) -> Section:
    lc, cc, pc, _ = cfg.coefficients
    grid = ops.grid
    L = lorentz(state.B) if cfg.magnetics else Section.zeros(grid)
    C = convective(state.u, state.u)
    grad_p = _gradient_section(grid, p.values[:, 0])
    upd = ops.tqt(lc * L - cc * C - pc * grad_p, "u")
    return _vec(upd + cauchy(bdata.velocity_trace(), ops.ctx_u))


def magnetic_step(state: MHDState, u: Section, ops: MHDOperators, cfg: MHDConfig, bdata: BoundaryData) -> Section:
    """Inner fixed point for ``B_n`` seeded with ``state.B``."""
    if not cfg.magnetics:
        return Section.zeros(ops.grid)
    mc = cfg.coefficients[3]
    base = _vec(cauchy(bdata.magnetic_trace(), ops.ctx_B))
    B = state.B
    prev_diff = None
    ratio = float("nan")
    for _ in range(cfg.max_inner):
        new = _vec(ops.tqt(mc * magnetic_bracket(u, B), "B") + base)
        diff = lq_norm(new - B)
        if prev_diff:
            ratio = diff / prev_diff
        B = new
        if diff <= cfg.inner_tol * lq_norm(new):
            return B
        prev_diff = diff
    raise InnerIterationError(
        f"magnetic iteration did not converge in {cfg.max_inner} steps (last contraction ratio {ratio:.3g})", ratio
    )


def solve(
    cfg: MHDConfig,
    bdata: BoundaryData,
    ops: Optional[MHDOperators] = None,
    callback: Optional[Callable[[int, MHDState], None]] = None,
) -> MHDState:
    """Run outer iterations until ``|du| + |dB| <= outer_tol`` or ``max_outer``."""
    grid = bdata.grid
    if ops is None:
        ops = build_operators(grid, cfg)
    if ops.grid is not grid:
        raise ValueError("boundary data and operators live on different grids")
    log.info("lateral flux of h: %.3e", bdata.divergence_compatibility())
    u = _vec(cauchy(bdata.velocity_trace(), ops.ctx_u))
    B = _vec(cauchy(bdata.magnetic_trace(), ops.ctx_B)) if cfg.magnetics else Section.zeros(grid)
    state = MHDState(u, B, Section.zeros(grid))
    if callback:
        callback(0, state)
    growth = 0
    last = math.inf
    for n in range(1, cfg.max_outer + 1):
        p = pressure_step(state, ops, cfg)
        u_new = velocity_step(state, p, ops, cfg, bdata)
        B_new = magnetic_step(state, u_new, ops, cfg, bdata)
        du, dB = lq_norm(u_new - state.u), lq_norm(B_new - state.B)
        state = MHDState(u_new, B_new, p, state.history + [(n, du, dB, _div_norm(u_new), _div_norm(B_new))])
        if callback:
            callback(n, state)
        r = du + dB
        log.debug("outer %d: du=%.3e dB=%.3e", n, du, dB)
        if r <= cfg.outer_tol:
            state.converged = True
            return state
        growth = growth + 1 if r > last else 0
        last = r
        if growth >= 5:
            raise SolverDivergenceError("outer residual grew over 5 consecutive steps", state.history)
    return state


class MHDSolver:
    """Estimator-style wrapper: parameters in the constructor, ``fit`` runs the solve.

    After ``fit`` the attributes ``state_``, ``history_`` and ``operators_``
    are available.
    """

    def __init__(self, config: Optional[MHDConfig] = None, **params):
        self.config = replace(config or MHDConfig(), **params)

    def get_params(self) -> dict:
        return {f.name: getattr(self.config, f.name) for f in fields(self.config)}

    def set_params(self, **params) -> "MHDSolver":
        self.config = replace(self.config, **params)
        return self

    def fit(self, bdata: BoundaryData, operators: Optional[MHDOperators] = None) -> "MHDSolver":
        self.operators_ = operators or build_operators(bdata.grid, self.config)
        self.state_ = solve(self.config, bdata, self.operators_)
        self.history_ = list(self.state_.history)
        return self


# -- configuration files ------------------------------------------------------------------

_KEYS = {
    "domain.p": int,
    "domain.l": int,
    "grid.n": int,
    "grid.nt": int,
    "time.T": float,
    "mhd.Re": float,
    "mhd.Rm": float,
    "mhd.mu0": float,
    "solver.outer_tol": float,
    "solver.inner_tol": float,
    "solver.max_outer": int,
    "solver.max_inner": int,
    "kernel.tol": float,
    "mode": str,
    "data.u0": str,
    "data.B0": str,
    "data.perturbation": float,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a config file describes: domain, grid, solver parameters and data."""

    mhd: MHDConfig
    p: int = 3
    l: int = 0
    n: int = 8
    nt: int = 8
    T: float = 1.0
    u0: tuple = (0.0, 0.0, 0.0)
    B0: tuple = (0.0, 0.0, 0.0)
    perturbation: float = 0.0

    def domain(self) -> DomainSpec:
        if self.p == 0:
            return DomainSpec.unit_cube(self.T)
        return DomainSpec(LatticeSpec(self.p, self.l), T=self.T)

    def grid(self) -> SpaceTimeGrid:
        return build_grid(self.domain(), (self.n, self.nt))

    def boundary_data(self, grid: SpaceTimeGrid) -> BoundaryData:
        u0 = np.asarray(self.u0, dtype=float)
        b0 = np.asarray(self.B0, dtype=float)
        eps = self.perturbation

        def B_init(x, t):
            return b0 + eps * _perturbation(x)

        return BoundaryData.from_functions(grid, u0=lambda x, t: np.broadcast_to(u0, x.shape), B0=B_init)

    def snapshot(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "mhd"}
        d["mhd"] = {f.name: getattr(self.mhd, f.name) for f in fields(self.mhd)}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _perturbation(x: np.ndarray) -> np.ndarray:
    """Fixed smooth solenoidal field mixing wavenumbers 1 and 2 across axes.

    Component ``j`` does not depend on ``x_j``, so the central-difference
    divergence vanishes exactly.
    """
    s = np.sin(2 * np.pi * x)
    s2 = np.sin(4 * np.pi * x)
    c = np.cos(2 * np.pi * x)
    c2 = np.cos(4 * np.pi * x)
    return np.stack(
        [
            s[:, 1] + 0.5 * s2[:, 1] * c[:, 2],
            s[:, 2] + 0.3 * s[:, 0] * c2[:, 2],
            s[:, 0] + 0.7 * c[:, 1] * s2[:, 0],
        ],
        axis=-1,
    )


def _vector(text: str) -> tuple:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(parts)


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); unknown keys are rejected."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            raw[key] = _KEYS[key](value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    mhd_kw = {}
    for key, name in [
        ("mhd.Re", "Re"),
        ("mhd.Rm", "Rm"),
        ("mhd.mu0", "mu0"),
        ("solver.outer_tol", "outer_tol"),
        ("solver.inner_tol", "inner_tol"),
        ("solver.max_outer", "max_outer"),
        ("solver.max_inner", "max_inner"),
        ("kernel.tol", "kernel_tol"),
        ("mode", "mode"),
    ]:
        if key in raw:
            mhd_kw[name] = raw[key]
    run = RunConfig(
        MHDConfig(**mhd_kw),
        p=raw.get("domain.p", 3),
        l=raw.get("domain.l", 0),
        n=raw.get("grid.n", 8),
        nt=raw.get("grid.nt", raw.get("grid.n", 8)),
        T=raw.get("time.T", 1.0),
        u0=_vector(raw["data.u0"]) if "data.u0" in raw else (0.0, 0.0, 0.0),
        B0=_vector(raw["data.B0"]) if "data.B0" in raw else (0.0, 0.0, 0.0),
        perturbation=raw.get("data.perturbation", 0.0),
    )
    if not (0 <= run.l <= run.p <= 3):
        raise ValueError("need 0 <= domain.l <= domain.p <= 3")
    if run.n < 3 or run.nt < 1:
        raise ValueError("grid.n must be >= 3 and grid.nt >= 1")
    return run


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def write_state_csv(state: MHDState, path) -> None:
    """Cell indices and centres followed by ``u1 u2 u3 B1 B2 B3 p``."""
    import csv

    grid = state.u.grid
    idx = grid.cell_indices
    cc = grid.cell_centers
    u = state.u.values[:, VECTOR_SLOTS]
    B = state.B.values[:, VECTOR_SLOTS]
    p = state.p.values[:, 0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i1", "i2", "i3", "it", "x1", "x2", "x3", "t", "u1", "u2", "u3", "B1", "B2", "B3", "p"])
        for j in range(grid.n_cells):
            w.writerow([*map(int, idx[j]), *map(repr, map(float, cc[j])), *map(repr, map(float, u[j])),
                        *map(repr, map(float, B[j])), repr(float(p[j]))])


def write_history_csv(state: MHDState, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "du", "dB", "divu", "divB"])
        for n, du, dB, du_div, dB_div in state.history:
            w.writerow([n, repr(float(du)), repr(float(dB)), repr(float(du_div)), repr(float(dB_div))])
