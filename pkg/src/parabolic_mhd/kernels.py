"""Fundamental solutions of the parabolic Dirac operator.

The canonical operator is the Reynolds-scaled form

    D+_k = (1/sqrt(k)) sum_j e_j d/dx_j + f d/dt + fd,

whose square is the heat operator ``-Laplace/k + d/dt``.  Its fundamental
solution is ``E = D+_k Phi_k`` where ``Phi_k`` is the unit-mass heat kernel of
diffusivity ``1/k``:

    E(x, t; k) = Phi_k(x, t) * ( -(sqrt(k)/(2t)) sum_j x_j e_j
                                 + f (k|x|^2/(4t^2) - 3/(2t)) + fd ).

``E`` vanishes for ``t <= 0``, satisfies ``D+_k E = delta`` and reduces to the
kernel ``G`` of the unscaled operator at ``k = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import DIM, Multivector, Rotor, basis_index, conj, mul, rotate

__all__ = [
    "KernelSpec",
    "SpaceTimePoint",
    "KernelSingularityError",
    "heat_kernel",
    "fundamental_E",
    "fundamental_G",
    "kernel_components",
    "rotated_kernel",
    "dirac_symbol",
    "apply_dirac_fd",
    "KERNEL_SLOTS",
    "DEFAULT_SINGULAR_RADIUS",
]

DEFAULT_SINGULAR_RADIUS = 1e-9

# coefficient slots carried by E: e1, e2, e3, f, fd
KERNEL_SLOTS = np.array(
    [basis_index((1,)), basis_index((2,)), basis_index((3,)), basis_index((), "f"), basis_index((), "fd")]
)
_F = basis_index((), "f")
_FD = basis_index((), "fd")


class KernelSingularityError(ValueError):
    """Kernel requested at (or within the singular radius of) the space-time origin."""


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of the kernel family.

    ``k`` is the Reynolds-type parameter; ``singular_radius`` the distance to
    ``(0, 0)`` below which evaluation is refused.
    """

    k: float = 1.0
    singular_radius: float = DEFAULT_SINGULAR_RADIUS

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise ValueError(f"k must be a positive real, got {self.k!r}")

    @property
    def normalization(self) -> float:
        """Constant c_k in ``Phi_k = c_k t^{-3/2} exp(-k|x|^2/4t)``."""
        return (self.k / (4.0 * np.pi)) ** 1.5


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple[float, float, float]
    t: float

    @classmethod
    def of(cls, x, t) -> "SpaceTimePoint":
        return cls(tuple(float(v) for v in np.asarray(x, dtype=float).reshape(3)), float(t))


def _spec(spec_or_k) -> KernelSpec:
    if isinstance(spec_or_k, KernelSpec):
        return spec_or_k
    return KernelSpec(float(spec_or_k))


def heat_kernel(x, t, k: float = 1.0):
    """Unit-mass heat kernel ``(k/4 pi t)^{3/2} exp(-k|x|^2/4t)``; zero for ``t <= 0``.

    Accepts a single point or broadcastable arrays (``x`` with trailing axis 3).
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    val = (k / (4.0 * np.pi * ts)) ** 1.5 * np.exp(-k * r2 / (4.0 * ts))
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_components(x, t, k: float = 1.0, singular_radius: float = DEFAULT_SINGULAR_RADIUS):
    """Coefficients of ``E`` on ``(e1, e2, e3, f, fd)`` as an array ``(..., 5)``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 + t * t < singular_radius**2):
        raise KernelSingularityError("fundamental solution evaluated at the space-time origin")
    phi = np.asarray(heat_kernel(x, t, k))
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], t.shape) + (5,))
    out[..., :3] = (phi * (-np.sqrt(k) / (2.0 * ts)))[..., None] * x
    out[..., 3] = phi * (k * r2 / (4.0 * ts**2) - 1.5 / ts)
    out[..., 4] = phi
    return out


def _to_multivector_array(comp: np.ndarray) -> np.ndarray:
    out = np.zeros(comp.shape[:-1] + (DIM,))
    out[..., KERNEL_SLOTS] = comp
    return out


def fundamental_E(p, spec=1.0, t=None):
    """Fundamental solution ``E(x, t; k)`` of ``D+_k``.

    Call as ``fundamental_E(SpaceTimePoint, spec)`` for a :class:`Multivector`
    or as ``fundamental_E(x_array, k, t=t_array)`` for a coefficient array of
    shape ``(..., 32)``.
    """
    spec = _spec(spec)
    if isinstance(p, SpaceTimePoint):
        comp = kernel_components(np.array(p.x), p.t, spec.k, spec.singular_radius)
        return Multivector(_to_multivector_array(comp))
    comp = kernel_components(p, t, spec.k, spec.singular_radius)
    return _to_multivector_array(comp)


def fundamental_G(p, t=None):
    """Fundamental solution of the unscaled operator (``k = 1``)."""
    return fundamental_E(p, KernelSpec(1.0), t=t)


def rotated_kernel(a: Rotor, p: SpaceTimePoint, spec=1.0) -> Multivector:
    """``conj(a) E(a x conj(a), t; k) a``; equals ``E(x, t; k)`` for every unit rotor."""
    if not isinstance(a, Rotor):
        a = Rotor.from_array(a)
    spec = _spec(spec)
    xr = rotate(a, np.array(p.x))
    inner = fundamental_E(SpaceTimePoint.of(xr, p.t), spec)
    am = a.as_multivector().coefficients
    return Multivector(mul(mul(conj(am), inner.coefficients), am))


def dirac_symbol(k: float, convention: str = "scaled") -> tuple[float, float, float]:
    """Weights ``(spatial, time, mass)`` of ``a sum e_j d_j + b f d_t + c fd``.

    ``"scaled"`` is the canonical ``(1/sqrt(k), 1, 1)``; ``"unscaled"`` is the
    alias ``(1, 1, k)`` whose square is ``-Laplace + k d/dt``.
    """
    if convention == "scaled":
        return 1.0 / np.sqrt(k), 1.0, 1.0
    if convention == "unscaled":
        return 1.0, 1.0, float(k)
    raise ValueError(f"unknown convention {convention!r}")


def apply_dirac_fd(func, x, t, k: float, h: float, convention: str = "scaled") -> np.ndarray:
    """Central-difference ``D+_k`` applied to a multivector-valued function.

    ``func(x, t)`` must return a coefficient array of length 32; ``h`` is the
    step in every direction (space and time).
    """
    a, b, c = dirac_symbol(k, convention)
    x = np.asarray(x, dtype=float)
    out = c * mul(_to_multivector_array(np.eye(5)[4]), func(x, t))
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = h
        d = (func(x + dx, t) - func(x - dx, t)) / (2 * h)
        unit = np.zeros(5)
        unit[j] = 1.0
        out = out + a * mul(_to_multivector_array(unit), d)
    dt = (func(x, t + h) - func(x, t - h)) / (2 * h)
    out = out + b * mul(_to_multivector_array(np.eye(5)[3]), dt)
    return out
