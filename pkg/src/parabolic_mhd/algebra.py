"""Quaternion/Witt algebra used by the parabolic Dirac calculus.

The algebra is the 32-dimensional real algebra generated by the quaternionic
units ``e1, e2, e3`` and the Witt pair ``f, fd`` (``f`` is nilpotent, ``fd`` its
dual).  It is realised inside the Clifford algebra on five generators with
squares ``(-1, -1, -1, +1, -1)`` through

    f  = (e4 + e5) / 2,      fd = (e4 - e5) / 2,

so that ``f**2 = fd**2 = 0``, ``f fd + fd f = 1`` and ``e_j`` anticommutes with
both ``f`` and ``fd``.

Coefficients are stored in the basis ``e_A * w`` with ``A`` an ordered subset of
``{1, 2, 3}`` and ``w`` one of ``1, f, fd, f fd``.  The flat index of ``e_A * w``
is ``4 * BLADES.index(A) + WITT.index(w)``.

Module-level arrays ``STRUCTURE`` (the structure constants) and ``LEFT`` (the
left-multiplication matrices of every basis element) make the product of
coefficient arrays a single ``einsum``; the batched helpers ``mul``,
``left_matrix`` and ``conj`` act on arrays whose last axis has length 32.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "DIM",
    "BLADES",
    "WITT",
    "Multivector",
    "Quaternion",
    "Rotor",
    "InvalidRotorError",
    "basis_index",
    "basis",
    "mul",
    "left_matrix",
    "conj",
    "quat_mul",
    "scalar_part",
    "vec_part",
    "conjugate",
    "rotate",
    "embed",
    "ONE",
    "E1",
    "E2",
    "E3",
    "F",
    "FD",
]

DIM = 32
BLADES: tuple[tuple[int, ...], ...] = (
    (), (1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3),
)
WITT: tuple[str, ...] = ("1", "f", "fd", "ffd")

# squares of the five Clifford generators e1..e5
_SIGNATURE = (-1, -1, -1, +1, -1)


class InvalidRotorError(ValueError):
    """Raised for rotors that are not unit quaternions (or not of the stated order)."""


def basis_index(blade: Iterable[int] = (), witt: str = "1") -> int:
    return 4 * BLADES.index(tuple(blade)) + WITT.index(witt)


# -- construction of the structure constants -------------------------------


def _blade_product(a: int, b: int) -> tuple[int, int]:
    """Product of two generator bitmask blades: returns (sign, bitmask)."""
    sign = 1
    # count transpositions needed to move every generator of b past a
    for i in range(5):
        if b >> i & 1:
            higher = a >> (i + 1)
            if bin(higher).count("1") % 2:
                sign = -sign
    common = a & b
    for i in range(5):
        if common >> i & 1:
            sign *= _SIGNATURE[i]
    return sign, a ^ b


def _clifford_mul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros(DIM)
    for i in np.flatnonzero(x):
        for j in np.flatnonzero(y):
            s, k = _blade_product(i, j)
            out[k] += s * x[i] * y[j]
    return out


def _witt_in_blades() -> list[np.ndarray]:
    one = np.zeros(DIM)
    one[0] = 1.0
    e4 = np.zeros(DIM)
    e4[1 << 3] = 1.0
    e5 = np.zeros(DIM)
    e5[1 << 4] = 1.0
    f = 0.5 * (e4 + e5)
    fd = 0.5 * (e4 - e5)
    return [one, f, fd, _clifford_mul(f, fd)]


def _build_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    witt = _witt_in_blades()
    change = np.zeros((DIM, DIM))  # column n = basis element n in bitmask coordinates
    for a, blade in enumerate(BLADES):
        e_a = np.zeros(DIM)
        e_a[sum(1 << (g - 1) for g in blade)] = 1.0
        for w in range(4):
            change[:, 4 * a + w] = _clifford_mul(e_a, witt[w])
    inv = np.linalg.inv(change)

    structure = np.zeros((DIM, DIM, DIM))
    for i, j in itertools.product(range(DIM), repeat=2):
        structure[i, j] = inv @ _clifford_mul(change[:, i], change[:, j])
    structure[np.abs(structure) < 1e-15] = 0.0

    # conjugation: reverse the order of generators, negate e1..e3, fix e4 and e5
    blade_conj = np.zeros(DIM)
    for m in range(DIM):
        r = bin(m).count("1")
        n_quat = bin(m & 0b111).count("1")
        blade_conj[m] = (-1) ** (r * (r - 1) // 2 + n_quat)
    conj_matrix = inv @ np.diag(blade_conj) @ change
    conj_matrix[np.abs(conj_matrix) < 1e-15] = 0.0
    return structure, conj_matrix, change


STRUCTURE, _CONJ, _CHANGE = _build_tables()
# LEFT[c] is the matrix of x -> b_c * x, i.e. LEFT[c][k, j] = STRUCTURE[c, j, k]
LEFT = np.ascontiguousarray(np.transpose(STRUCTURE, (0, 2, 1)))


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product of coefficient arrays (last axis of length 32)."""
    return np.einsum("...i,...j,ijk->...k", a, b, STRUCTURE, optimize=True)


def left_matrix(a: np.ndarray) -> np.ndarray:
    """Matrix of ``x -> a * x`` for a single coefficient vector ``a``."""
    return np.tensordot(a, LEFT, axes=(0, 0))


def conj(a: np.ndarray) -> np.ndarray:
    return a @ _CONJ.T


def basis(index: int) -> np.ndarray:
    out = np.zeros(DIM)
    out[index] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class Multivector:
    """Immutable element of the algebra."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(DIM)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def scalar(cls, value: float) -> "Multivector":
        return cls(value * basis(0))

    @classmethod
    def vector(cls, x) -> "Multivector":
        return cls(embed(x))

    def __add__(self, other):
        other = _coerce(other)
        return Multivector(self.coefficients + other.coefficients)

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        return Multivector(self.coefficients - other.coefficients)

    def __rsub__(self, other):
        return _coerce(other) - self

    def __neg__(self):
        return Multivector(-self.coefficients)

    def __mul__(self, other):
        if np.isscalar(other):
            return Multivector(other * self.coefficients)
        other = _coerce(other)
        return Multivector(mul(self.coefficients, other.coefficients))

    def __rmul__(self, other):
        if np.isscalar(other):
            return Multivector(other * self.coefficients)
        return _coerce(other) * self

    def __truediv__(self, other: float):
        return Multivector(self.coefficients / other)

    def __abs__(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Multivector):
            return NotImplemented
        return bool(np.array_equal(self.coefficients, other.coefficients))

    def __hash__(self):
        return hash(self.coefficients.tobytes())

    def __getitem__(self, key) -> float:
        if isinstance(key, int):
            return float(self.coefficients[key])
        blade, witt = key
        return float(self.coefficients[basis_index(blade, witt)])

    def conjugate(self) -> "Multivector":
        return Multivector(conj(self.coefficients))

    def scalar_part(self) -> float:
        return float(self.coefficients[0])

    def vec_part(self) -> np.ndarray:
        return self.coefficients[[4, 8, 12]].copy()

    def allclose(self, other, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.coefficients, _coerce(other).coefficients, rtol=0, atol=atol))

    def __repr__(self) -> str:
        terms = []
        for n in np.flatnonzero(self.coefficients):
            blade = "e" + "".join(map(str, BLADES[n // 4])) if n // 4 else ""
            witt = WITT[n % 4] if n % 4 else ""
            name = "*".join(s for s in (blade, witt) if s) or "1"
            terms.append(f"{self.coefficients[n]:+.6g}*{name}")
        return "Multivector(" + (" ".join(terms) or "0") + ")"


def _coerce(x) -> Multivector:
    if isinstance(x, Multivector):
        return x
    if np.isscalar(x):
        return Multivector.scalar(float(x))
    return Multivector(np.asarray(x, dtype=float))


ONE = Multivector(basis(0))
E1 = Multivector(basis(basis_index((1,))))
E2 = Multivector(basis(basis_index((2,))))
E3 = Multivector(basis(basis_index((3,))))
F = Multivector(basis(basis_index((), "f")))
FD = Multivector(basis(basis_index((), "fd")))

VECTOR_SLOTS = np.array([basis_index((j,)) for j in (1, 2, 3)])


def embed(x) -> np.ndarray:
    """Coefficient array(s) of the vector ``x1 e1 + x2 e2 + x3 e3``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (DIM,))
    out[..., VECTOR_SLOTS] = x
    return out


def scalar_part(m) -> float:
    return _coerce(m).scalar_part()


def vec_part(m) -> np.ndarray:
    return _coerce(m).vec_part()


def conjugate(m) -> Multivector:
    return _coerce(m).conjugate()


# -- quaternions and rotors -------------------------------------------------


@dataclass(frozen=True)
class Quaternion:
    """Hamilton quaternion ``x0 + x1 i + x2 j + x3 k``."""

    x0: float
    x: tuple[float, float, float]

    @classmethod
    def from_array(cls, q) -> "Quaternion":
        q = np.asarray(q, dtype=float)
        return cls(float(q[0]), tuple(float(v) for v in q[1:4]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, *self.x])

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion.from_array(_hamilton(self.as_array(), other.as_array()))

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.x0, tuple(-v for v in self.x))

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


def _hamilton(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p0, pv = p[..., 0], p[..., 1:]
    q0, qv = q[..., 0], q[..., 1:]
    s = p0 * q0 - np.sum(pv * qv, axis=-1)
    v = p0[..., None] * qv + q0[..., None] * pv + np.cross(pv, qv)
    return np.concatenate([s[..., None], v], axis=-1)


def quat_mul(u, v) -> Quaternion:
    """Hamilton product of two pure quaternions: ``(-<u, v>, u x v)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return Quaternion(float(-np.dot(u, v)), tuple(float(c) for c in np.cross(u, v)))


# even-subalgebra slots receiving the quaternion units i, j, k
_I_SLOT = basis_index((2, 3))
_J_SLOT = basis_index((1, 3))  # j = e3 e1 = -e1 e3
_K_SLOT = basis_index((1, 2))


@dataclass(frozen=True)
class Rotor:
    """Unit quaternion acting on space by ``x -> a x conj(a)``.

    Inside the 32-dimensional algebra the rotor is represented by the even
    element ``a0 + a1 e2e3 + a2 e3e1 + a3 e1e2``; even elements commute with
    ``f`` and ``fd``, which is what makes kernels rotation invariant.
    """

    a: Quaternion

    def __post_init__(self):
        if abs(self.a.norm() - 1.0) > 1e-12:
            raise InvalidRotorError(f"rotor must have unit norm, got |a| = {self.a.norm():.16g}")

    @classmethod
    def from_array(cls, q) -> "Rotor":
        return cls(Quaternion.from_array(q))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotor":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        q = np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
        return cls.from_array(q / np.linalg.norm(q))

    @classmethod
    def identity(cls) -> "Rotor":
        return cls(Quaternion(1.0, (0.0, 0.0, 0.0)))

    def __mul__(self, other: "Rotor") -> "Rotor":
        q = _hamilton(self.a.as_array(), other.a.as_array())
        return Rotor.from_array(q / np.linalg.norm(q))

    def inverse(self) -> "Rotor":
        return Rotor(self.a.conjugate())

    def as_multivector(self) -> Multivector:
        q = self.a.as_array()
        c = np.zeros(DIM)
        c[0] = q[0]
        c[_I_SLOT] = q[1]
        c[_J_SLOT] = -q[2]
        c[_K_SLOT] = q[3]
        return Multivector(c)

    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix of ``x -> a x conj(a)``."""
        return np.stack([rotate(self, e) for e in np.eye(3)], axis=1)


def rotate(a: Rotor, x) -> np.ndarray:
    """Apply ``x -> a x conj(a)`` (quaternion product) to a 3-vector or array of them."""
    if not isinstance(a, Rotor):
        a = Rotor.from_array(np.asarray(a, dtype=float))
    x = np.asarray(x, dtype=float)
    q = a.a.as_array()
    pure = np.concatenate([np.zeros(x.shape[:-1] + (1,)), x], axis=-1)
    qb = np.broadcast_to(q, pure.shape)
    qc = qb * np.array([1.0, -1.0, -1.0, -1.0])
    return _hamilton(_hamilton(qb, pure), qc)[..., 1:]


# -- irreducible left modules -----------------------------------------------


def _right_matrix(b: np.ndarray) -> np.ndarray:
    return np.einsum("i,jik->kj", b, STRUCTURE)


def _blade_element(gens: Iterable[int]) -> np.ndarray:
    """Product of generators e1..e5 (e4 = f + fd, e5 = f - fd) as a coefficient array."""
    f, fd = basis(basis_index((), "f")), basis(basis_index((), "fd"))
    table = {1: basis(basis_index((1,))), 2: basis(basis_index((2,))), 3: basis(basis_index((3,))), 4: f + fd, 5: f - fd}
    out = basis(0)
    for g in gens:
        out = mul(out, table[g])
    return out


@dataclass(frozen=True)
class ModuleDecomposition:
    """Change of basis splitting the algebra, as a left module over itself, into irreducibles.

    The algebra is a sum of two simple ideals; each contributes two equivalent
    copies of an 8-dimensional irreducible module.  ``Q`` has the basis vectors
    of the four copies as consecutive column blocks ``(a, a, b, b)``, so
    ``inv(Q) @ LEFT[c] @ Q`` is block diagonal with blocks ``rho[0][c]``,
    ``rho[0][c]``, ``rho[1][c]``, ``rho[1][c]``.
    """

    Q: np.ndarray
    Q_inv: np.ndarray
    rho: tuple  # two arrays of shape (32, 8, 8)

    def split(self, u: np.ndarray) -> np.ndarray:
        """Coordinates ``(..., 32) -> (..., 2, 2, 8)`` indexed by (component, copy, slot)."""
        return (u @ self.Q_inv.T).reshape(u.shape[:-1] + (2, 2, 8))

    def join(self, y: np.ndarray) -> np.ndarray:
        return y.reshape(y.shape[:-3] + (DIM,)) @ self.Q.T


def _ideal_basis(eps: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(_right_matrix(eps))
    return u[:, : int(np.sum(s > 1e-10))]


def _build_decomposition() -> ModuleDecomposition:
    one = basis(0)
    A, B, C = _blade_element((4,)), _blade_element((1, 2, 3, 5)), _blade_element((1,))
    blocks, rho = [], []
    for sb in (1.0, -1.0):
        eps = 0.25 * mul(one + A, one + sb * B)
        base = _ideal_basis(eps)
        partner = _right_matrix(C) @ base  # x -> x C maps the ideal of eps onto the equivalent one
        blocks += [base, partner]
        pinv = np.linalg.pinv(base)
        r = np.einsum("ij,cjk,kl->cil", pinv, LEFT, base)
        r[np.abs(r) < 1e-14] = 0.0
        rho.append(r)
    Q = np.concatenate(blocks, axis=1)
    return ModuleDecomposition(Q, np.linalg.inv(Q), tuple(rho))


MODULES = _build_decomposition()
