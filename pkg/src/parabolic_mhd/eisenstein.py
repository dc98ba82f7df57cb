"""Lattice-periodised parabolic kernels on cylinders and tori.

For the lattice ``Omega_p = Z e1 + ... + Z e_p`` and spin index ``l`` the
periodised kernel is

    EIS(x, t) = sum_{w in Z^p} (-1)^{w_1 + ... + w_l} E(x + w, t; k),

summed here over the cube ``|w|_max <= M`` one max-norm shell at a time.
The Gaussian factor of ``E`` makes the tail beyond shell ``M`` explicitly
computable; :func:`tail_bound` evaluates that majorant and
:func:`choose_truncation` inverts it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .algebra import DIM, Rotor, conj, mul, rotate
from .kernels import KERNEL_SLOTS, KernelSpec, SpaceTimePoint, _spec, kernel_components

__all__ = [
    "LatticeSpec",
    "TruncationPlan",
    "TruncationError",
    "lattice_sign",
    "shell",
    "eisenstein",
    "eisenstein_array",
    "shell_contributions",
    "tail_bound",
    "choose_truncation",
    "cyclic_eisenstein",
    "rotor_order",
]


class TruncationError(ValueError):
    """No admissible truncation order below the cap, or bound used outside its validity."""


@dataclass(frozen=True)
class LatticeSpec:
    """Rank ``p`` of the translation lattice and number ``l`` of antiperiodic directions."""

    p: int = 3
    l: int = 0

    def __post_init__(self):
        if not (1 <= self.p <= 3 and 0 <= self.l <= self.p):
            raise ValueError(f"need 0 <= l <= p <= 3 and p >= 1, got p={self.p}, l={self.l}")

    def axis_signs(self) -> tuple[int, int, int]:
        """Sign picked up by a section when translated by ``e_d`` (0 for non-periodic axes)."""
        return tuple((-1 if d < self.l else 1) if d < self.p else 0 for d in range(3))


@dataclass(frozen=True)
class TruncationPlan:
    M: int
    tol: float
    r: float
    t_max: float
    bound: float = 0.0


def lattice_sign(omega, l: int) -> int:
    """``(-1)^(w_1 + ... + w_l)``."""
    omega = np.asarray(omega, dtype=int)
    return -1 if int(np.sum(omega[..., :l])) % 2 else 1


def _signs(omegas: np.ndarray, l: int) -> np.ndarray:
    return np.where(np.sum(omegas[:, :l], axis=1) % 2 == 0, 1.0, -1.0)


@lru_cache(maxsize=256)
def _shell_cached(m: int, p: int) -> np.ndarray:
    if m == 0:
        pts = np.zeros((1, p), dtype=int)
    else:
        rng = range(-m, m + 1)
        pts = np.array([w for w in itertools.product(rng, repeat=p) if max(map(abs, w)) == m], dtype=int)
    out = np.zeros((len(pts), 3), dtype=int)
    out[:, :p] = pts
    out.setflags(write=False)
    return out


def shell(m: int, p: int) -> np.ndarray:
    """Lattice points of max-norm exactly ``m`` embedded in Z^3 (lexicographic order)."""
    if m < 0:
        raise ValueError("shell index must be nonnegative")
    return _shell_cached(int(m), int(p))


def shell_contributions(x, t, spec, lat: LatticeSpec, M: int) -> np.ndarray:
    """Per-shell sums, shape ``(M + 1, 5)`` on the kernel slots ``(e1, e2, e3, f, fd)``."""
    spec = _spec(spec)
    x = np.asarray(x, dtype=float)
    out = np.zeros((M + 1, 5))
    for m in range(M + 1):
        w = shell(m, lat.p)
        comp = kernel_components(x + w, t, spec.k, spec.singular_radius)
        out[m] = _signs(w, lat.l) @ comp
    return out


def _eisenstein_components(x, t, spec: KernelSpec, lat: LatticeSpec, M: int) -> np.ndarray:
    """Neumaier-compensated shell accumulation for a batch of points ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    total = np.zeros(shape + (5,))
    comp_err = np.zeros_like(total)
    for m in range(M + 1):
        w = shell(m, lat.p)
        s = _signs(w, lat.l)
        vals = kernel_components(x[..., None, :] + w, t[..., None], spec.k, spec.singular_radius)
        term = np.einsum("w,...wc->...c", s, vals)
        new = total + term
        big = np.abs(total) >= np.abs(term)
        comp_err += np.where(big, (total - new) + term, (term - new) + total)
        total = new
    return total + comp_err


def eisenstein(p, spec=1.0, lat: LatticeSpec = LatticeSpec(), M: int = 4):
    """Truncated periodised kernel at a :class:`SpaceTimePoint` (returns a Multivector)."""
    from .algebra import Multivector

    if M < 0:
        raise ValueError("M must be nonnegative")
    spec = _spec(spec)
    comp = _eisenstein_components(np.array(p.x), np.array(p.t), spec, lat, M)
    out = np.zeros(DIM)
    out[KERNEL_SLOTS] = comp
    return Multivector(out)


def eisenstein_array(x, t, spec=1.0, lat: LatticeSpec = LatticeSpec(), M: int = 4) -> np.ndarray:
    """Batched truncated periodised kernel, coefficient arrays ``(..., 32)``."""
    spec = _spec(spec)
    comp = _eisenstein_components(x, t, spec, lat, M)
    out = np.zeros(comp.shape[:-1] + (DIM,))
    out[..., KERNEL_SLOTS] = comp
    return out


def _shell_size(m: int, p: int) -> int:
    return (2 * m + 1) ** p - (2 * m - 1) ** p if m > 0 else 1


def _tail_term(m: int, r: float, t: float, k: float, p: int) -> float:
    rho = r + math.sqrt(p) * m  # |x + w|_2 <= |x|_2 + |w|_2
    amp = math.sqrt((math.sqrt(k) * rho / (2 * t)) ** 2 + (1.5 / t + k * rho**2 / (4 * t * t)) ** 2 + 1.0)
    return (
        _shell_size(m, p)
        * (k / (4 * math.pi * t)) ** 1.5
        * amp
        * math.exp(-k * (m - r) ** 2 / (4 * t))
    )


def tail_bound(M: int, r: float, t: float, k: float, p: int) -> float:
    """Majorant of ``sum_{m > M} sum_{|w|_max = m} |E(x + w, t; k)|`` for ``|x|_2 < r``.

    Terms are summed until they drop below 1e-3 of the running total; the rest
    is covered by a geometric majorant built from the largest of the following
    term ratios.
    """
    if M < math.floor(r) + 1:
        raise TruncationError(f"tail bound requires M >= floor(r) + 1 = {math.floor(r) + 1}, got M={M}")
    if t <= 0:
        return 0.0
    total = 0.0
    m = M + 1
    while True:
        term = _tail_term(m, r, t, k, p)
        total += term
        if term == 0.0:
            return total
        if term < 1e-3 * total and m > M + 1:
            break
        m += 1
        if m > M + 100000:
            raise TruncationError("tail bound summation did not settle")
    nxt = _tail_term(m + 1, r, t, k, p)
    if nxt == 0.0:
        return total
    ratios = [
        _tail_term(j + 1, r, t, k, p) / max(_tail_term(j, r, t, k, p), 1e-300) for j in range(m + 1, m + 51)
    ]
    rho = max([nxt / term] + ratios)
    if rho >= 1.0:
        raise TruncationError("tail terms are not yet geometrically decaying")
    return total + nxt / (1.0 - rho)


def choose_truncation(
    tol: float,
    r: float,
    t_max: float,
    spec=1.0,
    lat: LatticeSpec = LatticeSpec(),
    cap: int = 64,
) -> TruncationPlan:
    """Smallest ``M >= floor(r) + 1`` whose tail bound is below ``tol`` on ``(0, t_max]``.

    The bound is maximised over a 16-point logarithmic grid in ``t``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    spec = _spec(spec)
    ts = np.geomspace(t_max * 1e-3, t_max, 16)
    M = math.floor(r) + 1

    def worst(M):
        return max(tail_bound(M, r, float(t), spec.k, lat.p) for t in ts)

    if math.isinf(tol):
        return TruncationPlan(M, tol, r, t_max, worst(M))
    while M <= cap:
        b = worst(M)
        if b <= tol:
            return TruncationPlan(M, tol, r, t_max, b)
        M += 1
    raise TruncationError(
        f"truncation order would exceed cap {cap}; use a larger tol or a smaller t_max"
    )


def rotor_order(a: Rotor, n: int, atol: float = 1e-10) -> bool:
    """True when ``a**n == 1`` (checked by repeated multiplication)."""
    q = Rotor.identity()
    for _ in range(n):
        q = q * a
    return bool(np.allclose(q.a.as_array(), [1.0, 0.0, 0.0, 0.0], atol=atol))


def cyclic_eisenstein(p, spec, lat: LatticeSpec, M: int, a: Rotor, n: int):
    """Kernel for the cyclic group ``{a, a^2, ..., a^n}`` combined with the lattice."""
    from .algebra import Multivector

    if not isinstance(a, Rotor):
        a = Rotor.from_array(a)
    if n < 1 or not rotor_order(a, n):
        raise ValueError(f"rotor does not satisfy a^{n} = 1")
    spec = _spec(spec)
    x = np.array(p.x)
    total = np.zeros(DIM)
    power = Rotor.identity()
    for _ in range(n):
        power = power * a
        am = power.as_multivector().coefficients
        inner = eisenstein(SpaceTimePoint.of(rotate(power, x), p.t), spec, lat, M).coefficients
        total = total + mul(mul(conj(am), inner), am)
    return Multivector(total)
