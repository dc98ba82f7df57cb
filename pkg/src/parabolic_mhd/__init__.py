"""Parabolic Dirac operator calculus on flat space-time and on tori, with an MHD fixed-point solver.

Submodules: :mod:`.algebra`, :mod:`.kernels`, :mod:`.eisenstein`,
:mod:`.geometry`, :mod:`.operators`, :mod:`.mhd` and the command-line front
end :mod:`.cli`.
"""

from . import algebra, eisenstein, geometry, kernels, mhd, operators
from .algebra import F, FD, Multivector, Quaternion, Rotor, conjugate, mul, quat_mul, rotate, scalar_part, vec_part
from .eisenstein import LatticeSpec, TruncationPlan, choose_truncation, eisenstein_array, tail_bound
from .geometry import DomainSpec, Section, SpaceTimeGrid, build_grid, lq_norm
from .kernels import KernelSpec, SpaceTimePoint, fundamental_E, fundamental_G, heat_kernel
from .mhd import BoundaryData, MHDConfig, MHDSolver, MHDState, solve
from .operators import (
    OperatorContext,
    apply_dirac,
    bergman_build,
    bergman_P,
    bergman_Q,
    borel_pompeiu_residual,
    cauchy,
    teodorescu,
)

__version__ = "0.1.0"
