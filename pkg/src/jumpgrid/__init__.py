"""Lattice Markov-chain approximations of symmetric jump processes on R^d."""
from .conductance import ConductanceMatrix, build_cell_averaged, build_pointwise, check_conditions
from .errors import DomainError, SolverError, UnsupportedKernelError
from .kernels import JumpKernel, kernel_from_spec, phi_kernel, stable_kernel
from .lattice import LatticeWindow
from .resolvent import assemble_generator, resolvent_solve, semigroup_apply

__version__ = "0.1.0"

__all__ = [
    "ConductanceMatrix", "DomainError", "JumpKernel", "LatticeWindow", "SolverError",
    "UnsupportedKernelError", "assemble_generator", "build_cell_averaged", "build_pointwise",
    "check_conditions", "kernel_from_spec", "phi_kernel", "resolvent_solve", "semigroup_apply",
    "stable_kernel",
]
