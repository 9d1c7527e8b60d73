"""Finite elements with normal-direction p-refinement on boundary cells.

Solves -lap(u) + b.grad(u) + c u = f in 1D and 2D with low-order interior
elements and boundary cells enriched only across the boundary, and measures
the convergence of boundary derivatives.
"""
from .assembly import (Coefficients, ComplexLinearSystem, DiscreteField, SolverError, assemble,
                       cell_matrix_1d, cell_matrix_2d, evaluate_solution, interpolate, solve,
                       solve_direct)
from .mesh import (DofSystem, MappedMesh2D, Mesh1D, TensorMesh2D, build_disk_mesh,
                   build_mesh_1d, build_tensor_mesh_2d, enumerate_dofs,
                   isotropic_face_constraints, refine_uniform)
from .polybasis import QuadratureRule, ReferenceBasis1D, basis_derivative, gauss_rule, make_basis
from .verification import (ConvergenceTable, ManufacturedSolution, fit_rates, h1b_seminorm,
                           h2b_seminorm, make_manufactured, vertex_error)

__version__ = "0.1.0"

__all__ = [
    "Coefficients", "ComplexLinearSystem", "DiscreteField", "SolverError", "assemble",
    "cell_matrix_1d", "cell_matrix_2d", "evaluate_solution", "interpolate", "solve",
    "solve_direct", "DofSystem", "MappedMesh2D", "Mesh1D", "TensorMesh2D", "build_disk_mesh",
    "build_mesh_1d", "build_tensor_mesh_2d", "enumerate_dofs", "isotropic_face_constraints",
    "refine_uniform", "QuadratureRule", "ReferenceBasis1D", "basis_derivative", "gauss_rule",
    "make_basis", "ConvergenceTable", "ManufacturedSolution", "fit_rates", "h1b_seminorm",
    "h2b_seminorm", "make_manufactured", "vertex_error",
]
