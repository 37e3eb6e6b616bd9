"""Anisotropic phase-field and Cahn-Hilliard dynamics on triangulated
surfaces embedded in R^3."""

__version__ = "0.1.0"

from .anisotropy import (AnisotropyDensity, density_from_spec,
                         make_hexagonal_2d_on_sphere, make_hexagonal_3d,
                         make_inhomogeneous_isotropic, make_isotropic,
                         wulff_sample)
from .app import PRESETS, RunConfig, main, parse_config
from .errors import (CapacityError, ConfigError, SolverError, SurfphaseError,
                     exit_code_for)
from .initdata import (AnnulusBand, CircleSeed, MultiSeed, RandomMixture,
                       TiltedGreatCircle, profile_phi0, seed_from_spec)
from .mesh import (BoundaryTag, SurfaceMesh, adapt_mesh, build_icosphere,
                   build_planar_rect, build_sphere_cap, interface_band,
                   surface_from_spec)
from .oracle import (AnnulusState, initial_state, integrate_annulus,
                     sharp_energy, write_reference_csv)
from .scheme import (FieldState, ModelParams, SimulationResult, c_psi,
                     compute_energy, load_checkpoint, run_simulation,
                     save_checkpoint, step_obstacle, step_smooth)
from .solver import (CoupledSystem, SolverConfig, SolverScratch,
                     conjugate_gradient, solve_coupled_obstacle,
                     solve_coupled_smooth)
from .vtkio import read_surface_vtk, write_polyline_vtk, write_surface_vtk

__all__ = [
    "AnisotropyDensity", "AnnulusBand", "AnnulusState", "BoundaryTag",
    "CapacityError", "CircleSeed", "ConfigError", "CoupledSystem",
    "FieldState", "ModelParams",
    "MultiSeed", "PRESETS", "RandomMixture", "RunConfig", "SimulationResult",
    "SolverConfig", "SolverError", "SolverScratch", "SurfaceMesh",
    "SurfphaseError",
    "TiltedGreatCircle", "adapt_mesh", "build_icosphere", "build_planar_rect",
    "build_sphere_cap", "c_psi", "compute_energy", "conjugate_gradient",
    "density_from_spec", "exit_code_for", "initial_state",
    "integrate_annulus", "interface_band", "load_checkpoint", "main",
    "make_hexagonal_2d_on_sphere", "make_hexagonal_3d",
    "make_inhomogeneous_isotropic", "make_isotropic", "parse_config",
    "profile_phi0", "read_surface_vtk", "run_simulation", "save_checkpoint",
    "seed_from_spec", "sharp_energy", "solve_coupled_obstacle",
    "solve_coupled_smooth", "step_obstacle",
    "step_smooth", "surface_from_spec", "wulff_sample",
    "write_polyline_vtk", "write_reference_csv", "write_surface_vtk",
]
