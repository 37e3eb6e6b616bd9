"""Time stepping for conserved anisotropic phase dynamics on surfaces.

One implicit Euler step couples the phase field and the chemical
potential through lumped products; the anisotropy and the mobility are
frozen at the previous phase, which linearises everything except the
potential term.  Two variants of the double-well are supported: the
obstacle potential (a variational inequality with exact bounds) and the
smooth quartic potential (a nodewise cubic).  Both satisfy a discrete
energy inequality, reported alongside each step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    assemble_anisotropic_stiffness,
    assemble_diffusion,
    assemble_mu_weights,
    lumped_mass_weights,
    p1_gradients,
)
from .errors import ConfigError
from .initdata import RandomMixture, distance_on_surface, profile_phi0
from .mesh import SurfaceMesh, adapt_mesh, surface_from_spec
from .solver import (
    CoupledSystem,
    SolverConfig,
    SolverScratch,
    solve_coupled_obstacle,
    solve_coupled_smooth,
)
from .vtkio import write_surface_vtk

POTENTIALS = ("obstacle", "quartic")
VARRHO_VARIANTS = ("i", "ii", "iii")


def c_psi(potential: str) -> float:
    """Integral of sqrt(2 Psi) over [-1, 1], the surface tension scale."""
    if potential == "obstacle":
        return np.pi / 2.0
    if potential == "quartic":
        return 2.0 * np.sqrt(2.0) / 3.0
    raise ConfigError(f"unknown potential {potential!r}")


def psi_value(s, potential: str):
    s = np.asarray(s, dtype=np.float64)
    if potential == "obstacle":
        return 0.5 * (1.0 - s * s)
    if potential == "quartic":
        return 0.25 * (1.0 - s * s) ** 2
    raise ConfigError(f"unknown potential {potential!r}")


def varrho(s, variant: str):
    """Coupling coefficient replacing the two plain 1/2 factors."""
    s = np.asarray(s, dtype=np.float64)
    if variant == "i":
        return np.full_like(s, 0.5)
    if variant == "ii":
        return 0.5 * (1.0 - s)
    if variant == "iii":
        return (15.0 / 16.0) * (s * s - 1.0) ** 2
    raise ConfigError(f"unknown varrho variant {variant!r}")


@dataclass
class ModelParams:
    epsilon: float
    theta: float = 0.0
    lam: float = 1.0
    kappa: float | tuple[float, float] = 1.0
    a: float = 1.0
    alpha: float = 1.0
    rho: float = 0.0
    w_dirichlet: float = 0.0
    potential: str = "obstacle"
    varrho_variant: str = "i"
    mu: object = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.theta < 0 or self.rho < 0:
            raise ConfigError("theta and rho must be nonnegative")
        for name in ("lam", "a", "alpha"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        kappas = self.kappa if isinstance(self.kappa, (tuple, list)) \
            else (self.kappa,)
        if len(kappas) not in (1, 2) or any(k <= 0 for k in kappas):
            raise ConfigError("kappa must be positive (scalar or +/- pair)")
        if self.potential not in POTENTIALS:
            raise ConfigError(f"unknown potential {self.potential!r}")
        if self.varrho_variant not in VARRHO_VARIANTS:
            raise ConfigError(
                f"unknown varrho variant {self.varrho_variant!r}")


@dataclass
class FieldState:
    phi: np.ndarray
    w: np.ndarray
    time: float = 0.0
    step: int = 0


@dataclass
class EnergyReport:
    e_h: float
    f_h: float
    dissipation_diffusion: float = 0.0
    dissipation_rate: float = 0.0
    mass_phi: float = 0.0
    mass_combined: float = 0.0
    bare_interfacial_energy: float = 0.0
    solver_iterations: int = 0
    residual: float = 0.0


def _check_state(state: FieldState, mesh: SurfaceMesh, params: ModelParams):
    n = mesh.n_vertices
    if state.phi.shape != (n,) or state.w.shape != (n,):
        raise ConfigError("field state does not match the mesh")
    if params.potential == "obstacle" and np.abs(state.phi).max() > 1.0:
        raise ConfigError("obstacle phase must satisfy |phi| <= 1")


def _diffusivity(mesh: SurfaceMesh, phi_old: np.ndarray, kappa):
    if isinstance(kappa, (tuple, list)):
        k_plus, k_minus = kappa
        s_bar = phi_old[mesh.triangles].mean(axis=1)
        return 0.5 * (1.0 + s_bar) * k_plus + 0.5 * (1.0 - s_bar) * k_minus
    return float(kappa)


def _build_system(state, mesh, density, params, tau):
    if tau <= 0:
        raise ConfigError("tau must be positive")
    m = lumped_mass_weights(mesh)
    rho_j = varrho(state.phi, params.varrho_variant)
    stiff_w = assemble_diffusion(
        mesh, _diffusivity(mesh, state.phi, params.kappa))
    stiff_phi = assemble_anisotropic_stiffness(mesh, density, state.phi)
    m_mu = lumped_mass_weights(
        mesh, assemble_mu_weights(mesh, params.mu, state.phi))
    dirichlet = np.zeros(mesh.n_vertices, dtype=bool)
    dirichlet[mesh.dirichlet_vertices()] = True
    w_old = state.w.copy()
    w_old[dirichlet] = params.w_dirichlet

    eps = params.epsilon
    rate = eps * (params.rho / params.alpha) * m_mu / tau
    smooth = params.potential == "quartic"
    system = CoupledSystem(
        stiff_w=stiff_w,
        stiff_phi=stiff_phi,
        tau=tau,
        eps=eps,
        theta_m=params.theta * m,
        bcoef=params.lam * rho_j * m,
        ccoef=c_psi(params.potential) * (params.a / params.alpha) * rho_j * m,
        rate=rate,
        cubic=m / eps if smooth else np.zeros_like(m),
        b_w=params.theta * m * w_old + params.lam * rho_j * m * state.phi,
        b_phi=rate * state.phi + m * state.phi / eps,
        lumped_m=m,
        dirichlet=dirichlet,
    )
    return system, w_old, m_mu


def _advance(state, mesh, density, params, tau, solver_config, smooth,
             scratch=None):
    _check_state(state, mesh, params)
    system, w_old, m_mu = _build_system(state, mesh, density, params, tau)
    solve = solve_coupled_smooth if smooth else solve_coupled_obstacle
    phi, w, iters, residual = solve(system, state.phi, w_old, solver_config,
                                    scratch=scratch)
    new_state = FieldState(phi=phi, w=w, time=state.time + tau,
                           step=state.step + 1)
    report = compute_energy(new_state, mesh, density, params)
    rate_density = (phi - state.phi) / tau
    report.dissipation_diffusion = float(w @ (system.stiff_w @ w))
    report.dissipation_rate = float(
        (params.lam * params.rho / params.a)
        * (params.epsilon / c_psi(params.potential))
        * (m_mu * rate_density ** 2).sum())
    report.solver_iterations = iters
    report.residual = residual
    return new_state, report


def step_obstacle(state, mesh, density, params, tau,
                  solver_config: SolverConfig | None = None, scratch=None):
    """Advance the obstacle-potential system by one implicit step."""
    if params.potential != "obstacle":
        raise ConfigError("params must select the obstacle potential")
    return _advance(state, mesh, density, params, tau, solver_config, False,
                    scratch)


def step_smooth(state, mesh, density, params, tau,
                solver_config: SolverConfig | None = None, scratch=None):
    """Advance the quartic-potential system by one implicit step."""
    if params.potential != "quartic":
        raise ConfigError("params must select the quartic potential")
    return _advance(state, mesh, density, params, tau, solver_config, True,
                    scratch)


def compute_energy(state: FieldState, mesh: SurfaceMesh, density,
                   params: ModelParams) -> EnergyReport:
    """Discrete energies and conserved functionals of a state.

    The interfacial term uses the piecewise constant value of the density
    at the projected barycenter and frozen gradient of each triangle; the
    dissipation fields are filled in by the stepping routines.
    """
    _check_state(state, mesh, params)
    m = lumped_mass_weights(mesh)
    areas = mesh.triangle_areas()
    grads = p1_gradients(mesh, state.phi)
    gamma_sq = density.gamma(mesh.surface_barycenters(), grads) ** 2
    grad_sq = (grads * grads).sum(axis=1)
    eps = params.epsilon
    psi_mass = float(m @ psi_value(state.phi, params.potential))

    e_h = 0.5 * params.theta * float(
        m @ (state.w - params.w_dirichlet) ** 2)
    e_h += (params.lam * params.alpha / params.a) / c_psi(params.potential) \
        * (0.5 * eps * float(areas @ gamma_sq) + psi_mass / eps)
    mass_phi = float(m @ state.phi)
    f_h = e_h - params.lam * params.w_dirichlet * 0.5 * (m.sum() + mass_phi)
    bare = 0.5 * eps * float(areas @ grad_sq) + psi_mass / eps
    return EnergyReport(
        e_h=e_h,
        f_h=f_h,
        mass_phi=mass_phi,
        mass_combined=params.theta * float(m @ state.w)
        + 0.5 * params.lam * mass_phi,
        bare_interfacial_energy=bare,
    )


# ---------------------------------------------------------------------------
# the outer loop


CHECKPOINT_VERSION = 1

CSV_COLUMNS = ("step", "time", "E_h", "F_h", "bare_interfacial_energy",
               "mass_phi", "mass_combined", "solver_iterations", "residual")


def save_checkpoint(path, mesh: SurfaceMesh, state: FieldState):
    """Full-precision binary dump of a mesh and the fields living on it."""
    np.savez(path,
             version=CHECKPOINT_VERSION,
             surface=json.dumps(mesh.surface.spec(), sort_keys=True),
             vertices=mesh.vertices,
             triangles=mesh.triangles,
             vertex_parents=mesh.vertex_parents,
             boundary_edges=mesh.boundary_edges,
             boundary_tags=mesh.boundary_tags,
             phi=state.phi,
             w=state.w,
             time=state.time,
             step=state.step)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint version {version}")
        mesh = SurfaceMesh(
            data["vertices"], data["triangles"],
            surface=surface_from_spec(json.loads(str(data["surface"]))),
            vertex_parents=data["vertex_parents"],
            boundary_edges=data["boundary_edges"],
            boundary_tags=data["boundary_tags"])
        state = FieldState(phi=data["phi"].copy(), w=data["w"].copy(),
                           time=float(data["time"]), step=int(data["step"]))
    return mesh, state


@dataclass
class SimulationResult:
    state: FieldState
    mesh: SurfaceMesh
    reports: list = field(default_factory=list)
    halt_reason: str = "horizon"
    adapt_steps: list = field(default_factory=list)
    energy_log: Path | None = None
    snapshot_paths: list = field(default_factory=list)
    checkpoint_path: Path | None = None


def _initial_fields(config):
    """Adapt the starting mesh to the seed and evaluate the fields on it.

    Random mixtures have no interface to track yet, so the band is the
    whole surface (uniform refinement to the fine target) and the noise is
    drawn once, on the final mesh.  Seeds with a distance function get
    exact re-evaluation on every intermediate mesh, plus a proximity
    marker so that interfaces much thinner than the coarse mesh are still
    found.
    """
    params = config.params
    seed = config.seed
    if isinstance(seed, RandomMixture):
        marker = None

        def reevaluate(m):
            return np.zeros(m.n_vertices)
    else:
        def marker(m):
            near = np.abs(distance_on_surface(m, seed))
            return near[m.triangles].min(axis=1) <= m.triangle_diameters()

        def reevaluate(m):
            return profile_phi0(m, seed, params.epsilon, params.potential)

    mesh = config.mesh
    phi = reevaluate(mesh)
    mesh, _ = adapt_mesh(mesh, phi, config.fine_n, config.coarse_n,
                         marker=marker, reevaluate=reevaluate)
    phi = profile_phi0(mesh, seed, params.epsilon, params.potential)
    w = np.full(mesh.n_vertices, float(params.w_dirichlet))
    return mesh, FieldState(phi=phi, w=w)


def run_simulation(config) -> SimulationResult:
    """Advance from the seeded initial state to the horizon.

    ``config`` is duck typed and must carry: mesh, density, params, seed,
    tau, t_end, fine_n, coarse_n; optionally adapt_interval (10),
    snapshot_cadence (100), stationarity_tol (1e-8), solver, out_dir,
    name, initial_state.  With out_dir set, every step appends a row to
    ``<name>_energy.csv``, snapshots ``<name>_<step>.vtk`` are written on
    the cadence, and a resumable checkpoint is left at the end.  Passing
    initial_state (with a matching mesh) resumes a previous run: no
    initial row or snapshot is emitted, and step numbering continues.

    The run halts at the horizon, or earlier once a step changes the
    phase by less than stationarity_tol in the max norm.
    """
    tau = float(config.tau)
    if tau <= 0:
        raise ConfigError("tau must be positive")
    t_end = float(config.t_end)
    if t_end < 0:
        raise ConfigError("t_end must be nonnegative")
    fine_n = int(config.fine_n)
    coarse_n = int(config.coarse_n)
    if coarse_n < 1 or fine_n < coarse_n:
        raise ConfigError("need fine_n >= coarse_n >= 1")
    adapt_interval = int(getattr(config, "adapt_interval", 10))
    cadence = int(getattr(config, "snapshot_cadence", 100))
    if adapt_interval < 1 or cadence < 1:
        raise ConfigError("adapt_interval and snapshot_cadence must be >= 1")
    stationarity_tol = float(getattr(config, "stationarity_tol", 1e-8))
    solver_config = getattr(config, "solver", None)
    name = getattr(config, "name", "run")
    out_dir = getattr(config, "out_dir", None)
    params = config.params
    density = config.density
    step_fn = step_smooth if params.potential == "quartic" else step_obstacle
    obstacle = params.potential == "obstacle"

    resumed = getattr(config, "initial_state", None)
    if resumed is None:
        mesh, state = _initial_fields(config)
    else:
        mesh, state = config.mesh, resumed
        _check_state(state, mesh, params)

    result = SimulationResult(state=state, mesh=mesh)
    log_fh = None
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.energy_log = out_dir / f"{name}_energy.csv"
        log_fh = open(result.energy_log, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(CSV_COLUMNS)

    def emit(report, st):
        result.reports.append(report)
        if writer is not None:
            writer.writerow([st.step, repr(float(st.time)),
                             repr(float(report.e_h)),
                             repr(float(report.f_h)),
                             repr(float(report.bare_interfacial_energy)),
                             repr(float(report.mass_phi)),
                             repr(float(report.mass_combined)),
                             int(report.solver_iterations),
                             repr(float(report.residual))])
            log_fh.flush()

    last_snapshot = -1

    def snapshot(st, m):
        nonlocal last_snapshot
        if out_dir is None or st.step == last_snapshot:
            return
        path = out_dir / f"{name}_{st.step}.vtk"
        write_surface_vtk(path, m, {"phi": st.phi, "w": st.w})
        result.snapshot_paths.append(path)
        last_snapshot = st.step

    n_steps = int(np.floor(t_end / tau + 1e-9))
    scratch = SolverScratch()
    try:
        if resumed is None:
            emit(compute_energy(state, mesh, density, params), state)
            snapshot(state, mesh)
        while state.step < n_steps:
            if state.step and state.step % adapt_interval == 0:
                new_mesh, transfer = adapt_mesh(mesh, state.phi,
                                                fine_n, coarse_n)
                if new_mesh is not mesh:
                    mesh = new_mesh
                    phi = np.asarray(transfer @ state.phi)
                    if obstacle:
                        np.clip(phi, -1.0, 1.0, out=phi)
                    state = FieldState(phi=phi,
                                       w=np.asarray(transfer @ state.w),
                                       time=state.time, step=state.step)
                    result.adapt_steps.append(state.step)
            previous_phi = state.phi
            state, report = step_fn(state, mesh, density, params, tau,
                                    solver_config, scratch)
            emit(report, state)
            if state.step % cadence == 0:
                snapshot(state, mesh)
            if stationarity_tol > 0 and \
                    np.abs(state.phi - previous_phi).max() < stationarity_tol:
                result.halt_reason = "stationary"
                break
        snapshot(state, mesh)
    finally:
        if log_fh is not None:
            log_fh.close()

    result.state = state
    result.mesh = mesh
    if out_dir is not None:
        result.checkpoint_path = out_dir / f"{name}_checkpoint.npz"
        save_checkpoint(result.checkpoint_path, mesh, state)
    return result
