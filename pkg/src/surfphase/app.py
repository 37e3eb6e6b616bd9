"""Command line front end.

Subcommands: ``run`` executes a configured simulation, ``oracle`` writes
the reference trajectory of the shrinking-annulus problem, ``wulff``
samples a Wulff curve into a polyline, and ``convergence`` sweeps the
interface width for both potentials and tabulates phase-field against
sharp-interface energies.  Configuration files are YAML; named presets
cover the standard experiments and can be overridden key by key.
"""

from __future__ import annotations

import argparse
import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .anisotropy import AnisotropyDensity, density_from_spec, wulff_sample
from .errors import EXIT_OK, ConfigError, SurfphaseError, exit_code_for
from .initdata import RandomMixture, seed_from_spec
from .mesh import (
    BoundaryTag,
    SurfaceMesh,
    build_icosphere,
    build_planar_rect,
    build_sphere_cap,
)
from .oracle import (
    DEFAULT_ALPHA,
    DEFAULT_LAMBDA,
    energy_curve,
    initial_state,
    integrate_annulus,
    write_reference_csv,
)
from .scheme import ModelParams, c_psi, load_checkpoint, run_simulation
from .solver import SolverConfig
from .vtkio import write_polyline_vtk

EPS8 = 1.0 / (8.0 * np.pi)
EPS16 = 1.0 / (16.0 * np.pi)
EPS32 = 1.0 / (32.0 * np.pi)

ANNULUS_THETA1 = float(np.pi - np.arcsin(0.8))
ANNULUS_THETA2 = float(np.pi - np.arcsin(0.4))


def mesh_from_spec(spec: dict) -> SurfaceMesh:
    """Build the starting mesh described by a geometry mapping."""
    if not isinstance(spec, dict):
        raise ConfigError("geometry: must be a mapping")
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "icosphere":
        mesh = build_icosphere(int(spec.pop("subdivisions", 2)))
    elif kind == "cap":
        mesh = build_sphere_cap(int(spec.pop("resolution", 16)))
        if spec.pop("dirichlet_rim", True):
            mesh = mesh.with_boundary_tag(BoundaryTag.DIRICHLET)
    elif kind == "rectangle":
        mesh = build_planar_rect(float(spec.pop("half_width", 1.0)),
                                 float(spec.pop("half_height", 1.0)),
                                 int(spec.pop("resolution", 4)))
    else:
        raise ConfigError(f"geometry.kind: unknown kind {kind!r}")
    if spec:
        raise ConfigError(
            f"geometry: unknown keys {sorted(spec)} for kind {kind!r}")
    return mesh


@dataclass
class RunConfig:
    """Everything one simulation needs, validated on construction."""

    name: str
    geometry: dict
    density: AnisotropyDensity
    params: ModelParams
    seed: object
    tau: float
    t_end: float
    fine_n: int
    coarse_n: int
    adapt_interval: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig)
    out_dir: Path | None = None
    snapshot_cadence: int = 100
    rng_seed: int | None = None
    stationarity_tol: float = 1e-8
    mesh: SurfaceMesh | None = None
    initial_state: object = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau: must be positive")
        if self.t_end < 0:
            raise ConfigError("t_end: must be nonnegative")
        if self.coarse_n < 1 or self.fine_n < self.coarse_n:
            raise ConfigError("fine_n, coarse_n: need fine_n >= coarse_n >= 1")
        if self.adapt_interval < 1:
            raise ConfigError("adapt_interval: must be at least 1")
        if self.snapshot_cadence < 1:
            raise ConfigError("snapshot_cadence: must be at least 1")
        if self.rng_seed is not None and isinstance(self.seed, RandomMixture):
            self.seed = RandomMixture(self.seed.amplitude,
                                      seed=int(self.rng_seed))
        if self.mesh is None:
            self.mesh = mesh_from_spec(self.geometry)


def _preset_great_circle(tilt: float) -> dict:
    return {
        "name": f"great-circle-{int(tilt)}",
        "geometry": {"kind": "icosphere", "subdivisions": 3},
        "density": {"kind": "hexagonal3d", "variant": "b", "delta": 0.01},
        "seed": {"kind": "great_circle", "tilt_degrees": tilt,
                 "perturbation": 0.02},
        "params": {"epsilon": EPS16},
        "tau": 1e-4,
        "t_end": 5.0,
        "fine_n": 128,
        "coarse_n": 1,
        "snapshot_cadence": 10000,
    }


def _preset_spinodal(density: dict, tag: str) -> dict:
    return {
        "name": f"spinodal-{tag}",
        "geometry": {"kind": "icosphere", "subdivisions": 3},
        "density": density,
        "seed": {"kind": "random", "amplitude": 0.1, "seed": 0},
        "params": {"epsilon": EPS16},
        "tau": 1e-6,
        "t_end": 1e-3,
        "fine_n": 128,
        "coarse_n": 1,
        "snapshot_cadence": 100,
    }


def _preset_annulus(potential: str) -> dict:
    return {
        "name": f"annulus-{potential}",
        "geometry": {"kind": "icosphere", "subdivisions": 3},
        "density": {"kind": "isotropic"},
        "seed": {"kind": "annulus", "theta1": ANNULUS_THETA1,
                 "theta2": ANNULUS_THETA2},
        "params": {"epsilon": EPS16, "alpha": float(np.sqrt(2.0) / 3.0),
                   "lam": 2.0, "potential": potential},
        "tau": 1e-5,
        "t_end": 0.05,
        "fine_n": 128,
        "coarse_n": 1,
        "snapshot_cadence": 1000,
    }


def _preset_cap(center, tag: str, density: dict, t_end: float) -> dict:
    return {
        "name": f"cap-growth-{tag}",
        "geometry": {"kind": "cap", "resolution": 24, "dirichlet_rim": True},
        "density": density,
        "seed": {"kind": "circle", "center": list(center), "radius": 0.02},
        "params": {"epsilon": EPS32, "alpha": 0.03, "rho": 0.01,
                   "w_dirichlet": -8.0, "varrho_variant": "ii"},
        "tau": 1e-5,
        "t_end": t_end,
        "fine_n": 128,
        "coarse_n": 16,
        "snapshot_cadence": 500,
    }


_HEX_A = {"kind": "hexagonal3d", "variant": "a", "delta": 0.01}
_HEX_2D = {"kind": "hexagonal2d_sphere", "delta": 0.01}

PRESETS: dict[str, dict] = {
    "sink": {
        "name": "sink",
        "geometry": {"kind": "rectangle", "half_width": 1.5,
                     "half_height": 0.5, "resolution": 8},
        "density": {"kind": "inhomogeneous_isotropic", "offset": 0.01},
        "seed": {"kind": "circle", "center": [-1.0, 0.0], "radius": 0.3},
        "params": {"epsilon": EPS16},
        "tau": 1e-4,
        "t_end": 2.0,
        "fine_n": 512,
        "coarse_n": 32,
        "snapshot_cadence": 2000,
    },
    "great-circle-10": _preset_great_circle(10.0),
    "great-circle-30": _preset_great_circle(30.0),
    "great-circle-60": _preset_great_circle(60.0),
    "annulus-obstacle": _preset_annulus("obstacle"),
    "annulus-quartic": _preset_annulus("quartic"),
    "spinodal-isotropic": _preset_spinodal({"kind": "isotropic"},
                                           "isotropic"),
    "spinodal-hexagonal": _preset_spinodal(_HEX_A, "hexagonal"),
    "cap-growth": _preset_cap((0.0, 0.0, 1.0), "pole", _HEX_A, 0.1),
    "cap-growth-equator": _preset_cap((1.0, 0.0, 0.0), "equator",
                                      _HEX_A, 0.02),
    "cap-growth-equator-2d": _preset_cap((1.0, 0.0, 0.0), "equator-2d",
                                         _HEX_2D, 0.02),
}


def _merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        merged = dict(base)
        for key, value in override.items():
            merged[key] = _merge(base.get(key), value)
        return merged
    return override


def _build(path, builder, value):
    try:
        return builder(value)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def make_config(data: dict, *, out_dir=None, rng_seed=None) -> RunConfig:
    """Validate a plain config mapping into a RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = copy.deepcopy(data)
    known = {"name", "geometry", "density", "params", "seed", "tau", "t_end",
             "fine_n", "coarse_n", "adapt_interval", "solver", "out_dir",
             "snapshot_cadence", "rng_seed", "stationarity_tol"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("geometry", "density", "params", "seed", "tau", "t_end",
                "fine_n", "coarse_n"):
        if key not in data:
            raise ConfigError(f"{key}: missing")

    if out_dir is not None:
        data["out_dir"] = out_dir
    if rng_seed is not None:
        data["rng_seed"] = rng_seed
    kwargs = dict(
        name=str(data.get("name", "run")),
        geometry=data["geometry"],
        density=_build("density", density_from_spec, data["density"]),
        params=_build("params", lambda v: ModelParams(**v), data["params"]),
        seed=_build("seed", seed_from_spec, data["seed"]),
        tau=_build("tau", float, data["tau"]),
        t_end=_build("t_end", float, data["t_end"]),
        fine_n=_build("fine_n", int, data["fine_n"]),
        coarse_n=_build("coarse_n", int, data["coarse_n"]),
    )
    if "adapt_interval" in data:
        kwargs["adapt_interval"] = _build("adapt_interval", int,
                                          data["adapt_interval"])
    if "solver" in data:
        kwargs["solver"] = _build("solver", lambda v: SolverConfig(**v),
                                  data["solver"])
    if "snapshot_cadence" in data:
        kwargs["snapshot_cadence"] = _build("snapshot_cadence", int,
                                            data["snapshot_cadence"])
    if "stationarity_tol" in data:
        kwargs["stationarity_tol"] = _build("stationarity_tol", float,
                                            data["stationarity_tol"])
    if data.get("out_dir") is not None:
        kwargs["out_dir"] = Path(data["out_dir"])
    if data.get("rng_seed") is not None:
        kwargs["rng_seed"] = _build("rng_seed", int, data["rng_seed"])
    return RunConfig(**kwargs)


def parse_config(path, *, preset=None, out_dir=None, rng_seed=None
                 ) -> RunConfig:
    """Load a YAML run configuration, optionally on top of a preset."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        data = loaded
    file_preset = data.pop("preset", None)
    preset = preset or file_preset
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"preset: unknown preset {preset!r}; "
                f"choose from {sorted(PRESETS)}")
        data = _merge(PRESETS[preset], data)
    if not data:
        raise ConfigError("empty configuration; give a file or --preset")
    return make_config(data, out_dir=out_dir, rng_seed=rng_seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(config: RunConfig, resume=None):
    if resume is not None:
        mesh, state = load_checkpoint(resume)
        config.mesh = mesh
        config.initial_state = state
    result = run_simulation(config)
    last = result.reports[-1] if result.reports else None
    print(f"{config.name}: {result.state.step} steps, "
          f"halted on {result.halt_reason}, "
          f"{result.mesh.n_vertices} vertices"
          + (f", F_h = {last.f_h:.6g}" if last else ""))
    if result.energy_log is not None:
        print(f"energy log: {result.energy_log}")
    if result.checkpoint_path is not None:
        print(f"checkpoint: {result.checkpoint_path}")
    return result


def cmd_oracle(config: dict, out_dir: Path):
    """Integrate the shrinking-annulus reference and write its CSV."""
    config = dict(config or {})
    name = config.pop("name", "annulus")
    state = initial_state(config.pop("radius1", 0.8),
                          config.pop("radius2", 0.4))
    potential = config.pop("potential", "obstacle")
    states = integrate_annulus(state,
                               alpha=config.pop("alpha", DEFAULT_ALPHA),
                               lam=config.pop("lam", DEFAULT_LAMBDA),
                               t_end=config.pop("t_end", 0.05),
                               dt=config.pop("dt", 1e-5))
    if config:
        raise ConfigError(f"oracle: unknown keys {sorted(config)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}_reference.csv"
    write_reference_csv(path, states, c_psi(potential))
    print(f"reference trajectory: {path} ({len(states)} rows)")
    return path


def density_from_cli(text: str) -> AnisotropyDensity:
    """Density from a YAML file path or a ``kind:key=value`` shorthand."""
    path = Path(text)
    if path.exists():
        spec = yaml.safe_load(path.read_text())
        return density_from_spec(spec)
    parts = text.split(":")
    spec: dict = {"kind": parts[0]}
    for item in parts[1:]:
        if "=" not in item:
            raise ConfigError(
                f"density shorthand {text!r}: expected key=value, "
                f"got {item!r}")
        key, value = item.split("=", 1)
        try:
            spec[key] = float(value)
        except ValueError:
            spec[key] = value
    return density_from_spec(spec)


def _wulff_frame(label: str, z: np.ndarray) -> np.ndarray:
    axes = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
    if label in axes:
        frame = np.zeros((2, 3))
        frame[0, axes[label][0]] = 1.0
        frame[1, axes[label][1]] = 1.0
        return frame
    if label == "tangent":
        norm = np.linalg.norm(z)
        if norm < 1e-12:
            raise ConfigError("tangent frame needs a nonzero base point")
        normal = z / norm
        helper = np.array([1.0, 0.0, 0.0])
        if abs(normal[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        u = np.cross(normal, helper)
        u /= np.linalg.norm(u)
        return np.vstack([u, np.cross(normal, u)])
    raise ConfigError(f"unknown frame {label!r}")


def cmd_wulff(density_text: str, z_text: str, out_dir: Path,
              n_dirs: int = 256, frame: str = "xy"):
    density = density_from_cli(density_text)
    try:
        z = np.array([float(v) for v in z_text.split(",")])
    except ValueError:
        raise ConfigError(f"z: expected comma separated floats, "
                          f"got {z_text!r}") from None
    if z.shape != (3,):
        raise ConfigError("z: expected three components")
    basis = _wulff_frame(frame, z)
    curve = wulff_sample(density, z, n_dirs=n_dirs, tangent_frame=basis)
    points = curve @ basis
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"wulff_{density.name or 'density'}.vtk"
    write_polyline_vtk(path, points)
    print(f"wulff curve: {path} ({n_dirs} samples)")
    return path


def cmd_convergence(config: dict, out_dir: Path):
    """Annulus runs over an epsilon series for both potentials.

    Writes one joined CSV of phase-field vs sharp energies and a summary
    CSV with the sup-deviation of every run.
    """
    config = dict(config or {})
    epsilons = list(config.pop("epsilons", [EPS8, EPS16, EPS32]))
    tau = float(config.pop("tau", 1e-5))
    t_end = float(config.pop("t_end", 0.02))
    coarse_n = int(config.pop("coarse_n", 1))
    fine_n = config.pop("fine_n", None)
    subdivisions = int(config.pop("subdivisions", 3))
    adapt_interval = int(config.pop("adapt_interval", 10))
    potentials = list(config.pop("potentials", ["obstacle", "quartic"]))
    solver = config.pop("solver", None)
    if config:
        raise ConfigError(f"convergence: unknown keys {sorted(config)}")

    out_dir.mkdir(parents=True, exist_ok=True)
    sharp_states = integrate_annulus(initial_state(), t_end=t_end, dt=tau)
    rows = []
    summary = []
    for potential in potentials:
        times, sharp = energy_curve(sharp_states, c_psi(potential))
        for eps in epsilons:
            # resolve each interface width with a comparable element count
            n_f = int(fine_n) if fine_n is not None else \
                max(coarse_n, int(round(4.0 / (np.pi * eps))))
            cfg = RunConfig(
                name=f"annulus-{potential}-{eps:.5f}",
                geometry={"kind": "icosphere", "subdivisions": subdivisions},
                density=density_from_spec({"kind": "isotropic"}),
                params=ModelParams(epsilon=eps, lam=2.0,
                                   alpha=float(np.sqrt(2.0) / 3.0),
                                   potential=potential),
                seed=seed_from_spec({"kind": "annulus",
                                     "theta1": ANNULUS_THETA1,
                                     "theta2": ANNULUS_THETA2}),
                tau=tau, t_end=t_end, fine_n=n_f, coarse_n=coarse_n,
                adapt_interval=adapt_interval,
                solver=SolverConfig(**solver) if solver else SolverConfig(),
                stationarity_tol=0.0)
            result = run_simulation(cfg)
            deviation = 0.0
            for report, time, reference in zip(result.reports, times, sharp):
                rows.append((potential, eps, time,
                             report.bare_interfacial_energy, reference))
                deviation = max(deviation,
                                abs(report.bare_interfacial_energy
                                    - reference))
            summary.append((potential, eps, deviation))
            print(f"{potential} eps={eps:.5f} N_f={n_f}: "
                  f"sup deviation {deviation:.5f}")

    joined = out_dir / "convergence_energies.csv"
    with open(joined, "w") as fh:
        fh.write("potential,epsilon,time,phase_field_energy,sharp_energy\n")
        for potential, eps, time, e_pf, e_sharp in rows:
            fh.write(f"{potential},{float(eps)!r},{float(time)!r},"
                     f"{float(e_pf)!r},{float(e_sharp)!r}\n")
    summary_path = out_dir / "convergence_summary.csv"
    with open(summary_path, "w") as fh:
        fh.write("potential,epsilon,sup_deviation\n")
        for potential, eps, deviation in summary:
            fh.write(f"{potential},{float(eps)!r},{float(deviation)!r}\n")
    print(f"joined energies: {joined}")
    print(f"summary: {summary_path}")
    return joined, summary_path


# ---------------------------------------------------------------------------
# entry point


def _load_optional_yaml(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    loaded = yaml.safe_load(path.read_text())
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return loaded


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfphase",
        description="Anisotropic phase-field evolutions on surfaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one simulation")
    run_p.add_argument("config", nargs="?", help="YAML run configuration")
    run_p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
    run_p.add_argument("--out-dir", default="out")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the random-mixture seed")
    run_p.add_argument("--resume", default=None,
                       help="checkpoint file to continue from")

    oracle_p = sub.add_parser("oracle",
                              help="write the sharp-interface reference")
    oracle_p.add_argument("config", nargs="?")
    oracle_p.add_argument("--out-dir", default="out")

    wulff_p = sub.add_parser("wulff", help="sample a Wulff curve")
    wulff_p.add_argument("density", help="spec file or kind:key=value")
    wulff_p.add_argument("z", help="base point, e.g. 0,0,1")
    wulff_p.add_argument("--out-dir", default="out")
    wulff_p.add_argument("--n-dirs", type=int, default=256)
    wulff_p.add_argument("--frame", default="xy",
                         choices=["xy", "xz", "yz", "tangent"])

    conv_p = sub.add_parser("convergence",
                            help="epsilon series against the oracle")
    conv_p.add_argument("config", nargs="?")
    conv_p.add_argument("--out-dir", default="out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = parse_config(args.config, preset=args.preset,
                                  out_dir=args.out_dir, rng_seed=args.seed)
            cmd_run(config, resume=args.resume)
        elif args.command == "oracle":
            cmd_oracle(_load_optional_yaml(args.config), Path(args.out_dir))
        elif args.command == "wulff":
            cmd_wulff(args.density, args.z, Path(args.out_dir),
                      n_dirs=args.n_dirs, frame=args.frame)
        elif args.command == "convergence":
            cmd_convergence(_load_optional_yaml(args.config),
                            Path(args.out_dir))
    except SurfphaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
