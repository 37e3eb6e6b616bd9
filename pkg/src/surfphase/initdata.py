"""Initial phase fields for the experiment families.

Every seed kind describes an interface through a signed distance that is
positive inside the crystal phase.  The nodal phase field is the matched
one-dimensional profile of the chosen potential evaluated at that
distance: a clamped sine for the obstacle potential (interfaces of exact
width pi*epsilon) and tanh for the quartic one.  Random mixtures skip
the distance construction and draw nodal values directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import lumped_mass_weights
from .errors import ConfigError
from .mesh import PlaneSurface, SphereSurface, SurfaceMesh

_ON_SURFACE_TOL = 1e-9


@dataclass
class CircleSeed:
    """Geodesic disk of the given radius around a center on the surface."""

    center: tuple
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape == (2,):
            center = np.append(center, 0.0)
        if center.shape != (3,):
            raise ConfigError("seed center must have 2 or 3 coordinates")
        self.center = center
        if self.radius <= 0:
            raise ConfigError("seed radius must be positive")

    def spec(self):
        return {"kind": "circle", "center": [float(c) for c in self.center],
                "radius": float(self.radius)}


@dataclass
class MultiSeed:
    """Union of several disks; the distance is the max over members."""

    seeds: list

    def __post_init__(self):
        if not self.seeds or not all(isinstance(s, CircleSeed)
                                     for s in self.seeds):
            raise ConfigError("multi seed needs at least one circle seed")

    def spec(self):
        return {"kind": "multi", "seeds": [s.spec() for s in self.seeds]}


@dataclass
class AnnulusBand:
    """Band between two latitude circles on the unit sphere."""

    theta1: float
    theta2: float

    def __post_init__(self):
        if not 0.0 < self.theta1 < self.theta2 < np.pi:
            raise ConfigError(
                "annulus band needs 0 < theta1 < theta2 < pi")

    def spec(self):
        return {"kind": "annulus", "theta1": float(self.theta1),
                "theta2": float(self.theta2)}


@dataclass
class TiltedGreatCircle:
    """Great circle whose plane makes ``tilt_degrees`` with the x-z-plane,
    with a deterministic three-lobe perturbation of the interface."""

    tilt_degrees: float
    perturbation: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.tilt_degrees <= 90.0:
            raise ConfigError("tilt must lie in [0, 90] degrees")
        if self.perturbation < 0:
            raise ConfigError("perturbation amplitude must be nonnegative")

    @property
    def normal(self) -> np.ndarray:
        tilt = np.deg2rad(self.tilt_degrees)
        return np.array([0.0, np.cos(tilt), np.sin(tilt)])

    def spec(self):
        return {"kind": "great_circle",
                "tilt_degrees": float(self.tilt_degrees),
                "perturbation": float(self.perturbation)}


@dataclass
class RandomMixture:
    """Independent uniform nodal values with exact zero lumped mean."""

    amplitude: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.amplitude < 1.0:
            raise ConfigError("mixture amplitude must lie in (0, 1)")

    def spec(self):
        return {"kind": "random", "amplitude": float(self.amplitude),
                "seed": int(self.seed)}


def seed_from_spec(spec) -> object:
    if isinstance(spec, (CircleSeed, MultiSeed, AnnulusBand,
                         TiltedGreatCircle, RandomMixture)):
        return spec
    if not isinstance(spec, dict):
        raise ConfigError("seed spec must be a mapping")
    data = dict(spec)
    kind = data.pop("kind", None)
    makers = {
        "circle": CircleSeed,
        "multi": lambda **kw: MultiSeed(
            seeds=[seed_from_spec(s) for s in kw["seeds"]]),
        "annulus": AnnulusBand,
        "great_circle": TiltedGreatCircle,
        "random": RandomMixture,
    }
    if kind not in makers:
        raise ConfigError(f"unknown seed kind {kind!r}")
    try:
        return makers[kind](**data)
    except TypeError as exc:
        raise ConfigError(f"bad fields for seed kind {kind!r}: {exc}")


def tilted_great_circle_distance(points, tilt_degrees, perturbation=0.02):
    """Signed geodesic distance to the perturbed tilted great circle."""
    seed = TiltedGreatCircle(tilt_degrees, perturbation)
    single = np.asarray(points).ndim == 1
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = seed.normal
    base = np.arcsin(np.clip(p @ n, -1.0, 1.0))
    if perturbation:
        # azimuth in the circle plane; e1 is orthogonal to every normal
        v = np.array([0.0, n[2], -n[1]])
        azimuth = np.arctan2(p @ v, p[:, 0])
        base = base - perturbation * np.sin(3.0 * azimuth)
    return float(base[0]) if single else base


def _require_on_sphere(center):
    if abs(np.linalg.norm(center) - 1.0) > _ON_SURFACE_TOL:
        raise ConfigError("seed center does not lie on the unit sphere")


def _circle_distance(points, seed: CircleSeed, surface):
    if isinstance(surface, SphereSurface):
        _require_on_sphere(seed.center)
        cosines = np.clip(points @ seed.center, -1.0, 1.0)
        return seed.radius - np.arccos(cosines)
    if isinstance(surface, PlaneSurface):
        if abs(seed.center[2]) > _ON_SURFACE_TOL:
            raise ConfigError("planar seed center must have z = 0")
        return seed.radius - np.linalg.norm(points - seed.center, axis=1)
    raise ConfigError("circle seeds need a sphere, cap or plane surface")


def distance_on_surface(mesh: SurfaceMesh, seed) -> np.ndarray:
    """Signed interface distance at every vertex, positive inside."""
    points = mesh.vertices
    surface = mesh.surface
    if isinstance(seed, CircleSeed):
        return _circle_distance(points, seed, surface)
    if isinstance(seed, MultiSeed):
        return np.max([_circle_distance(points, s, surface)
                       for s in seed.seeds], axis=0)
    if isinstance(seed, AnnulusBand):
        if not isinstance(surface, SphereSurface):
            raise ConfigError("annulus bands are defined on the sphere")
        theta = np.arccos(np.clip(points[:, 2], -1.0, 1.0))
        return np.minimum(theta - seed.theta1, seed.theta2 - theta)
    if isinstance(seed, TiltedGreatCircle):
        if not isinstance(surface, SphereSurface):
            raise ConfigError("great circles are defined on the sphere")
        return np.atleast_1d(tilted_great_circle_distance(
            points, seed.tilt_degrees, seed.perturbation))
    raise ConfigError(f"seed kind {type(seed).__name__} has no distance")


def distance_profile(distance, epsilon, potential):
    """Matched one-dimensional interface profile at a signed distance."""
    d = np.asarray(distance, dtype=np.float64)
    if potential == "obstacle":
        return np.sin(np.clip(d / epsilon, -0.5 * np.pi, 0.5 * np.pi))
    if potential == "quartic":
        return np.tanh(d / (np.sqrt(2.0) * epsilon))
    raise ConfigError(f"unknown potential {potential!r}")


def profile_phi0(mesh: SurfaceMesh, seed, epsilon: float,
                 potential: str = "obstacle") -> np.ndarray:
    """Initial nodal phase field for the given seed."""
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if isinstance(seed, RandomMixture):
        rng = np.random.default_rng(seed.seed)
        values = rng.uniform(-seed.amplitude, seed.amplitude,
                             mesh.n_vertices)
        m = lumped_mass_weights(mesh)
        values -= (m @ values) / m.sum()
        peak = np.abs(values).max()
        if peak > seed.amplitude:
            values *= seed.amplitude / peak
        return values
    return distance_profile(distance_on_surface(mesh, seed), epsilon,
                            potential)
