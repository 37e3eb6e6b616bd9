import numpy as np
import pytest

from surfphase.assembly import lumped_mass_weights
from surfphase.errors import ConfigError
from surfphase.initdata import (AnnulusBand, CircleSeed, MultiSeed,
                                RandomMixture, TiltedGreatCircle,
                                distance_on_surface, distance_profile,
                                profile_phi0, seed_from_spec,
                                tilted_great_circle_distance)
from surfphase.mesh import build_icosphere, build_planar_rect


@pytest.fixture(scope="module")
def sphere():
    return build_icosphere(3)


def test_circle_distance_on_sphere(sphere):
    seed = CircleSeed(center=(0.0, 0.0, 1.0), radius=0.3)
    d = distance_on_surface(sphere, seed)
    theta = np.arccos(np.clip(sphere.vertices[:, 2], -1, 1))
    assert np.allclose(d, 0.3 - theta, atol=1e-12)
    north = np.argmax(sphere.vertices[:, 2])
    assert d[north] == pytest.approx(0.3)


def test_circle_distance_on_plane():
    mesh = build_planar_rect(1.5, 0.5, 8)
    seed = CircleSeed(center=(-1.0, 0.0), radius=0.3)
    d = distance_on_surface(mesh, seed)
    probe = np.argmin(np.linalg.norm(
        mesh.vertices - np.array([-1.0, 0.25, 0.0]), axis=1))
    expect = 0.3 - np.linalg.norm(mesh.vertices[probe, :2]
                                  - np.array([-1.0, 0.0]))
    assert d[probe] == pytest.approx(expect, abs=1e-14)
    # the spec point (-1, 0.3) lies exactly on the interface
    assert abs(0.3 - np.linalg.norm(np.array([-1.0, 0.3])
                                    - np.array([-1.0, 0.0]))) < 1e-15


def test_multi_seed_is_union(sphere):
    seeds = MultiSeed(seeds=[CircleSeed(center=(0, 0, 1), radius=0.2),
                             CircleSeed(center=(1, 0, 0), radius=0.2)])
    d = distance_on_surface(sphere, seeds)
    north = np.argmax(sphere.vertices[:, 2])
    east = np.argmax(sphere.vertices[:, 0])
    assert d[north] > 0 and d[east] > 0
    south = np.argmin(sphere.vertices[:, 2])
    assert d[south] < 0


def test_annulus_band_signs(sphere):
    band = AnnulusBand(theta1=np.pi - np.arcsin(0.8),
                       theta2=np.pi - np.arcsin(0.4))
    d = distance_on_surface(sphere, band)
    theta = np.arccos(np.clip(sphere.vertices[:, 2], -1, 1))
    inside = (theta > band.theta1 + 0.05) & (theta < band.theta2 - 0.05)
    outside = (theta < band.theta1 - 0.05) | (theta > band.theta2 + 0.05)
    assert np.all(d[inside] > 0)
    assert np.all(d[outside] < 0)


def test_tilted_circle_pole_and_equator():
    # tilt 0: the circle lies in the x-z-plane, e2 is its pole
    assert tilted_great_circle_distance(
        np.array([0.0, 1.0, 0.0]), 0.0) == pytest.approx(np.pi / 2)
    # tilt 90 recovers the equator
    p = np.array([0.6, 0.0, 0.8])
    assert tilted_great_circle_distance(p, 90.0, perturbation=0.0) == \
        pytest.approx(np.arcsin(0.8))


def test_tilted_circle_odd_symmetry():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((50, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    n = TiltedGreatCircle(35.0, 0.0).normal
    reflected = pts - 2.0 * np.outer(pts @ n, n)
    d1 = tilted_great_circle_distance(pts, 35.0, perturbation=0.0)
    d2 = tilted_great_circle_distance(reflected, 35.0, perturbation=0.0)
    assert np.allclose(d1, -d2, atol=1e-12)


def test_distance_lipschitz_on_sphere(sphere):
    rng = np.random.default_rng(7)
    seed = CircleSeed(center=(0, 0, 1), radius=0.5)
    d = distance_on_surface(sphere, seed)
    n = sphere.n_vertices
    i = rng.integers(0, n, 300)
    j = rng.integers(0, n, 300)
    dots = np.clip((sphere.vertices[i] * sphere.vertices[j]).sum(axis=1),
                   -1, 1)
    geo = np.arccos(dots)
    assert np.all(np.abs(d[i] - d[j]) <= geo + 1e-10)


def test_obstacle_profile_clamps_and_interpolates(sphere):
    eps = 1.0 / (16 * np.pi)
    seed = CircleSeed(center=(0, 0, 1), radius=0.5)
    phi = profile_phi0(sphere, seed, eps, "obstacle")
    d = distance_on_surface(sphere, seed)
    assert np.abs(phi).max() <= 1.0
    assert np.all(phi[d >= eps * np.pi / 2] == 1.0)
    assert np.all(phi[d <= -eps * np.pi / 2] == -1.0)
    band = np.abs(d) < eps * np.pi / 2
    assert np.allclose(phi[band], np.sin(d[band] / eps), atol=1e-14)


def test_quartic_profile_is_tanh(sphere):
    eps = 0.05
    seed = CircleSeed(center=(0, 0, 1), radius=0.5)
    phi = profile_phi0(sphere, seed, eps, "quartic")
    d = distance_on_surface(sphere, seed)
    assert np.allclose(phi, np.tanh(d / (np.sqrt(2) * eps)), atol=1e-14)
    band = np.abs(d) < 2 * eps
    assert np.all(np.abs(phi[band]) < 1.0)


def test_profile_width_scales_with_epsilon():
    d = np.linspace(-1.0, 1.0, 20001)
    widths = []
    for eps in (0.1, 0.05):
        phi = distance_profile(d, eps, "obstacle")
        open_band = np.abs(phi) < 1.0
        widths.append(d[open_band].max() - d[open_band].min())
        assert widths[-1] == pytest.approx(np.pi * eps, abs=2e-4)
    assert widths[1] == pytest.approx(0.5 * widths[0], abs=4e-4)


def test_random_mixture_mean_amplitude_reproducible(sphere):
    mix = RandomMixture(amplitude=0.1, seed=42)
    phi = profile_phi0(sphere, mix, 0.05, "obstacle")
    m = lumped_mass_weights(sphere)
    assert abs(m @ phi) < 1e-12 * m.sum()
    assert np.abs(phi).max() <= 0.1 + 1e-15
    again = profile_phi0(sphere, mix, 0.05, "obstacle")
    assert np.array_equal(phi, again)
    other = profile_phi0(sphere, RandomMixture(0.1, seed=43), 0.05,
                         "obstacle")
    assert not np.array_equal(phi, other)


def test_seed_spec_round_trip():
    seeds = [CircleSeed(center=(0, 0, 1), radius=0.02),
             MultiSeed(seeds=[CircleSeed(center=(1, 0, 0), radius=0.1)]),
             AnnulusBand(theta1=2.0, theta2=2.6),
             TiltedGreatCircle(30.0),
             RandomMixture(0.1, seed=3)]
    for seed in seeds:
        clone = seed_from_spec(seed.spec())
        assert clone.spec() == seed.spec()
    assert seed_from_spec(seeds[0]) is seeds[0]


def test_validation_errors(sphere):
    with pytest.raises(ConfigError):
        CircleSeed(center=(0, 0, 1), radius=-1.0)
    with pytest.raises(ConfigError):
        CircleSeed(center=(0, 0, 1, 0), radius=0.1)
    with pytest.raises(ConfigError):
        RandomMixture(amplitude=1.5)
    with pytest.raises(ConfigError):
        TiltedGreatCircle(120.0)
    with pytest.raises(ConfigError):
        AnnulusBand(theta1=2.6, theta2=2.0)
    with pytest.raises(ConfigError):
        MultiSeed(seeds=[])
    with pytest.raises(ConfigError):
        seed_from_spec({"kind": "nope"})
    with pytest.raises(ConfigError):
        seed_from_spec({"kind": "circle", "radius": 0.1, "bogus": 1})
    # off-surface center
    with pytest.raises(ConfigError):
        distance_on_surface(sphere, CircleSeed(center=(0, 0, 2), radius=0.1))
    # band on the wrong surface
    rect = build_planar_rect(1.0, 1.0, 2)
    with pytest.raises(ConfigError):
        distance_on_surface(rect, AnnulusBand(theta1=2.0, theta2=2.5))
    with pytest.raises(ConfigError):
        distance_profile(np.zeros(3), 0.05, "bogus")
    with pytest.raises(ConfigError):
        profile_phi0(sphere, RandomMixture(0.1), -1.0)
