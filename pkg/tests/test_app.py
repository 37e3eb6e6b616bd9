import numpy as np
import pytest
import yaml

from surfphase.anisotropy import RotatedPlanarForm
from surfphase.app import (ANNULUS_THETA1, ANNULUS_THETA2, EPS16, PRESETS,
                           cmd_convergence, density_from_cli, main,
                           make_config, mesh_from_spec, parse_config)
from surfphase.errors import ConfigError
from surfphase.initdata import AnnulusBand, CircleSeed, RandomMixture
from surfphase.mesh import BoundaryTag
from surfphase.vtkio import read_surface_vtk


def tiny_config(**overrides):
    base = dict(
        name="tiny",
        geometry={"kind": "icosphere", "subdivisions": 1},
        density={"kind": "isotropic"},
        seed={"kind": "circle", "center": [0.0, 0.0, 1.0], "radius": 0.7},
        params={"epsilon": 0.08},
        tau=1e-4,
        t_end=2e-4,
        fine_n=8,
        coarse_n=1,
        snapshot_cadence=2,
    )
    base.update(overrides)
    return base


# ---------------------------------------------------------------------------
# configuration parsing


def test_sink_preset_values():
    cfg = parse_config(None, preset="sink")
    assert cfg.params.epsilon == pytest.approx(EPS16, rel=1e-15)
    assert cfg.tau == 1e-4 and cfg.t_end == 2.0
    assert cfg.fine_n == 512 and cfg.coarse_n == 32
    assert cfg.mesh.surface.kind == "plane"
    assert isinstance(cfg.seed, CircleSeed)
    assert cfg.seed.radius == 0.3
    np.testing.assert_allclose(cfg.seed.center, [-1.0, 0.0, 0.0])


def test_cap_preset_values():
    cfg = parse_config(None, preset="cap-growth")
    p = cfg.params
    assert (p.alpha, p.rho, p.w_dirichlet) == (0.03, 0.01, -8.0)
    assert p.varrho_variant == "ii"
    assert p.epsilon == pytest.approx(1.0 / (32 * np.pi), rel=1e-15)
    assert cfg.tau == 1e-5 and cfg.coarse_n == 16
    assert np.any(cfg.mesh.boundary_tags == BoundaryTag.DIRICHLET)
    # seed sits at the pole; the equator variants move it to the rim plane
    np.testing.assert_allclose(cfg.seed.center, [0.0, 0.0, 1.0])
    eq = parse_config(None, preset="cap-growth-equator")
    np.testing.assert_allclose(eq.seed.center, [1.0, 0.0, 0.0])
    flat = parse_config(None, preset="cap-growth-equator-2d")
    assert all(isinstance(t, RotatedPlanarForm) for t in flat.density.terms)


def test_annulus_preset_values():
    cfg = parse_config(None, preset="annulus-quartic")
    assert cfg.params.potential == "quartic"
    assert cfg.params.alpha == pytest.approx(np.sqrt(2.0) / 3.0, rel=1e-15)
    assert cfg.params.lam == 2.0
    assert isinstance(cfg.seed, AnnulusBand)
    assert cfg.seed.theta1 == pytest.approx(np.pi - np.arcsin(0.8))
    assert cfg.seed.theta2 == pytest.approx(np.pi - np.arcsin(0.4))
    assert ANNULUS_THETA1 < ANNULUS_THETA2


def test_great_circle_presets_cover_all_tilts():
    tilts = []
    for name in ("great-circle-10", "great-circle-30", "great-circle-60"):
        cfg = parse_config(None, preset=name)
        tilts.append(cfg.seed.tilt_degrees)
        assert cfg.seed.perturbation == 0.02
        assert cfg.t_end == 5.0
    assert tilts == [10.0, 30.0, 60.0]


def test_file_overrides_preset(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"preset": "sink", "tau": 5e-4,
                                    "name": "mine"}))
    cfg = parse_config(path)
    assert cfg.tau == 5e-4
    assert cfg.name == "mine"
    assert cfg.fine_n == 512


def test_cli_preset_beats_file_preset(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"preset": "sink"}))
    cfg = parse_config(path, preset="annulus-obstacle")
    assert cfg.name == "annulus-obstacle"


def test_rng_seed_override():
    cfg = parse_config(None, preset="spinodal-isotropic", rng_seed=11)
    assert isinstance(cfg.seed, RandomMixture)
    assert cfg.seed.seed == 11
    assert cfg.seed.amplitude == 0.1


def test_nested_merge_keeps_sibling_keys(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(
        {"preset": "sink", "params": {"theta": 0.5}}))
    cfg = parse_config(path)
    assert cfg.params.theta == 0.5
    assert cfg.params.epsilon == pytest.approx(EPS16, rel=1e-15)


@pytest.mark.parametrize("mangle, fragment", [
    (lambda d: d.update(tau=-1.0), "tau"),
    (lambda d: d.update(t_end=-0.5), "t_end"),
    (lambda d: d.update(fine_n=1, coarse_n=4), "fine_n"),
    (lambda d: d.update(adapt_interval=0), "adapt_interval"),
    (lambda d: d.update(snapshot_cadence=0), "snapshot_cadence"),
    (lambda d: d.pop("density"), "density"),
    (lambda d: d.update(extra=1), "extra"),
    (lambda d: d.update(geometry={"kind": "moebius"}), "geometry"),
    (lambda d: d.update(geometry={"kind": "icosphere", "twist": 2}),
     "twist"),
    (lambda d: d.update(seed={"kind": "circle", "center": [0, 0, 1],
                              "radius": -2.0}), "seed"),
    (lambda d: d.update(params={"epsilon": 0.08, "potential": "sextic"}),
     "params"),
])
def test_config_validation(mangle, fragment):
    data = tiny_config()
    mangle(data)
    with pytest.raises(ConfigError, match=fragment):
        make_config(data)


def test_missing_config_file():
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config("/nonexistent/run.yaml")


def test_empty_config_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("")
    with pytest.raises(ConfigError, match="empty configuration"):
        parse_config(path)


def test_mesh_from_spec_kinds():
    assert mesh_from_spec({"kind": "icosphere",
                           "subdivisions": 1}).n_vertices == 42
    cap = mesh_from_spec({"kind": "cap", "resolution": 8,
                          "dirichlet_rim": False})
    assert not np.any(cap.boundary_tags == BoundaryTag.DIRICHLET)
    rect = mesh_from_spec({"kind": "rectangle", "half_width": 1.5,
                           "half_height": 0.5, "resolution": 4})
    assert rect.surface.kind == "plane"
    with pytest.raises(ConfigError, match="mapping"):
        mesh_from_spec("icosphere")


def test_density_from_cli_shorthand():
    density = density_from_cli("hexagonal3d:variant=b:delta=0.02")
    assert density.name == "hexagonal3d_b"
    with pytest.raises(ConfigError, match="key=value"):
        density_from_cli("hexagonal3d:variant")


def test_density_from_cli_file(tmp_path):
    path = tmp_path / "density.yaml"
    path.write_text(yaml.safe_dump({"kind": "isotropic"}))
    assert density_from_cli(str(path)).name == "isotropic"


# ---------------------------------------------------------------------------
# subcommands through main()


def test_main_run_and_resume(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(yaml.safe_dump(tiny_config()))
    out = tmp_path / "a"
    assert main(["run", str(config), "--out-dir", str(out)]) == 0
    log = (out / "tiny_energy.csv").read_text()
    assert len(log.splitlines()) == 4  # header + initial + two steps
    assert "np.float64" not in log

    # the same horizon again, continued from the checkpoint: no new steps
    out2 = tmp_path / "b"
    assert main(["run", str(config), "--out-dir", str(out2), "--resume",
                 str(out / "tiny_checkpoint.npz")]) == 0
    assert (out2 / "tiny_checkpoint.npz").exists()

    # a longer horizon continues stepping from the saved state
    config4 = tmp_path / "tiny4.yaml"
    config4.write_text(yaml.safe_dump(tiny_config(t_end=4e-4)))
    out3 = tmp_path / "c"
    assert main(["run", str(config4), "--out-dir", str(out3), "--resume",
                 str(out / "tiny_checkpoint.npz")]) == 0
    rows = (out3 / "tiny_energy.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["3", "4"]


def test_main_run_deterministic(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(yaml.safe_dump(tiny_config()))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["run", str(config), "--out-dir", str(out)]) == 0
        outs.append((out / "tiny_energy.csv").read_bytes())
    assert outs[0] == outs[1]


def test_main_exit_code_on_config_error(tmp_path, capsys):
    assert main(["run", "--preset", "bogus"]) == 2
    assert "unknown preset" in capsys.readouterr().err
    config = tmp_path / "bad.yaml"
    config.write_text(yaml.safe_dump(tiny_config(tau=-1.0)))
    assert main(["run", str(config)]) == 2


def test_main_oracle_writes_reference(tmp_path, capsys):
    assert main(["oracle", "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    rows = (tmp_path / "annulus_reference.csv").read_text().splitlines()
    first = rows[1].split(",")
    assert float(first[0]) == 0.0
    assert float(first[3]) == pytest.approx(1.2 * np.pi ** 2, abs=1e-10)


def test_main_oracle_rejects_bad_radii(tmp_path, capsys):
    config = tmp_path / "oracle.yaml"
    config.write_text(yaml.safe_dump({"radius1": 0.4, "radius2": 0.8}))
    assert main(["oracle", str(config), "--out-dir", str(tmp_path)]) == 2
    assert "radius" in capsys.readouterr().err


def test_main_wulff_isotropic_circle(tmp_path):
    assert main(["wulff", "isotropic", "0,0,1", "--out-dir", str(tmp_path),
                 "--n-dirs", "48"]) == 0
    points, _, _ = read_surface_vtk(tmp_path / "wulff_isotropic.vtk")
    assert points.shape == (48, 3)
    radii = np.linalg.norm(points, axis=1)
    np.testing.assert_allclose(radii, 1.0, atol=1e-9)
    assert np.all(points[:, 2] == 0.0)


def test_main_wulff_tangent_frame(tmp_path):
    z = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    arg = ",".join(repr(float(v)) for v in z)
    assert main(["wulff", "isotropic", arg, "--out-dir", str(tmp_path),
                 "--frame", "tangent"]) == 0
    points, _, _ = read_surface_vtk(tmp_path / "wulff_isotropic.vtk")
    np.testing.assert_allclose(points @ z, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0,
                               atol=1e-9)


def test_main_wulff_bad_point(tmp_path, capsys):
    assert main(["wulff", "isotropic", "0,0", "--out-dir",
                 str(tmp_path)]) == 2
    assert "three components" in capsys.readouterr().err


def test_convergence_desk_scale(tmp_path, capsys):
    config = {
        "epsilons": [1.0 / (4 * np.pi), 1.0 / (8 * np.pi)],
        "tau": 1e-4,
        "t_end": 3e-4,
        "subdivisions": 2,
        "fine_n": 16,
        "potentials": ["obstacle", "quartic"],
    }
    joined, summary = cmd_convergence(config, tmp_path)
    capsys.readouterr()
    rows = joined.read_text().splitlines()
    assert rows[0] == "potential,epsilon,time,phase_field_energy,sharp_energy"
    assert len(rows) == 1 + 4 * 4  # four runs, four reports each
    table = summary.read_text().splitlines()
    assert len(table) == 5
    for line in table[1:]:
        potential, eps, dev = line.split(",")
        assert potential in ("obstacle", "quartic")
        assert np.isfinite(float(dev)) and float(dev) >= 0.0


def test_convergence_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        cmd_convergence({"epsilon": 0.1}, tmp_path)


def test_zero_horizon_run(tmp_path):
    config = tmp_path / "zero.yaml"
    config.write_text(yaml.safe_dump(tiny_config(t_end=0.0)))
    assert main(["run", str(config), "--out-dir", str(tmp_path)]) == 0
    rows = (tmp_path / "tiny_energy.csv").read_text().splitlines()
    assert len(rows) == 2


def test_presets_all_parse():
    for name in PRESETS:
        cfg = parse_config(None, preset=name)
        assert cfg.mesh is not None and cfg.mesh.n_vertices > 0
        assert cfg.params.epsilon > 0
