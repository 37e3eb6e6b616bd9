from types import SimpleNamespace

import numpy as np
import pytest

from surfphase.anisotropy import make_hexagonal_3d, make_isotropic
from surfphase.assembly import assemble_anisotropic_stiffness, \
    assemble_diffusion, lumped_mass_weights
from surfphase.errors import ConfigError
from surfphase.initdata import AnnulusBand, CircleSeed, RandomMixture, \
    profile_phi0
from surfphase.mesh import build_icosphere
from surfphase.scheme import (CSV_COLUMNS, EnergyReport, FieldState,
                              ModelParams, c_psi, compute_energy,
                              load_checkpoint, psi_value, run_simulation,
                              save_checkpoint, step_obstacle, step_smooth,
                              varrho)


def run_config(tmp_path=None, **overrides):
    base = dict(
        mesh=build_icosphere(2),
        density=make_isotropic(),
        params=ModelParams(epsilon=1.0 / (4 * np.pi)),
        seed=RandomMixture(0.1, seed=5),
        tau=1e-6,
        t_end=2e-5,
        fine_n=8,
        coarse_n=2,
        adapt_interval=7,
        snapshot_cadence=5,
        name="mix",
        out_dir=tmp_path,
    )
    base.update(overrides)
    return SimpleNamespace(**base)


def test_c_psi_values():
    assert c_psi("obstacle") == pytest.approx(np.pi / 2, abs=1e-15)
    assert c_psi("quartic") == pytest.approx(2 * np.sqrt(2) / 3, abs=1e-15)
    with pytest.raises(ConfigError):
        c_psi("cubic")


def test_varrho_variants():
    assert varrho(0.3, "i") == 0.5
    assert varrho(1.0, "ii") == 0.0
    assert varrho(-1.0, "ii") == 1.0
    assert varrho(0.0, "iii") == 15.0 / 16.0
    assert varrho(1.0, "iii") == 0.0
    with pytest.raises(ConfigError):
        varrho(0.0, "iv")


def test_psi_values():
    assert psi_value(1.0, "obstacle") == 0.0
    assert psi_value(0.0, "obstacle") == 0.5
    assert psi_value(0.0, "quartic") == 0.25
    assert psi_value(-1.0, "quartic") == 0.0


def test_params_validation():
    with pytest.raises(ConfigError):
        ModelParams(epsilon=-0.1)
    with pytest.raises(ConfigError):
        ModelParams(epsilon=0.1, theta=-1)
    with pytest.raises(ConfigError):
        ModelParams(epsilon=0.1, lam=0)
    with pytest.raises(ConfigError):
        ModelParams(epsilon=0.1, kappa=(1.0, -2.0))
    with pytest.raises(ConfigError):
        ModelParams(epsilon=0.1, potential="smooth")
    with pytest.raises(ConfigError):
        ModelParams(epsilon=0.1, varrho_variant="iv")


def test_saturated_state_energy_is_pure_bulk():
    mesh = build_icosphere(2)
    params = ModelParams(epsilon=0.1, theta=0.5, lam=2.0, w_dirichlet=-3.0)
    n = mesh.n_vertices
    state = FieldState(phi=np.ones(n), w=np.full(n, -3.0))
    report = compute_energy(state, mesh, make_isotropic(), params)
    area = lumped_mass_weights(mesh).sum()
    assert report.e_h == pytest.approx(0.0, abs=1e-13)
    assert report.f_h == pytest.approx(2.0 * 3.0 * area, rel=1e-13)
    assert report.bare_interfacial_energy == pytest.approx(0.0, abs=1e-12)


def test_obstacle_state_invariant_rejected():
    mesh = build_icosphere(1)
    params = ModelParams(epsilon=0.1)
    n = mesh.n_vertices
    state = FieldState(phi=np.full(n, 1.5), w=np.zeros(n))
    with pytest.raises(ConfigError):
        step_obstacle(state, mesh, make_isotropic(), params, 1e-3)


def test_potential_guards():
    mesh = build_icosphere(1)
    n = mesh.n_vertices
    state = FieldState(phi=np.zeros(n), w=np.zeros(n))
    quartic = ModelParams(epsilon=0.1, potential="quartic")
    obstacle = ModelParams(epsilon=0.1)
    with pytest.raises(ConfigError):
        step_obstacle(state, mesh, make_isotropic(), quartic, 1e-3)
    with pytest.raises(ConfigError):
        step_smooth(state, mesh, make_isotropic(), obstacle, 1e-3)


def test_isotropic_stiffness_equals_plain_diffusion():
    mesh = build_icosphere(2)
    phi = np.sin(3 * mesh.vertices[:, 0])
    an = assemble_anisotropic_stiffness(mesh, make_isotropic(), phi)
    iso = assemble_diffusion(mesh)
    assert abs(an - iso).max() < 1e-12


def test_mass_conserved_per_step():
    mesh = build_icosphere(3)
    params = ModelParams(epsilon=1.0 / (8 * np.pi), lam=1.5)
    rng = np.random.default_rng(11)
    phi = rng.uniform(-0.1, 0.1, mesh.n_vertices)
    m = lumped_mass_weights(mesh)
    phi -= (m @ phi) / m.sum()
    state = FieldState(phi=phi, w=np.zeros(mesh.n_vertices))
    density = make_isotropic()
    for _ in range(5):
        new_state, _ = step_obstacle(state, mesh, density, params, 1e-6)
        drift = params.theta * (m @ (new_state.w - state.w)) \
            + 0.5 * params.lam * (m @ (new_state.phi - state.phi))
        assert abs(drift) < 1e-10 * m.sum()
        state = new_state


def stability_gap(reports, tau):
    """Worst violation of the per-step energy decrease, normalized."""
    worst = -np.inf
    for prev, cur in zip(reports, reports[1:]):
        lhs = cur.f_h + tau * cur.dissipation_diffusion \
            + tau * cur.dissipation_rate
        slack = 1e-9 * abs(cur.f_h)
        worst = max(worst, lhs - prev.f_h - slack)
    return worst


def test_obstacle_stability_on_mixture():
    mesh = build_icosphere(3)
    params = ModelParams(epsilon=1.0 / (8 * np.pi))
    mix = RandomMixture(0.1, seed=2)
    state = FieldState(phi=profile_phi0(mesh, mix, params.epsilon),
                       w=np.zeros(mesh.n_vertices))
    density = make_hexagonal_3d("a")
    tau = 1e-6
    reports = [compute_energy(state, mesh, density, params)]
    for _ in range(40):
        state, report = step_obstacle(state, mesh, density, params, tau)
        reports.append(report)
    assert stability_gap(reports, tau) <= 0.0
    assert reports[-1].f_h < reports[0].f_h


def test_smooth_stability_on_annulus():
    mesh = build_icosphere(3)
    params = ModelParams(epsilon=1.0 / (8 * np.pi), lam=2.0,
                         alpha=np.sqrt(2.0) / 3.0, potential="quartic")
    band = AnnulusBand(theta1=np.pi - np.arcsin(0.8),
                       theta2=np.pi - np.arcsin(0.4))
    state = FieldState(phi=profile_phi0(mesh, band, params.epsilon,
                                        "quartic"),
                       w=np.zeros(mesh.n_vertices))
    density = make_isotropic()
    tau = 1e-6
    reports = [compute_energy(state, mesh, density, params)]
    for _ in range(30):
        state, report = step_smooth(state, mesh, density, params, tau)
        reports.append(report)
    assert stability_gap(reports, tau) <= 0.0


def test_rate_dissipation_reported_when_rho_positive():
    mesh = build_icosphere(2)
    params = ModelParams(epsilon=0.05, rho=0.01, alpha=0.5)
    seed = CircleSeed(center=(0, 0, 1), radius=0.6)
    state = FieldState(phi=profile_phi0(mesh, seed, params.epsilon),
                       w=np.zeros(mesh.n_vertices))
    _, report = step_obstacle(state, mesh, make_isotropic(), params, 1e-5)
    assert report.dissipation_rate > 0.0
    assert report.dissipation_diffusion >= 0.0


def test_run_zero_steps_writes_single_row_and_snapshot(tmp_path):
    cfg = run_config(tmp_path, t_end=0.0)
    result = run_simulation(cfg)
    rows = result.energy_log.read_text().strip().splitlines()
    assert rows[0] == ",".join(CSV_COLUMNS)
    assert len(rows) == 2 and rows[1].startswith("0,")
    assert [p.name for p in result.snapshot_paths] == ["mix_0.vtk"]
    assert result.halt_reason == "horizon"
    assert result.checkpoint_path.exists()
    assert len(result.reports) == 1


def test_run_is_deterministic(tmp_path):
    first = run_simulation(run_config(tmp_path / "a"))
    second = run_simulation(run_config(tmp_path / "b"))
    assert first.energy_log.read_bytes() == second.energy_log.read_bytes()
    assert len(first.reports) == 21


def test_energy_log_monotone(tmp_path):
    result = run_simulation(run_config(tmp_path))
    f_values = [r.f_h for r in result.reports]
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(f_values, f_values[1:]))


def test_stationary_halt(tmp_path):
    # a fully saturated phase cannot move
    cfg = run_config(tmp_path, seed=CircleSeed(center=(0, 0, 1), radius=4.0),
                     t_end=1e-3, tau=1e-5)
    result = run_simulation(cfg)
    assert result.halt_reason == "stationary"
    assert result.state.step == 1
    assert np.all(result.state.phi == 1.0)


def test_restart_matches_straight_run(tmp_path):
    full = run_simulation(run_config(tmp_path / "full"))
    half = run_simulation(run_config(tmp_path / "half", t_end=1e-5))
    mesh, state = load_checkpoint(half.checkpoint_path)
    assert state.step == 10
    resume_cfg = run_config(tmp_path / "resume", mesh=mesh, seed=None,
                            initial_state=state)
    resumed = run_simulation(resume_cfg)

    def by_step(path):
        rows = path.read_text().strip().splitlines()[1:]
        return {int(r.split(",")[0]): r for r in rows}

    full_rows = by_step(full.energy_log)
    for step, row in by_step(resumed.energy_log).items():
        assert full_rows[step] == row


def test_checkpoint_round_trip(tmp_path):
    mesh = build_icosphere(2)
    rng = np.random.default_rng(0)
    state = FieldState(phi=rng.uniform(-1, 1, mesh.n_vertices),
                       w=rng.standard_normal(mesh.n_vertices),
                       time=0.125, step=7)
    path = tmp_path / "chk.npz"
    save_checkpoint(path, mesh, state)
    mesh2, state2 = load_checkpoint(path)
    assert np.array_equal(mesh2.vertices, mesh.vertices)
    assert np.array_equal(mesh2.triangles, mesh.triangles)
    assert mesh2.surface.spec() == mesh.surface.spec()
    assert np.array_equal(state2.phi, state.phi)
    assert np.array_equal(state2.w, state.w)
    assert state2.time == 0.125 and state2.step == 7


def test_checkpoint_version_guard(tmp_path):
    mesh = build_icosphere(0)
    state = FieldState(phi=np.zeros(12), w=np.zeros(12))
    path = tmp_path / "chk.npz"
    save_checkpoint(path, mesh, state)
    data = dict(np.load(path, allow_pickle=False))
    data["version"] = np.int64(99)
    np.savez(path, **data)
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_run_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        run_simulation(run_config(tmp_path, tau=-1.0))
    with pytest.raises(ConfigError):
        run_simulation(run_config(tmp_path, t_end=-1.0))
    with pytest.raises(ConfigError):
        run_simulation(run_config(tmp_path, fine_n=1, coarse_n=4))
    with pytest.raises(ConfigError):
        run_simulation(run_config(tmp_path, adapt_interval=0))


def test_tiny_seed_is_found_by_initial_adaptation(tmp_path):
    # interface thinner than every coarse triangle
    cfg = run_config(tmp_path, seed=CircleSeed(center=(0, 0, 1), radius=0.1),
                     params=ModelParams(epsilon=0.02), fine_n=32,
                     coarse_n=2, t_end=0.0)
    result = run_simulation(cfg)
    phi = result.state.phi
    assert np.abs(phi).min() < 1.0
    assert phi.max() == 1.0 and phi.min() == -1.0
    band = np.abs(phi[result.mesh.triangles]).min(axis=1) < 1.0
    assert result.mesh.triangle_diameters()[band].max() <= 1.0 / 32


def test_reports_carry_solver_diagnostics(tmp_path):
    result = run_simulation(run_config(tmp_path, t_end=3e-6))
    for report in result.reports[1:]:
        assert isinstance(report, EnergyReport)
        assert report.solver_iterations >= 1
        assert report.residual <= 1e-9
