import numpy as np
import pytest

import decohkit.api.api_bandbend as bandbend_api

from decohkit.schema import (
    ConfigError,
    DefectKind,
    DefectLevel,
    JunctionSide,
    LevelReference,
)


def _config(surface_bending, **overrides):
    section = {"radius": 35.0, "surface_bending": surface_bending, "p1_ppm": 100.0, "nv_ratio": 0.01}
    section.update(overrides)
    return bandbend_api.band_config_from_config(section)


@pytest.fixture(scope="module")
def heterojunction_profile():
    return bandbend_api.solve_poisson(_config("heterojunction"))


def test_free_surface_bending_is_downward():
    assert bandbend_api.free_surface_bending(bandbend_api.diamond_bands()) == pytest.approx(-0.5)


def test_heterojunction_alignment():
    alignment = bandbend_api.align_heterojunction(
        JunctionSide(bands=bandbend_api.diamond_bands(), fermi_above_ev=3.9),
        JunctionSide(bands=bandbend_api.silica_bands(), fermi_above_ev=5.55),
    )
    assert alignment.delta_ef == pytest.approx(1.45)
    assert alignment.bending == pytest.approx(0.225)


def test_partition_out_of_range():
    side = JunctionSide(bands=bandbend_api.diamond_bands(), fermi_above_ev=3.9)
    with pytest.raises(ConfigError):
        bandbend_api.align_heterojunction(side, side, partition=1.5)


def test_bulk_fermi_level_is_neutral():
    bands = bandbend_api.diamond_bands()
    defects = bandbend_api.default_defects()
    vacancies = bandbend_api.default_vacancies()
    fermi = bandbend_api.bulk_fermi_level(bands, defects, vacancies)
    p1, nv = defects
    (vacancy,) = vacancies
    # NV- and V- take the electrons of two thirds of the P1 donors
    assert float(bandbend_api.ionized_density(p1, bands, fermi, 0.0)) == pytest.approx(
        nv.density + vacancy.density, rel=1e-3)
    assert fermi == pytest.approx(bands.band_gap - 1.7 - 0.0368, abs=2e-3)


def test_uncompensated_fermi_level_sits_above_p1():
    bands = bandbend_api.diamond_bands()
    fermi = bandbend_api.bulk_fermi_level(bands, bandbend_api.default_defects())
    assert fermi - (bands.band_gap - 1.7) == pytest.approx(0.1, abs=0.01)


def test_vacancy_occupation_sums_to_one():
    bands = bandbend_api.diamond_bands()
    (vacancy,) = bandbend_api.default_vacancies()
    u = np.linspace(-0.5, 2.0, 11)
    plus, zero, minus = bandbend_api.vacancy_occupation(vacancy, bands, 1.5, u)
    np.testing.assert_allclose(plus + zero + minus, 1.0)
    # Fermi level between the two transition levels
    assert float(zero[0]) > 0.99
    assert np.all(np.diff(minus) <= 0)
    plus, zero, minus = bandbend_api.vacancy_occupation(vacancy, bands, 3.7, 0.0)
    assert float(minus) > 0.99


def test_flat_bands_give_zero_depletion():
    profile = bandbend_api.solve_poisson(_config(0.0))
    np.testing.assert_allclose(profile.potential, 0.0, atol=1e-9)
    report = bandbend_api.p1_depletion_report(profile)
    assert report.width == 0.0
    assert report.reduction == 0.0


def test_downward_bending_reports_no_depletion():
    profile = bandbend_api.solve_poisson(_config("free-surface"))
    assert profile.potential[-1] == pytest.approx(-0.5)
    report = bandbend_api.p1_depletion_report(profile)
    assert report.width == 0.0
    assert report.reduction == 0.0


def test_heterojunction_depletes_p1_near_surface(heterojunction_profile):
    profile = heterojunction_profile
    assert profile.potential[-1] == pytest.approx(0.225)
    assert np.all(np.diff(profile.potential) >= -1e-9)
    neutral = profile.neutral["P1"]
    assert neutral[-1] < 0.5 * neutral[0]
    report = bandbend_api.p1_depletion_report(profile)
    # 35 nm core under a silica shell: about 3.8 nm and a 44 % loss of neutral P1
    assert 2.66 <= report.width <= 4.94
    assert 0.34 <= report.reduction <= 0.54


def test_depletion_width_grows_with_threshold(heterojunction_profile):
    widths = bandbend_api.p1_depletion_report(heterojunction_profile).width_sensitivity
    assert widths[0.25] <= widths[0.5] <= widths[0.75]


def test_depletion_width_converges_with_grid(heterojunction_profile):
    coarse = bandbend_api.p1_depletion_report(heterojunction_profile).width
    fine = bandbend_api.p1_depletion_report(
        bandbend_api.solve_poisson(_config("heterojunction", grid_points=800))).width
    assert abs(fine - coarse) < 0.02 * coarse


def test_depletion_width_grows_with_bending():
    widths = [bandbend_api.p1_depletion_report(bandbend_api.solve_poisson(_config(bending))).width
              for bending in (0.05, 0.1, 0.225, 0.4, 0.8)]
    assert widths[0] > 0
    assert all(later >= earlier - 1e-9 for earlier, later in zip(widths, widths[1:]))


def test_abrupt_depletion_matches_shell_volume(heterojunction_profile):
    profile = heterojunction_profile
    radius = profile.config.radius
    h = radius / profile.config.grid_points
    k = 361
    bulk = float(profile.neutral["P1"][0])
    # fully ionized shell outside the cell face at (k - 1/2) h
    step = np.where(np.arange(len(profile.r)) < k, bulk, 0.0)
    report = bandbend_api.p1_depletion_report(profile._replace(neutral={**profile.neutral, "P1": step}))
    width = radius - (k - 0.5) * h
    assert report.width == pytest.approx(width, rel=1e-9)
    assert report.reduction == pytest.approx(1.0 - (1.0 - width / radius) ** 3, rel=1e-9)


def test_gauss_law_closure(heterojunction_profile):
    assert heterojunction_profile.gauss_closure < 1e-4
    assert heterojunction_profile.residual_norm < bandbend_api.RESIDUAL_TOLERANCE


def test_band_edges_follow_potential(heterojunction_profile):
    profile = heterojunction_profile
    np.testing.assert_allclose(profile.ec - profile.ev, profile.config.bands.band_gap)
    np.testing.assert_allclose(profile.ev, profile.potential)


def test_upward_bending_stabilises_fewer_nv_minus(heterojunction_profile):
    assert bandbend_api.nv_stability_report(heterojunction_profile) <= 1e-12


def test_strong_upward_bending_converts_nv_minus_to_nv_zero(heterojunction_profile):
    profile = bandbend_api.solve_poisson(_config(2.0, max_iterations=400))
    charge = bandbend_api.nv_charge_report(profile)
    assert charge.change < -0.02
    assert charge.change < bandbend_api.nv_stability_report(heterojunction_profile)
    assert charge.nv_minus + charge.nv_zero == pytest.approx(1.0)
    assert charge.nv_zero > 0.02
    # vacancies at the surface lose their electron too
    vacancy = profile.charge_states["V"]
    assert vacancy["0"][-1] > 0.5 * profile.config.vacancies[0].density
    assert vacancy["-"][0] == pytest.approx(profile.config.vacancies[0].density, rel=1e-6)


def test_heterojunction_keeps_vacancies_negative(heterojunction_profile):
    density = heterojunction_profile.config.vacancies[0].density
    np.testing.assert_allclose(heterojunction_profile.charge_states["V"]["-"], density, rtol=1e-6)
    np.testing.assert_allclose(heterojunction_profile.charge_states["P1"]["+"] +
                               heterojunction_profile.charge_states["P1"]["0"],
                               heterojunction_profile.config.defects[0].density)


def test_profile_table_columns(heterojunction_profile):
    header, rows = bandbend_api.profile_table(heterojunction_profile)
    assert header[:4] == ["r_nm", "phi_eV", "Ec_eV", "Ev_eV"]
    assert "P1_neutral_cm3" in header
    assert header[-3:] == ["V_plus_cm3", "V_zero_cm3", "V_minus_cm3"]
    assert len(rows) == heterojunction_profile.config.grid_points + 1
    assert all(len(row) == len(header) for row in rows)


def test_depletion_summary_keys(heterojunction_profile):
    summary = bandbend_api.depletion_summary(heterojunction_profile)
    assert summary["surface_bending_eV"] == pytest.approx(0.225)
    assert summary["depletion_width_nm"] > 0
    assert set(summary["width_sensitivity_nm"]) == {"0.25", "0.5", "0.75"}
    assert summary["nv_minus_fraction"] + summary["nv_zero_fraction"] == pytest.approx(1.0)
    assert summary["vacancy_charge_fractions"]["V"]["-"] == pytest.approx(1.0, rel=1e-6)


def test_divergence_reports_residual_history():
    with pytest.raises(bandbend_api.PoissonDivergenceError) as excinfo:
        bandbend_api.solve_poisson(_config("heterojunction", max_iterations=1))
    assert len(excinfo.value.residual_history) >= 2


def test_invalid_threshold(heterojunction_profile):
    with pytest.raises(ConfigError):
        bandbend_api.p1_depletion_report(heterojunction_profile, threshold=1.0)


def test_missing_p1(heterojunction_profile):
    with pytest.raises(bandbend_api.MissingDefectError):
        bandbend_api.p1_depletion_report(heterojunction_profile, p1_name="N3")
    with pytest.raises(bandbend_api.MissingDefectError):
        bandbend_api.p1_depletion_report(heterojunction_profile, p1_name="NV")


def test_explicit_defects_from_config():
    config = _config(0.1, defects=[
        {"name": "P1", "density": 1.0e19, "energy": 1.7, "kind": "donor", "reference": "Ec"},
        {"name": "NV", "density": 1.0e17, "energy": 2.0, "kind": "acceptor", "reference": "Ev"},
    ])
    assert config.defects[0] == DefectLevel(name="P1", density=1.0e19, energy=1.7, kind=DefectKind.DONOR,
                                            reference=LevelReference.EC)
    assert config.surface_bending == 0.1
    assert config.vacancies == ()


def test_explicit_vacancies_from_config():
    config = _config(0.1, vacancies=[{"name": "V", "density": 5.0e18, "donor_level": 0.6, "acceptor_level": 2.5}])
    assert config.vacancies[0].density == 5.0e18
    assert len(config.defects) == 2
    assert _config(0.1, vacancy_ratio=0.0).vacancies == ()


@pytest.mark.parametrize("section", [
    {"surface_bending": 0.0},
    {"radius": 35.0},
    {"radius": -1.0, "surface_bending": 0.0},
    {"radius": 35.0, "surface_bending": 0.0, "grid_points": 50},
    {"radius": 35.0, "surface_bending": "sideways"},
    {"radius": 35.0, "surface_bending": 0.0, "defects": [{"name": "X", "density": 1e17, "energy": 7.0,
                                                         "kind": "donor"}]},
    {"radius": 35.0, "surface_bending": 0.0, "defects": [{"name": "X", "density": 1e17, "energy": 1.0,
                                                         "kind": "amphoteric"}]},
    {"radius": 35.0, "surface_bending": 0.0, "vacancies": [{"name": "V", "density": 1e18, "donor_level": 2.5,
                                                           "acceptor_level": 0.6}]},
    {"radius": 35.0, "surface_bending": 0.0, "vacancies": [{"name": "V", "density": 1e18, "donor_level": 0.6}]},
])
def test_invalid_band_config(section):
    with pytest.raises(ConfigError):
        bandbend_api.band_config_from_config(section)


def test_identical_materials_do_not_bend():
    side = JunctionSide(bands=bandbend_api.diamond_bands(), fermi_above_ev=3.9)
    alignment = bandbend_api.align_heterojunction(side, side)
    assert alignment.delta_ef == 0.0
    assert alignment.bending == 0.0


def test_swapped_materials_reverse_bending():
    core = JunctionSide(bands=bandbend_api.diamond_bands(), fermi_above_ev=3.9)
    shell = JunctionSide(bands=bandbend_api.silica_bands(), fermi_above_ev=5.55)
    assert bandbend_api.align_heterojunction(shell, core).bending == pytest.approx(-0.225)
