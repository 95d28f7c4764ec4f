import math

import numpy as np
import pytest

import decohkit.api.api_fitkit as fitkit_api
import decohkit.api.api_spinbath as spinbath_api

from decohkit.schema import (
    BathVerdict,
    ChiCurve,
    ConfigError,
    DataError,
    DipolarBathConfig,
    EchoAveraging,
    HoppingMode,
)

TAU_C = 1e-6
RANDOM_WALK_TIMES = np.geomspace(12 * TAU_C, 1e4 * TAU_C, 12)
BALLISTIC_TIMES = np.geomspace(0.005 * TAU_C, 0.05 * TAU_C, 5)


def _bath(**overrides) -> DipolarBathConfig:
    values = dict(
        dimensionality=3,
        interaction_exponent=3,
        spin_density=0.01,
        flip_rate=1.0 / TAU_C,
        coupling_prefactor=math.sqrt(1e11),
        exclusion_radius=0.3,
        region_size=12.0,
        hopping=HoppingMode.RESAMPLE,
        seed=17,
    )
    values.update(overrides)
    return DipolarBathConfig(**values)


def test_single_spin_static_field_refocuses():
    log_c = spinbath_api.telegraph_echo_log_coherence(1e6, 1e-3, np.array([1e-6, 1e-5]))
    np.testing.assert_allclose(log_c, 0.0, atol=1e-7)


def test_single_spin_zero_coupling():
    np.testing.assert_allclose(spinbath_api.telegraph_echo_log_coherence(0.0, 1e5, [1e-6, 1e-3]), 0.0, atol=1e-12)


def test_single_spin_weak_coupling_is_gaussian():
    b, rate = 1e3, 1e6
    tau = 1.0 / (2 * rate)
    times = np.array([2e-7, 1e-6, 5e-6])
    x = times / tau
    gaussian = b ** 2 * tau ** 2 * (x - 3 + 4 * np.exp(-x / 2) - np.exp(-x))
    chi = -spinbath_api.telegraph_echo_log_coherence(b, rate, times)
    np.testing.assert_allclose(chi, gaussian, rtol=1e-4)


def test_single_spin_branches_meet_at_critical_coupling():
    rate, t = 1e5, 3e-5
    below = spinbath_api.telegraph_echo_log_coherence(rate * (1 - 1e-7), rate, t)
    above = spinbath_api.telegraph_echo_log_coherence(rate * (1 + 1e-7), rate, t)
    # mu = 0: C = exp(-g t) (1 + g t + (g t)^2 / 2)
    gt = rate * t
    exact = -gt + math.log(1 + gt + gt ** 2 / 2)
    assert float(below) == pytest.approx(exact, rel=1e-5)
    assert float(above) == pytest.approx(exact, rel=1e-5)


def test_single_spin_broadcasts():
    b = np.array([1e3, 1e5, 1e7])[:, None]
    t = np.array([1e-7, 1e-6])[None, :]
    log_c = spinbath_api.telegraph_echo_log_coherence(b, 1e5, t)
    assert log_c.shape == (3, 2)
    assert np.all(log_c <= 0)


@pytest.mark.parametrize("overrides", [
    dict(dimensionality=4),
    dict(interaction_exponent=6),
    dict(spin_density=0.0),
    dict(flip_rate=-1.0),
    dict(exclusion_radius=0.0),
    dict(region_size=0.2),
])
def test_invalid_bath_config(overrides):
    with pytest.raises(ConfigError):
        spinbath_api.validate_config(_bath(**overrides))


def test_expected_spin_count():
    config = _bath()
    assert spinbath_api.expected_spin_count(config) == pytest.approx(0.01 * 4 * math.pi / 3 * (12 ** 3 - 0.3 ** 3))
    assert spinbath_api.expected_spin_count(config._replace(n_spins=40)) == 40.0


def test_small_bath_rejected():
    with pytest.raises(spinbath_api.BathSizeError):
        spinbath_api.dipolar_echo_ensemble(_bath(region_size=2.0), [1e-6], 10)


def test_small_drawn_bath_rejected():
    # a Poisson mean of 10.5 spins passes the size check but single draws fall below ten
    config = _bath(region_size=6.31)
    assert spinbath_api.expected_spin_count(config) >= spinbath_api.MIN_SPINS
    with pytest.raises(spinbath_api.BathSizeError, match="Drew"):
        spinbath_api.dipolar_echo_ensemble(config, [1e-6], 200)


def test_ensemble_arguments_checked():
    with pytest.raises(DataError):
        spinbath_api.dipolar_echo_ensemble(_bath(), [1e-6], 0)
    with pytest.raises(DataError):
        spinbath_api.dipolar_echo_ensemble(_bath(), [0.0, 1e-6], 10)


def test_couplings_stay_inside_shell():
    config = _bath()
    b = spinbath_api.sample_couplings(config, np.random.default_rng(0), 5000)
    a = config.coupling_prefactor
    assert b.max() <= a / 0.3 ** 3
    assert b.min() >= a / 12.0 ** 3


def test_configurational_average_matches_oracle():
    config = _bath()
    curve = spinbath_api.dipolar_echo_ensemble(config, RANDOM_WALK_TIMES, n_realizations=4000)
    oracle = spinbath_api.dipolar_echo_oracle(config, RANDOM_WALK_TIMES)
    assert np.all(np.abs(curve.chi - oracle) <= 4 * curve.stderr + 1e-3)


def test_fixed_count_oracle_uses_binomial_form():
    config = _bath(n_spins=72)
    poisson = spinbath_api.dipolar_echo_oracle(config._replace(n_spins=None), [1e-4])
    fixed = spinbath_api.dipolar_echo_oracle(config, [1e-4])
    # 72 spins against a Poisson mean of 72.4
    assert fixed[0] == pytest.approx(poisson[0], rel=0.05)


@pytest.mark.parametrize("dimensionality, density, region, expected", [
    (3, 0.01, 12.0, (3, 3)),
    (2, 0.05, 10.0, (2, 3)),
])
def test_configurational_averaging_gives_fractional_exponent(dimensionality, density, region, expected):
    config = _bath(dimensionality=dimensionality, spin_density=density, region_size=region)
    chi = spinbath_api.dipolar_echo_oracle(config, RANDOM_WALK_TIMES)
    result = fitkit_api.classify_bath(ChiCurve(times=RANDOM_WALK_TIMES, chi=chi), TAU_C)
    assert result.verdict == BathVerdict.CONFIGURATIONAL
    assert result.n_rw == pytest.approx(dimensionality / 6.0, abs=0.05)
    assert expected in result.candidates


def test_fixed_bath_is_markovian_with_ballistic_onset():
    config = _bath(hopping=HoppingMode.NONE)
    times = np.concatenate([BALLISTIC_TIMES, RANDOM_WALK_TIMES])
    curve = spinbath_api.dipolar_echo_ensemble(config, times, n_realizations=1)
    np.testing.assert_array_equal(curve.stderr, 0.0)
    result = fitkit_api.classify_bath(curve, TAU_C)
    assert result.verdict == BathVerdict.FIXED_MARKOVIAN
    assert result.n_rw == pytest.approx(1.0, abs=0.1)
    assert result.n_ballistic == pytest.approx(3.0, abs=0.1)


def test_fixed_bath_is_reproducible():
    config = _bath(hopping=HoppingMode.NONE)
    first = spinbath_api.dipolar_echo_ensemble(config, RANDOM_WALK_TIMES[:3], n_realizations=1)
    second = spinbath_api.dipolar_echo_ensemble(config, RANDOM_WALK_TIMES[:3], n_realizations=1)
    np.testing.assert_array_equal(first.chi, second.chi)
    other = spinbath_api.dipolar_echo_ensemble(config._replace(seed=18), RANDOM_WALK_TIMES[:3], n_realizations=1)
    assert not np.array_equal(first.chi, other.chi)


def test_sampled_histories_agree_with_analytic_average():
    times = np.array([2e-6, 5e-6, 1e-5])
    config = _bath(hopping=HoppingMode.NONE)
    analytic = spinbath_api.dipolar_echo_ensemble(config, times, n_realizations=1)
    sampled = spinbath_api.dipolar_echo_ensemble(config._replace(averaging=EchoAveraging.SAMPLED), times,
                                                 n_realizations=3000)
    assert np.all(np.abs(sampled.chi - analytic.chi) <= 4 * sampled.stderr + 1e-3)


def test_tail_bound_covers_spins_beyond_region():
    t = 1e-3
    near = spinbath_api.dipolar_echo_oracle(_bath(), [t])[0]
    far = spinbath_api.dipolar_echo_oracle(_bath(region_size=24.0), [t])[0]
    assert 0.0 <= far - near <= spinbath_api.dipolar_tail_bound(_bath(), t)


def test_bath_config_from_config():
    section = {
        "dimensionality": 2,
        "interaction_exponent": 3,
        "spin_density": 0.05,
        "flip_rate": 1e6,
        "coupling_prefactor": 3e5,
        "exclusion_radius": 0.3,
        "region_size": 10.0,
        "hopping": "resample-per-shot",
        "averaging": "sampled",
        "colour": "ignored",
    }
    config = spinbath_api.bath_config_from_config(section, seed=99)
    assert config.hopping == HoppingMode.RESAMPLE
    assert config.averaging == EchoAveraging.SAMPLED
    assert config.seed == 99
    with pytest.raises(ConfigError, match="hopping"):
        spinbath_api.bath_config_from_config(dict(section, hopping="sometimes"))
    with pytest.raises(ConfigError, match="Missing value for region_size"):
        spinbath_api.bath_config_from_config({k: v for k, v in section.items() if k != "region_size"})
