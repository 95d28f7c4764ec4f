# Dipolar spin bath
#
# Hahn-echo decay of a central spin coupled to randomly placed bath spins. Each bath spin contributes a field
# +-b_j, b_j = A / r_j^alpha, that switches as a random telegraph process; the field autocorrelation is
# exp(-|t| / tau_c) with tau_c = 1 / flip_rate, i.e. a switching rate flip_rate / 2.
#
# hopping=none keeps one configuration for every shot (a single particle with fixed spins).
# hopping=resample-per-shot draws fresh positions each shot (configurational averaging).

# Imports
import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad

from decohkit.schema import (
    ChiCurve,
    ConfigError,
    DataError,
    DipolarBathConfig,
    EchoAveraging,
    HoppingMode,
    SeedType,
    constructor,
    enum_value,
)

logger = logging.getLogger(__name__)

MIN_SPINS = 10
SAMPLED_BLOCK = 256
_CONFIG_STREAM = 0
_HISTORY_STREAM = 1


# Exceptions
class BathSizeError(DataError):
    pass


# Methods
def shell_factor(dimensionality: int) -> float:
    """S_D in dV = S_D r^(D-1) dr: 2, 2 pi and 4 pi for D = 1, 2, 3."""
    return {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}[dimensionality]


def validate_config(config: DipolarBathConfig) -> DipolarBathConfig:
    if config.dimensionality not in (1, 2, 3):
        raise ConfigError(f"dimensionality must be 1, 2 or 3, got {config.dimensionality}")
    if config.interaction_exponent not in (2, 3):
        raise ConfigError(f"interaction_exponent must be 2 or 3, got {config.interaction_exponent}")
    if not config.spin_density > 0:
        raise ConfigError("spin_density must be positive")
    if not config.flip_rate > 0:
        raise ConfigError("flip_rate must be positive")
    if not config.exclusion_radius > 0:
        raise ConfigError("exclusion_radius must be positive")
    if not config.region_size > config.exclusion_radius:
        raise ConfigError("region_size must exceed exclusion_radius")
    return config


def region_volume(config: DipolarBathConfig) -> float:
    d = config.dimensionality
    return shell_factor(d) / d * (config.region_size ** d - config.exclusion_radius ** d)


def expected_spin_count(config: DipolarBathConfig) -> float:
    if config.n_spins is not None:
        return float(config.n_spins)
    return config.spin_density * region_volume(config)


def switch_rate(config: DipolarBathConfig) -> float:
    return 0.5 * config.flip_rate


def sample_couplings(config: DipolarBathConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    """Coupling magnitudes of `count` spins placed uniformly in the shell r_ex < r < R."""
    d = config.dimensionality
    lo, hi = config.exclusion_radius ** d, config.region_size ** d
    r = (lo + rng.random(count) * (hi - lo)) ** (1.0 / d)
    return config.coupling_prefactor / r ** config.interaction_exponent


def telegraph_echo_log_coherence(b, rate: float, t) -> np.ndarray:
    """
    ln C for a single telegraph field +-b with switching rate `rate` under a Hahn echo of total time t:
    C = exp(-g t) [1 + (g/mu) sinh(mu t) + (g/mu)^2 (cosh(mu t) - 1)],  mu = sqrt(g^2 - b^2).
    Broadcasts over b and t.
    """
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    b, t = np.broadcast_arrays(b, t)
    g = float(rate)
    b2 = b * b
    over = b2 <= g * g
    mu = np.sqrt(np.abs(g * g - b2))
    mt = mu * t
    small = mt < 1e-8
    safe_mu = np.where(small | (mu == 0), 1.0, mu)

    # overdamped: C = exp(-(g - mu) t) [exp(-mu t) + g A1 + g^2 A2]
    a1 = np.where(small, t, -np.expm1(-2.0 * mt) / (2.0 * safe_mu))
    a2 = np.where(small, 0.5 * t * t, np.expm1(-mt) ** 2 / (2.0 * safe_mu ** 2))
    decay = b2 / (g + mu) * t
    log_over = -decay + np.log1p(np.expm1(-mt) + g * a1 + g * g * a2)

    # underdamped: C = exp(-g t) [1 + g t sinc + (g t)^2 / 2 sinc^2]
    s1 = t * np.sinc(mt / math.pi)
    s2 = 0.5 * t * t * np.sinc(mt / (2.0 * math.pi)) ** 2
    log_under = -g * t + np.log1p(g * s1 + g * g * s2)

    return np.where(over, log_over, log_under)


def _spin_counts(config: DipolarBathConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    if config.n_spins is not None:
        return np.full(size, int(config.n_spins))
    counts = rng.poisson(config.spin_density * region_volume(config), size=size)
    # every drawn region holds at least MIN_SPINS
    if size and counts.min() < MIN_SPINS:
        raise BathSizeError(
            f"Drew {counts.min()} spins inside the region, need at least {MIN_SPINS}; "
            f"increase region_size or spin_density"
        )
    return counts


def _sampled_echo_phase(couplings: np.ndarray, rate: float, times: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """
    Echo phases b (2 H(t/2) - H(t)) for independent telegraph histories, couplings shape (shots, spins).
    H(x) = eta0 [x + 2 sum_{tau_k < x} (-1)^k (x - tau_k)] is the integrated telegraph sign.
    Returns shape (shots, len(times)).
    """
    shots, spins = couplings.shape
    t_max = float(times[-1])
    eta0 = rng.choice([-1.0, 1.0], size=(shots, spins))
    counts = rng.poisson(rate * t_max, size=(shots, spins))
    k_max = int(counts.max()) if counts.size else 0
    flips = rng.random((shots, spins, k_max)) * t_max
    flips = np.where(np.arange(k_max)[None, None, :] < counts[..., None], flips, np.inf)
    flips.sort(axis=-1)
    signs = np.where(np.arange(1, k_max + 1) % 2 == 0, 1.0, -1.0)

    def integrated(x):
        lag = np.clip(x - flips, 0.0, None)
        return eta0 * (x + 2.0 * np.sum(signs * lag, axis=-1))

    phases = np.empty((shots, len(times)))
    for i, t in enumerate(times):
        phases[:, i] = np.sum(couplings * (2.0 * integrated(0.5 * t) - integrated(t)), axis=1)
    return phases


def _check_size(config: DipolarBathConfig) -> None:
    expected = expected_spin_count(config)
    if expected < MIN_SPINS:
        raise BathSizeError(
            f"Expected {expected:.1f} spins inside the region, need at least {MIN_SPINS}; "
            f"increase region_size or spin_density"
        )


def dipolar_echo_ensemble(config: DipolarBathConfig, times: Sequence[float], n_realizations: int) -> ChiCurve:
    """
    chi(t) = -ln <C(t)> of a Hahn echo in a dipolar telegraph bath.

    With hopping=none a single configuration is drawn from the seed and every shot shares it; with
    resample-per-shot each shot draws its own configuration. `averaging` selects the exact history average of
    each spin (analytic) or explicit flip-time sampling (sampled); n_realizations counts configurations for the
    analytic resampled bath and telegraph histories otherwise.
    """
    validate_config(config)
    _check_size(config)
    if n_realizations < 1:
        raise DataError("n_realizations must be positive")
    times = np.asarray(sorted(times), dtype=float)
    if np.any(times <= 0):
        raise DataError("echo times must be positive")
    rate = switch_rate(config)
    config_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_CONFIG_STREAM,)))

    if config.hopping == HoppingMode.NONE:
        couplings = sample_couplings(config, config_rng, int(_spin_counts(config, config_rng, 1)[0]))
        logger.info("Fixed bath with %d spins", couplings.size)
        if config.averaging == EchoAveraging.ANALYTIC:
            log_c = telegraph_echo_log_coherence(couplings[:, None], rate, times[None, :]).sum(axis=0)
            return ChiCurve(times=times, chi=-log_c, n_pulses=1, stderr=np.zeros_like(times))
        return _sampled_curve(config, times, n_realizations, rate, lambda rng, n: np.tile(couplings, (n, 1)))

    if config.averaging == EchoAveraging.ANALYTIC:
        counts = _spin_counts(config, config_rng, n_realizations)
        c_values = np.empty((n_realizations, len(times)))
        for i, count in enumerate(counts):
            b = sample_couplings(config, config_rng, int(count))
            c_values[i] = np.exp(telegraph_echo_log_coherence(b[:, None], rate, times[None, :]).sum(axis=0))
        return _curve_from_coherences(times, c_values)

    def draw(rng, n):
        counts = _spin_counts(config, rng, n)
        padded = np.zeros((n, int(counts.max()) if n else 0))
        for i, count in enumerate(counts):
            padded[i, :count] = sample_couplings(config, rng, int(count))
        return padded

    return _sampled_curve(config, times, n_realizations, rate, draw)


def _sampled_curve(config: DipolarBathConfig, times: np.ndarray, n_shots: int, rate: float, draw) -> ChiCurve:
    c_values = []
    for block, start in enumerate(range(0, n_shots, SAMPLED_BLOCK)):
        n = min(SAMPLED_BLOCK, n_shots - start)
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_HISTORY_STREAM, block)))
        couplings = draw(rng, n)
        c_values.append(np.cos(_sampled_echo_phase(couplings, rate, times, rng)))
    return _curve_from_coherences(times, np.concatenate(c_values, axis=0))


def _curve_from_coherences(times: np.ndarray, c_values: np.ndarray) -> ChiCurve:
    mean = c_values.mean(axis=0)
    n = c_values.shape[0]
    spread = c_values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = -np.log(mean)
        stderr = spread / np.abs(mean)
    return ChiCurve(times=times, chi=chi, n_pulses=1, stderr=stderr)


def dipolar_echo_oracle(config: DipolarBathConfig, times: Sequence[float]) -> np.ndarray:
    """
    Configuration-averaged chi(t) from the single-spin echo integrated over the shell:
    chi = rho int (1 - C_1(b(r), t)) S_D r^(D-1) dr for a Poisson number of spins, or
    -n ln(1 - int (1 - C_1) dV / V) for a fixed count n.
    """
    validate_config(config)
    rate = switch_rate(config)
    d = config.dimensionality
    s_d = shell_factor(d)
    r_ex, r_max = config.exclusion_radius, config.region_size

    def loss(t):
        def integrand(u):
            # u = ln r
            r = math.exp(u)
            b = config.coupling_prefactor / r ** config.interaction_exponent
            c = math.exp(float(telegraph_echo_log_coherence(b, rate, t)))
            return (1.0 - c) * s_d * r ** d
        value, _ = quad(integrand, math.log(r_ex), math.log(r_max), limit=400, epsrel=1e-10)
        return value

    out = []
    for t in times:
        lost = loss(float(t))
        if config.n_spins is None:
            out.append(config.spin_density * lost)
        else:
            out.append(-config.n_spins * math.log1p(-lost / region_volume(config)))
    return np.asarray(out)


def dipolar_tail_bound(config: DipolarBathConfig, t: float) -> float:
    """
    Upper bound on the chi contributed by spins beyond region_size: each weakly coupled spin adds at most
    b^2 tau_c t, giving rho S_D A^2 tau_c t R^(D - 2 alpha) / (2 alpha - D).
    """
    d, alpha = config.dimensionality, config.interaction_exponent
    tau_c = 1.0 / config.flip_rate
    return (config.spin_density * shell_factor(d) * config.coupling_prefactor ** 2 * tau_c * t
            * config.region_size ** (d - 2 * alpha) / (2 * alpha - d))


def bath_config_from_config(section: dict, seed: Optional[SeedType] = None) -> DipolarBathConfig:
    config = constructor(
        DipolarBathConfig,
        sub_constructors={
            "hopping": enum_value(HoppingMode, "dipolar.hopping"),
            "averaging": enum_value(EchoAveraging, "dipolar.averaging"),
        },
        section="dipolar",
    )(dict(section))
    if seed is not None:
        config = config._replace(seed=seed)
    return validate_config(config)
