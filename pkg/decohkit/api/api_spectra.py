# Noise spectra
#
# One-sided noise power spectra in angular frequency: a sum of Lorentzians, an optional 1/f^a term and a
# white floor. Frequencies given in Hz elsewhere are converted with omega = 2 pi f before they reach this module.
#
# Amplitudes follow the filter normalisation used by api_filterfn (chi = (1/pi) int S F / w^2). An OU field of
# rms sigma therefore realises a Lorentzian with delta = sqrt(2 pi) sigma.

# Imports
import logging
import math
from typing import Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from decohkit.schema import (
    AngularFrequencyType,
    ConfigError,
    DataError,
    LorentzianComponent,
    NoiseSpectrum,
    OneOverFComponent,
    constructor,
)

logger = logging.getLogger(__name__)

DEFAULT_OMEGA_DQ = 2.0 * math.pi * 18.8e6
DEFAULT_OMEGA_SQ = 2.0 * math.pi * 2.87e9
# DQ relaxation rate gamma for T1_DQ = 100 us with a negligible SQ rate
DEFAULT_S_DQ = 5.0e3

OU_SPECTRUM_FACTOR = math.sqrt(2.0 * math.pi)

ArrayLike = Union[float, Sequence[float], np.ndarray]


# Exceptions
class SpectrumDomainError(DataError):
    pass


# Methods
def _as_omega(omega: ArrayLike, allow_zero: bool = True) -> np.ndarray:
    w = np.asarray(omega, dtype=float)
    if np.any(np.isnan(w)):
        raise SpectrumDomainError("Angular frequency must not be NaN")
    if np.any(w < 0):
        raise SpectrumDomainError(f"Angular frequency must be non-negative, got min {w.min()}")
    if not allow_zero and np.any(w == 0):
        raise SpectrumDomainError("The 1/f^a term diverges at omega = 0")
    return w


def _unwrap(value: np.ndarray, like: ArrayLike):
    if np.ndim(like) == 0:
        return float(value)
    return value


def validate_component(component: LorentzianComponent) -> LorentzianComponent:
    if not component.tau_c > 0:
        raise SpectrumDomainError(f"tau_c must be positive, got {component.tau_c}")
    if component.delta < 0:
        raise SpectrumDomainError(f"delta must be non-negative, got {component.delta}")
    return component


def eval_lorentzian_sum(components: Iterable[LorentzianComponent], omega: ArrayLike):
    """
    Sum of Lorentzians delta^2 tau / (pi (1 + (omega tau)^2)).
    """
    w = _as_omega(omega)
    total = np.zeros_like(w)
    for component in components:
        validate_component(component)
        tau = component.tau_c
        total = total + component.delta ** 2 * tau / (math.pi * (1.0 + (w * tau) ** 2))
    return _unwrap(total, omega)


def eval_one_over_f(term: OneOverFComponent, omega: ArrayLike):
    w = _as_omega(omega, allow_zero=False)
    return _unwrap(term.delta_e / w ** term.exponent_a, omega)


def eval_total(spectrum: NoiseSpectrum, omega: ArrayLike):
    """
    Full spectral density: Lorentzian sum + delta_e / omega^a + white floor.
    """
    w = _as_omega(omega, allow_zero=spectrum.one_over_f is None)
    total = np.asarray(eval_lorentzian_sum(spectrum.lorentzians, w), dtype=float)
    if spectrum.one_over_f is not None:
        total = total + spectrum.one_over_f.delta_e / w ** spectrum.one_over_f.exponent_a
    total = total + spectrum.white_floor
    return _unwrap(total, omega)


def is_zero(spectrum: NoiseSpectrum) -> bool:
    return (
        all(c.delta == 0 for c in spectrum.lorentzians)
        and (spectrum.one_over_f is None or spectrum.one_over_f.delta_e == 0)
        and spectrum.white_floor == 0
    )


def anchored_delta_e(s_dq: float, omega_dq: AngularFrequencyType, exponent_a: float) -> float:
    """Amplitude of the 1/f^a term pinned to the DQ relaxation rate: delta_e = S_DQ omega_DQ^a."""
    return s_dq * omega_dq ** exponent_a


def lorentzian_for_ou(delta: float, tau_c: float) -> LorentzianComponent:
    """Spectrum component realised by an OU field with stationary rms `delta`."""
    return LorentzianComponent(delta=OU_SPECTRUM_FACTOR * delta, tau_c=tau_c)


def ou_sigma_for_lorentzian(component: LorentzianComponent) -> float:
    return component.delta / OU_SPECTRUM_FACTOR


def ou_components_for_one_over_f(
        term: OneOverFComponent,
        omega_lo: AngularFrequencyType,
        omega_hi: AngularFrequencyType,
        per_decade: int = 4,
        lump_low: bool = True,
) -> Tuple[LorentzianComponent, ...]:
    """
    Approximate delta_e / omega^a on [omega_lo, omega_hi] with log-spaced Lorentzians.

    Corner frequencies w_j are spaced by h = ln(10) / per_decade and weighted with
    delta_j^2 = h * 2 sin(pi a / 2) * delta_e * w_j^(1 - a), which reproduces the power law in the interior
    of the band for 0 < a < 2.

    Above its corner every Lorentzian falls as delta^2 w / (pi omega^2), so the corners below omega_lo that the
    grid leaves out add a 1/omega^2 term that decays only as (omega_lo / omega)^(2 - a). With `lump_low` their
    summed weight is carried by one extra component at the first omitted corner.
    """
    a = term.exponent_a
    if not 0 < a < 2:
        raise SpectrumDomainError(f"Lorentzian superposition needs 0 < a < 2, got {a}")
    if not 0 < omega_lo < omega_hi:
        raise SpectrumDomainError("Need 0 < omega_lo < omega_hi")
    if term.delta_e == 0:
        return ()
    h = math.log(10.0) / per_decade
    n = int(math.ceil(math.log(omega_hi / omega_lo) / h))
    # corner frequencies sit at cell centres
    corners = omega_lo * np.exp(h * (np.arange(n) + 0.5))
    weight = h * 2.0 * math.sin(math.pi * a / 2.0) * term.delta_e
    components = [
        LorentzianComponent(delta=math.sqrt(weight * w ** (1.0 - a)), tau_c=1.0 / w)
        for w in corners
    ]
    if lump_low:
        # sum over the omitted corners omega_lo exp(-h (k - 1/2)), k >= 1, of delta_k^2 w_k
        lumped = weight * omega_lo ** (2.0 - a) / (2.0 * math.sinh(h * (2.0 - a) / 2.0))
        w_c = omega_lo * math.exp(-h / 2.0)
        components.insert(0, LorentzianComponent(delta=math.sqrt(lumped / w_c), tau_c=1.0 / w_c))
    return tuple(components)


# Presets
# Electric 1/f^a noise is common to both particle types (their DQ relaxation rates agree). The fast correlation
# times are resolved only as upper bounds (tau_c <= 1 ns) and sit below that bound here.
ELECTRIC_EXPONENT_A = 1.6
CORE_SHELL_LORENTZIANS = ((2.9e6, 40e-9), (1.3e7, 0.2e-9))
BARE_LORENTZIANS = ((2.4e7, 0.4e-9),)


def electric_noise(s_dq: float = DEFAULT_S_DQ, omega_dq: AngularFrequencyType = DEFAULT_OMEGA_DQ) -> OneOverFComponent:
    a = ELECTRIC_EXPONENT_A
    return OneOverFComponent(delta_e=anchored_delta_e(s_dq, omega_dq, a), exponent_a=a)


def core_shell_spectrum(s_dq: float = DEFAULT_S_DQ, omega_dq: AngularFrequencyType = DEFAULT_OMEGA_DQ) -> NoiseSpectrum:
    """Slow (40 ns) and fast Lorentzians over the shared 1/f term, fitted to silica-shelled particles."""
    return NoiseSpectrum(
        lorentzians=tuple(LorentzianComponent(delta=d, tau_c=t) for d, t in CORE_SHELL_LORENTZIANS),
        one_over_f=electric_noise(s_dq, omega_dq),
    )


def bare_spectrum(s_dq: float = DEFAULT_S_DQ, omega_dq: AngularFrequencyType = DEFAULT_OMEGA_DQ) -> NoiseSpectrum:
    """Single fast surface-spin Lorentzian over the shared 1/f term, fitted to bare particles."""
    return NoiseSpectrum(
        lorentzians=tuple(LorentzianComponent(delta=d, tau_c=t) for d, t in BARE_LORENTZIANS),
        one_over_f=electric_noise(s_dq, omega_dq),
    )


# Config
def _one_over_f_from_config(section: Mapping) -> Optional[OneOverFComponent]:
    if section is None:
        return None
    if "exponent_a" not in section:
        raise ConfigError("Missing value for exponent_a in spectrum.one_over_f")
    a = float(section["exponent_a"])
    if "delta_e" in section:
        return OneOverFComponent(delta_e=float(section["delta_e"]), exponent_a=a)
    if "s_dq" in section:
        omega_dq = float(section.get("omega_dq", DEFAULT_OMEGA_DQ))
        return OneOverFComponent(delta_e=anchored_delta_e(float(section["s_dq"]), omega_dq, a), exponent_a=a)
    raise ConfigError("Missing value for delta_e (or s_dq) in spectrum.one_over_f")


def spectrum_from_config(section: Union[Mapping, str]) -> NoiseSpectrum:
    """
    Build a NoiseSpectrum from the `spectrum` config section. A bare string selects a preset
    ("core-shell" or "bare").
    """
    if isinstance(section, str):
        presets = {"core-shell": core_shell_spectrum, "bare": bare_spectrum}
        if section not in presets:
            raise ConfigError(f"Unknown spectrum preset {section!r}")
        return presets[section]()
    if "preset" in section:
        base = spectrum_from_config(section["preset"])
        return base._replace(white_floor=float(section.get("white_floor", base.white_floor)))
    lorentzians = constructor(LorentzianComponent, section="spectrum.lorentzians")(
        list(section.get("lorentzians", []))
    ) or []
    for component in lorentzians:
        validate_component(component)
    spectrum = NoiseSpectrum(
        lorentzians=tuple(lorentzians),
        one_over_f=_one_over_f_from_config(section.get("one_over_f")),
        white_floor=float(section.get("white_floor", 0.0)),
    )
    if spectrum.white_floor < 0:
        raise ConfigError("white_floor must be non-negative")
    return spectrum


def spectrum_to_config(spectrum: NoiseSpectrum) -> dict:
    return {
        "lorentzians": [{"delta": c.delta, "tau_c": c.tau_c} for c in spectrum.lorentzians],
        "one_over_f": (
            None if spectrum.one_over_f is None
            else {"delta_e": spectrum.one_over_f.delta_e, "exponent_a": spectrum.one_over_f.exponent_a}
        ),
        "white_floor": spectrum.white_floor,
    }
