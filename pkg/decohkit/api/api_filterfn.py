# Filter functions
#
# Decoherence function chi(t) of a spin under Hahn echo / CPMG for a NoiseSpectrum:
#   chi(t) = (1/pi) int_0^inf S(w) F_N(w t) / w^2 dw,  C(t) = exp(-chi(t))
# with the ideal-pulse CPMG filter
#   F_N(x) = 8 sin^4(x/4N) sin^2(x/2) / cos^2(x/2N)   (N even)
#   F_N(x) = 8 sin^4(x/4N) cos^2(x/2) / cos^2(x/2N)   (N odd, N = 1 is the Hahn echo 8 sin^4(x/4))
# and the delta-peak estimate chi ~ t S(pi N / t) / pi.

# Imports
import logging
import math
import warnings
from functools import lru_cache
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import brentq
from scipy.special import roots_legendre

import decohkit.api.api_spectra as spectra_api

from decohkit.schema import (
    ChiCurve,
    DataError,
    DecohKitWarning,
    DecouplingSequence,
    NoiseSpectrum,
    NumericalError,
    SequenceKind,
)

logger = logging.getLogger(__name__)

MIN_DELTA_PULSES = 64
T2_BRACKET = (1e-9, 10.0)
GL_NODES = 8
BASE_HARMONICS = 50
MAX_HARMONICS = 1600
_CHUNK = 200_000


# Exceptions
class ChiConvergenceError(NumericalError):
    def __init__(self, message: str, partial_sum: float):
        super().__init__(message)
        self.partial_sum = partial_sum


class T2RootError(NumericalError):
    pass


class FewPulsesWarning(DecohKitWarning):
    pass


# Methods
def make_sequence(n_pulses: int, total_time: float, t_pi: float = 0.0) -> DecouplingSequence:
    kind = SequenceKind.ECHO if n_pulses == 1 else SequenceKind.CPMG
    return validate_sequence(DecouplingSequence(n_pulses=int(n_pulses), total_time=float(total_time),
                                                t_pi=float(t_pi), kind=kind))


def validate_sequence(sequence: DecouplingSequence) -> DecouplingSequence:
    if sequence.n_pulses < 1:
        raise DataError(f"n_pulses must be >= 1, got {sequence.n_pulses}")
    if not sequence.total_time > 0:
        raise DataError(f"total_time must be positive, got {sequence.total_time}")
    if sequence.t_pi < 0:
        raise DataError("t_pi must be non-negative")
    if sequence.kind == SequenceKind.ECHO and sequence.n_pulses != 1:
        raise DataError("An echo sequence has exactly one pulse")
    return sequence


def cpmg_filter(x, n_pulses: int) -> np.ndarray:
    """
    F_N(x) for x = omega t. At the zeros of cos(x/2N) the removable singularity takes its limit 8 sin^4(x/4N) N^2.
    """
    x = np.asarray(x, dtype=float)
    n = int(n_pulses)
    envelope = np.sin(x / (4.0 * n)) ** 4
    numerator = np.sin(x / 2.0) ** 2 if n % 2 == 0 else np.cos(x / 2.0) ** 2
    c2 = np.cos(x / (2.0 * n)) ** 2
    singular = c2 < 1e-20
    ratio = np.where(singular, float(n * n), numerator / np.where(singular, 1.0, c2))
    return 8.0 * envelope * ratio


def filter_weight(omega, sequence: DecouplingSequence):
    """
    F_N(omega t) / omega^2 for the sequence.
    """
    validate_sequence(sequence)
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise DataError("filter_weight needs omega > 0")
    value = cpmg_filter(w * sequence.total_time, sequence.n_pulses) / w ** 2
    return float(value) if np.ndim(omega) == 0 else value


@lru_cache(maxsize=None)
def _gauss_legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(n)
    return nodes, weights


@lru_cache(maxsize=None)
def _period_moments(n_pulses: int) -> Tuple[float, float]:
    """
    Mean of F_N over its period 4 pi N and the mean of the second antiderivative of (F_N - mean),
    used for the asymptotic tail beyond the last integrated harmonic.
    """
    period = 4.0 * math.pi * n_pulses
    y = np.linspace(0.0, period, 256 * 4 * n_pulses + 1)
    f = cpmg_filter(y, n_pulses)
    cum = cumulative_trapezoid(f, y, initial=0.0)
    mean = cum[-1] / period
    g = cum - mean * y
    g -= trapezoid(g, y) / period
    k = cumulative_trapezoid(g, y, initial=0.0)
    return mean, trapezoid(k, y) / period


def _interval_edges(n_pulses: int, harmonics: int) -> np.ndarray:
    # geometric refinement inside the first lobe, then one pi-wide cell per filter half-lobe
    head = math.pi * np.geomspace(1e-9, 1.0, 72)
    body = math.pi * np.arange(2, 2 * n_pulses * harmonics + 1, dtype=float)
    return np.concatenate(([0.0], head, body))


def _coloured_part(spectrum: NoiseSpectrum) -> NoiseSpectrum:
    return spectrum._replace(white_floor=0.0)


def _coloured_slope(spectrum: NoiseSpectrum, omega: float) -> float:
    slope = 0.0
    for c in spectrum.lorentzians:
        tau = c.tau_c
        slope -= 2.0 * c.delta ** 2 * tau ** 3 * omega / (math.pi * (1.0 + (omega * tau) ** 2) ** 2)
    if spectrum.one_over_f is not None:
        a = spectrum.one_over_f.exponent_a
        slope -= a * spectrum.one_over_f.delta_e * omega ** (-a - 1.0)
    return slope


def _coloured_tail(spectrum: NoiseSpectrum, omega0: float) -> float:
    """int_{omega0}^inf S(w) / w^2 dw for the Lorentzian and 1/f parts."""
    total = 0.0
    for c in spectrum.lorentzians:
        v = 1.0 / (omega0 * c.tau_c)
        # v - arctan(v), series below 1e-3 to avoid cancellation
        diff = v ** 3 / 3.0 - v ** 5 / 5.0 + v ** 7 / 7.0 if v < 1e-3 else v - math.atan(v)
        total += c.delta ** 2 * c.tau_c ** 2 / math.pi * diff
    if spectrum.one_over_f is not None:
        a = spectrum.one_over_f.exponent_a
        total += spectrum.one_over_f.delta_e * omega0 ** (-a - 1.0) / (a + 1.0)
    return total


def _lobe_sum(integrand, edges: np.ndarray) -> float:
    nodes, weights = _gauss_legendre(GL_NODES)
    total = 0.0
    for start in range(0, len(edges) - 1, _CHUNK):
        a = edges[start:start + _CHUNK]
        b = edges[start + 1:start + _CHUNK + 1]
        half = 0.5 * (b - a[:len(b)])
        mid = 0.5 * (b + a[:len(b)])
        x = mid[:, None] + half[:, None] * nodes[None, :]
        total += float(np.sum(integrand(x) * weights[None, :] * half[:, None]))
    return total


def _filter_integral(spectrum: NoiseSpectrum, n_pulses: int, t: float, rtol: float) -> float:
    """
    int_0^inf S(x/t) F_N(x) / x^2 dx for the coloured part of the spectrum, with harmonic doubling until the
    tail error estimate drops below rtol of the running total.
    """
    mean_f, k_bar = _period_moments(n_pulses)

    def integrand(x):
        return np.asarray(spectra_api.eval_total(spectrum, x / t)) * cpmg_filter(x, n_pulses) / x ** 2

    harmonics = BASE_HARMONICS
    edges = _interval_edges(n_pulses, harmonics)
    partial = _lobe_sum(integrand, edges)
    while True:
        x_cut = edges[-1]
        g = spectra_api.eval_total(spectrum, x_cut / t) / x_cut ** 2
        g_slope = _coloured_slope(spectrum, x_cut / t) / (t * x_cut ** 2) - 2.0 * g / x_cut
        tail = mean_f * _coloured_tail(spectrum, x_cut / t) / t - k_bar * g_slope
        error = abs(k_bar * g_slope) * (2.0 / harmonics)
        total = partial + tail
        logger.debug("chi quadrature N=%d t=%.3e harmonics=%d total=%.6e tail=%.3e err=%.3e",
                     n_pulses, t, harmonics, total, tail, error)
        if error <= rtol * abs(total) or total == 0.0:
            return total
        if harmonics >= MAX_HARMONICS:
            raise ChiConvergenceError(
                f"chi quadrature did not reach rtol={rtol} for N={n_pulses}, t={t:.3e} "
                f"(error estimate {error:.3e} on {total:.6e})",
                partial_sum=(t / math.pi) * total,
            )
        # integrate only the new harmonics
        new_edges = math.pi * np.arange(2 * n_pulses * harmonics, 4 * n_pulses * harmonics + 1, dtype=float)
        partial += _lobe_sum(integrand, new_edges)
        harmonics *= 2
        edges = new_edges


@lru_cache(maxsize=None)
def white_filter_weight(n_pulses: int) -> float:
    """
    int_0^inf F_N(x) / x^2 dx, evaluated numerically (pi / 2 for every N).
    """
    mean_f, k_bar = _period_moments(n_pulses)
    edges = _interval_edges(n_pulses, BASE_HARMONICS)
    partial = _lobe_sum(lambda x: cpmg_filter(x, n_pulses) / x ** 2, edges)
    x_cut = edges[-1]
    return partial + mean_f / x_cut + 2.0 * k_bar / x_cut ** 3


def chi_exact(spectrum: NoiseSpectrum, sequence: DecouplingSequence, rtol: float = 1e-6) -> float:
    """
    Exact filter-function integral chi(t) = (1/pi) int S(w) F_N(w t) / w^2 dw.

    The Lorentzian and 1/f parts are integrated lobe by lobe with Gauss-Legendre cells up to at least
    50 harmonics of pi N / t, plus an asymptotic tail; the white floor uses the filter weight integral.
    Raises ChiConvergenceError with the partial sum when the tail error cannot be brought under rtol.
    """
    validate_sequence(sequence)
    t = sequence.total_time
    n = sequence.n_pulses
    chi = 0.0
    if spectrum.white_floor:
        chi += t * spectrum.white_floor * white_filter_weight(n) / math.pi
    coloured = _coloured_part(spectrum)
    if not spectra_api.is_zero(coloured):
        chi += t * _filter_integral(coloured, n, t, rtol) / math.pi
    return max(chi, 0.0)


@lru_cache(maxsize=None)
def delta_peak_calibration() -> float:
    """
    kappa = chi_exact / chi_delta for white noise. Computed once; every delta-peak conversion in the
    toolkit uses this value.
    """
    unit = NoiseSpectrum(white_floor=1.0)
    sequence = make_sequence(MIN_DELTA_PULSES, 1.0)
    kappa = chi_exact(unit, sequence) / chi_delta(unit, MIN_DELTA_PULSES, 1.0)
    logger.debug("delta-peak calibration kappa=%.12f", kappa)
    return kappa


def chi_delta(spectrum: NoiseSpectrum, n_pulses: int, total_time: float, calibrated: bool = False) -> float:
    """
    Delta-peak estimate t S(pi N / t) / pi, multiplied by kappa when `calibrated`.
    """
    if n_pulses < MIN_DELTA_PULSES:
        warnings.warn(
            f"delta-peak approximation used with N={n_pulses} < {MIN_DELTA_PULSES}",
            FewPulsesWarning,
            stacklevel=2,
        )
    if not total_time > 0:
        raise DataError("total_time must be positive")
    omega0 = math.pi * n_pulses / total_time
    chi = total_time * spectra_api.eval_total(spectrum, omega0) / math.pi
    if calibrated:
        chi *= delta_peak_calibration()
    return chi


def chi_curve(spectrum: NoiseSpectrum, n_pulses: int, times: Iterable[float], t_pi: float = 0.0,
              rtol: float = 1e-6) -> ChiCurve:
    times = np.asarray(sorted(times), dtype=float)
    chi = np.array([chi_exact(spectrum, make_sequence(n_pulses, t, t_pi), rtol=rtol) for t in times])
    return ChiCurve(times=times, chi=chi, n_pulses=n_pulses, t_pi=t_pi)


def hahn_echo_ou_chi(sigma: float, tau_c: float, t) -> np.ndarray:
    """
    Closed-form echo decay of an OU field with rms sigma:
    sigma^2 tau^2 (t/tau - 3 + 4 exp(-t/2tau) - exp(-t/tau)).
    """
    x = np.asarray(t, dtype=float) / tau_c
    # expm1 keeps precision in the t << tau_c regime
    bracket = x + 4.0 * np.expm1(-x / 2.0) - np.expm1(-x)
    return sigma ** 2 * tau_c ** 2 * bracket


def _solve_threshold(chi_of_t, threshold: float, label: str) -> float:
    lo, hi = T2_BRACKET
    log_thr = math.log(threshold)

    def f(u):
        return math.log(max(chi_of_t(math.exp(u)), 1e-300)) - log_thr

    f_lo, f_hi = f(math.log(lo)), f(math.log(hi))
    if f_lo > 0 or f_hi < 0:
        raise T2RootError(f"No root of chi = {threshold} for {label} in [{lo:.0e} s, {hi:.0e} s]")
    return math.exp(brentq(f, math.log(lo), math.log(hi), xtol=1e-6))


def predict_t2(spectrum: NoiseSpectrum, n_pulses: int, threshold_chi: float = 1.0, t_pi: float = 0.0) -> float:
    if spectra_api.is_zero(spectrum):
        raise T2RootError("Zero spectrum never decoheres")
    return _solve_threshold(
        lambda t: chi_exact(spectrum, make_sequence(n_pulses, t, t_pi)), threshold_chi, f"N={n_pulses}"
    )


def predict_t2_curve(spectrum: NoiseSpectrum, n_values: Sequence[int],
                     threshold_chi: float = 1.0) -> List[Tuple[int, float]]:
    """
    T2(N) as the root of chi_exact(T2) = threshold_chi (C = 1/e by default) for each pulse count.
    """
    if not n_values:
        raise DataError("n_values must not be empty")
    curve = []
    for n in n_values:
        t2 = predict_t2(spectrum, int(n), threshold_chi)
        logger.info("Predicted T2(N=%d) = %.4e s", n, t2)
        curve.append((int(n), t2))
    return curve


def design_time_grid(spectrum: NoiseSpectrum, n_pulses: int, n_points: int = 12,
                     span: Tuple[float, float] = (0.2, 3.0)) -> np.ndarray:
    """
    Log-spaced evolution times around the delta-peak estimate of T2.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FewPulsesWarning)
        t2 = _solve_threshold(lambda t: chi_delta(spectrum, n_pulses, t, calibrated=True), 1.0, f"N={n_pulses}")
    return np.geomspace(span[0] * t2, span[1] * t2, n_points)
