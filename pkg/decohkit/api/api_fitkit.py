# Fitting
#
# Stretched-exponential T2 fits (free and with amplitudes constrained non-increasing in N), the T2(N) power
# law, three-level T1 rate equations, echo-exponent bath classification, PL unmixing and DEER signal arithmetic.
# The noise-model fit lives in api_noisefit.

# Imports
import logging
import math
import warnings
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.optimize import isotonic_regression, least_squares
from scipy.stats import linregress

from decohkit.schema import (
    BathClassification,
    BathVerdict,
    ChiCurve,
    CoherenceTrace,
    DataError,
    DecohKitWarning,
    DeerSignals,
    ExponentialFit,
    NumericalError,
    PowerLawFit,
    RatePair,
    RelaxationKind,
    RelaxationTrace,
    StretchedExpFit,
    UnmixResult,
)

logger = logging.getLogger(__name__)

STRETCH_STARTS = (0.5, 1.0, 1.5, 2.0, 3.0)
AMPLITUDE_BOUNDS = (1e-12, 1.5)
STRETCH_BOUNDS = (0.1 + 1e-9, 4.0)
MIN_SAMPLES = 5
LSQ_OPTIONS = dict(method="trf", xtol=1e-10, ftol=1e-15, gtol=1e-15, max_nfev=200)

MARKOVIAN_TOLERANCE = 0.25
CONFIGURATIONAL_MAX = 0.75
CANDIDATE_TOLERANCE = 0.1
RANDOM_WALK_CUTOFF = 10.0
MIN_WINDOW_POINTS = 4


# Exceptions
class FitConvergenceError(NumericalError):
    def __init__(self, message: str, diagnostics: Optional[list] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class DegenerateFitError(DataError):
    pass


class IndeterminateUnmixError(DataError):
    pass


class ZeroEchoSignalError(NumericalError, ZeroDivisionError):
    pass


class MonotoneConstraintWarning(DecohKitWarning):
    pass


class NegativeRateWarning(DecohKitWarning):
    pass


# Stretched exponentials
def _stretched_model(dt: np.ndarray, ln_t2: float, stretch: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    with np.errstate(over="ignore", divide="ignore"):
        log_ratio = np.log(dt) - ln_t2
        z = np.exp(stretch * log_ratio)
        decay = np.exp(-z)
    return decay, z, log_ratio


def _fit_stretched(dt: np.ndarray, c: np.ndarray, stretch0: float, t2_guess: float,
                   fixed_amplitude: Optional[float] = None):
    """One local fit from a stretch start; parameters (a, ln T2, n), or (ln T2, n) with a fixed."""
    def unpack(p):
        if fixed_amplitude is None:
            return p[0], p[1], p[2]
        return fixed_amplitude, p[0], p[1]

    def residuals(p):
        a, ln_t2, n = unpack(p)
        decay, _, _ = _stretched_model(dt, ln_t2, n)
        return a * decay - c

    def jacobian(p):
        a, ln_t2, n = unpack(p)
        decay, z, log_ratio = _stretched_model(dt, ln_t2, n)
        columns = [a * decay * n * z, -a * decay * z * log_ratio]
        if fixed_amplitude is None:
            columns.insert(0, decay)
        return np.nan_to_num(np.column_stack(columns))

    if fixed_amplitude is None:
        x0 = [min(max(c.max(), 1e-3), AMPLITUDE_BOUNDS[1]), math.log(t2_guess), stretch0]
        bounds = ([AMPLITUDE_BOUNDS[0], -np.inf, STRETCH_BOUNDS[0]], [AMPLITUDE_BOUNDS[1], np.inf, STRETCH_BOUNDS[1]])
    else:
        x0 = [math.log(t2_guess), stretch0]
        bounds = ([-np.inf, STRETCH_BOUNDS[0]], [np.inf, STRETCH_BOUNDS[1]])
    return least_squares(residuals, x0, jac=jacobian, bounds=bounds, **LSQ_OPTIONS), unpack


def _prepare(trace: CoherenceTrace) -> Tuple[np.ndarray, np.ndarray, float]:
    t0 = trace.n_pulses * trace.t_pi
    dt = np.asarray(trace.times, dtype=float) - t0
    c = np.asarray(trace.values, dtype=float)
    keep = dt > 0
    if np.count_nonzero(keep) < MIN_SAMPLES:
        raise DataError(f"Trace N={trace.n_pulses} needs at least {MIN_SAMPLES} samples after t0={t0:.3e} s")
    return dt[keep], c[keep], t0


def _t2_guess(dt: np.ndarray, c: np.ndarray) -> float:
    target = c.max() / math.e
    return float(dt[np.argmin(np.abs(c - target))])


def _best_fit(trace: CoherenceTrace, starts: Sequence[float], fixed_amplitude: Optional[float] = None) -> StretchedExpFit:
    dt, c, t0 = _prepare(trace)
    guess = _t2_guess(dt, c)
    best, diagnostics = None, []
    for stretch0 in starts:
        result, unpack = _fit_stretched(dt, c, stretch0, guess, fixed_amplitude)
        cost = float(np.linalg.norm(result.fun))
        diagnostics.append({"start": stretch0, "status": int(result.status), "residual_norm": cost,
                            "message": result.message})
        logger.debug("N=%d stretch start %.1f: status %d, residual %.3e", trace.n_pulses, stretch0,
                     result.status, cost)
        if result.status > 0 and np.all(np.isfinite(result.x)) and (best is None or cost < best[0]):
            best = (cost, unpack(result.x))
    if best is None:
        logging.error("Stretched exponential fit failed for N=%d from every start", trace.n_pulses)
        raise FitConvergenceError(f"Stretched exponential fit for N={trace.n_pulses} did not converge", diagnostics)
    cost, (a, ln_t2, n) = best
    return StretchedExpFit(
        amplitude=float(a),
        t2=math.exp(ln_t2),
        stretch=float(n),
        t0=t0,
        residual_norm=cost,
        n_pulses=trace.n_pulses,
        amplitude_fixed=fixed_amplitude is not None,
    )


def stretched_exp(times, fit: StretchedExpFit) -> np.ndarray:
    """Evaluate a fitted a exp(-((t - t0)/T2)^n); flat at a before t0."""
    dt = np.clip(np.asarray(times, dtype=float) - fit.t0, 0.0, None)
    return fit.amplitude * np.exp(-((dt / fit.t2) ** fit.stretch))


def fit_stretched_exp(trace: CoherenceTrace, starts: Sequence[float] = STRETCH_STARTS) -> StretchedExpFit:
    """
    Least-squares fit of c(t) = a exp(-((t - t0)/T2)^n) with t0 = N t_pi held fixed. Every stretch start is
    tried and the lowest residual is kept.
    """
    fit = _best_fit(trace, starts)
    logger.info("N=%d: T2=%.4e s, n=%.3f, a=%.4f", fit.n_pulses, fit.t2, fit.stretch, fit.amplitude)
    return fit


def fit_amplitude_monotone(traces: Iterable[CoherenceTrace], tolerance: float = 0.02,
                           starts: Sequence[float] = STRETCH_STARTS) -> List[StretchedExpFit]:
    """
    Fits with amplitudes non-increasing in N. Free amplitudes are projected onto the non-increasing cone with
    isotonic regression; traces whose amplitude moved are refitted with the amplitude held at the projection.
    A MonotoneConstraintWarning reports projections larger than `tolerance`.
    """
    ordered = sorted(traces, key=lambda tr: tr.n_pulses)
    if not ordered:
        raise DataError("fit_amplitude_monotone needs at least one trace")
    free = [_best_fit(trace, starts) for trace in ordered]
    amplitudes = np.array([fit.amplitude for fit in free])
    projected = isotonic_regression(amplitudes, increasing=False).x
    violation = float(np.max(np.abs(projected - amplitudes)))
    if violation > tolerance:
        warnings.warn(
            f"Amplitude constraint active: free amplitudes {np.round(amplitudes, 4).tolist()} moved by up to "
            f"{violation:.3f}",
            MonotoneConstraintWarning,
            stacklevel=2,
        )
    fits = []
    for trace, fit, target in zip(ordered, free, projected):
        if abs(target - fit.amplitude) > 1e-12:
            fit = _best_fit(trace, starts, fixed_amplitude=float(target))
        fits.append(fit)
    return fits


def fit_power_law(points: Sequence[Tuple[float, float]]) -> PowerLawFit:
    """T2(N) = T2_echo N^k from a linear regression of ln T2 on ln N."""
    if len(points) < 3:
        raise DegenerateFitError(f"Power-law fit needs at least 3 points, got {len(points)}")
    n_values = np.array([p[0] for p in points], dtype=float)
    t2_values = np.array([p[1] for p in points], dtype=float)
    if np.any(n_values < 1) or np.any(t2_values <= 0):
        raise DataError("Power-law fit needs N >= 1 and T2 > 0")
    if np.all(n_values == n_values[0]):
        raise DegenerateFitError("Power-law fit needs at least two distinct pulse numbers")
    result = linregress(np.log(n_values), np.log(t2_values))
    t2_echo = math.exp(result.intercept)
    return PowerLawFit(
        t2_echo=t2_echo,
        k=float(result.slope),
        t2_echo_stderr=t2_echo * float(result.intercept_stderr),
        k_stderr=float(result.stderr),
    )


# Relaxation
def rate_matrix(omega: float, gamma: float) -> np.ndarray:
    """
    Generator of the populations (p0, p+1, p-1): rate Omega on each 0 <-> +-1 link and gamma on +1 <-> -1.
    Relaxation eigenvalues are -3 Omega and -(Omega + 2 gamma).
    """
    return np.array([
        [-2.0 * omega, omega, omega],
        [omega, -omega - gamma, gamma],
        [omega, gamma, -omega - gamma],
    ])


def simulate_relaxation(omega: float, gamma: float, times: Sequence[float], kind: RelaxationKind) -> RelaxationTrace:
    """
    Population-difference signal from the full rate matrix. SQ: p0 after initialising in 0 minus p0 after
    initialising in -1. DQ: p-1 minus p+1 after initialising in -1.
    """
    generator = rate_matrix(omega, gamma)
    times = np.asarray(times, dtype=float)
    signal = np.empty_like(times)
    for i, t in enumerate(times):
        propagator = expm(generator * t)
        if kind == RelaxationKind.SQ:
            signal[i] = propagator[0, 0] - propagator[0, 2]
        else:
            signal[i] = propagator[2, 2] - propagator[1, 2]
    return RelaxationTrace(times=times, signal=signal, kind=kind)


def fit_exponential(times: Sequence[float], values: Sequence[float]) -> ExponentialFit:
    """Least-squares fit of A exp(-r t) with analytic Jacobian in (A, ln r)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 2 or t.size != y.size:
        raise DataError("Exponential fit needs at least two (t, value) pairs of equal length")
    positive = y > 0
    if np.count_nonzero(positive) >= 2 and np.ptp(t[positive]) > 0:
        seed = linregress(t[positive], np.log(y[positive]))
        rate0 = max(-seed.slope, 1e-12 / max(t.max(), 1e-300))
        amp0 = math.exp(seed.intercept)
    else:
        rate0, amp0 = 1.0 / max(t.max(), 1e-300), float(y.max())

    def residuals(p):
        return p[0] * np.exp(-math.exp(p[1]) * t) - y

    def jacobian(p):
        rate = math.exp(p[1])
        decay = np.exp(-rate * t)
        return np.column_stack([decay, -p[0] * decay * rate * t])

    result = least_squares(residuals, [amp0, math.log(rate0)], jac=jacobian, **LSQ_OPTIONS)
    if result.status <= 0:
        raise FitConvergenceError("Exponential fit did not converge", [{"message": result.message}])
    return ExponentialFit(amplitude=float(result.x[0]), rate=math.exp(result.x[1]),
                          residual_norm=float(np.linalg.norm(result.fun)))


def fit_rate_equations(sq_trace: RelaxationTrace, dq_trace: RelaxationTrace,
                       tolerance: float = 0.01) -> RatePair:
    """
    Omega and gamma from the SQ (rate 3 Omega) and DQ (rate Omega + 2 gamma) difference signals. A gamma below
    zero by more than `tolerance` of the DQ rate raises a NegativeRateWarning; gamma is reported clipped at 0.
    """
    if sq_trace.kind != RelaxationKind.SQ or dq_trace.kind != RelaxationKind.DQ:
        raise DataError("fit_rate_equations expects an SQ trace and a DQ trace")
    if len(sq_trace.times) == 0 or len(dq_trace.times) == 0:
        raise DataError("Relaxation traces must not be empty")
    sq_rate = fit_exponential(sq_trace.times, sq_trace.signal).rate
    dq_rate = fit_exponential(dq_trace.times, dq_trace.signal).rate
    omega = sq_rate / 3.0
    gamma = 0.5 * (dq_rate - omega)
    if gamma < -tolerance * dq_rate:
        warnings.warn(f"Fitted DQ rate gamma={gamma:.4e} s^-1 is negative", NegativeRateWarning, stacklevel=2)
    rates = RatePair(omega_sq_rate=omega, gamma_dq_rate=max(gamma, 0.0))
    logger.info("T1_SQ=%.4e s, T1_DQ=%.4e s", rates.t1_sq, rates.t1_dq)
    return rates


# Bath classification
def _candidates(n_rw: float) -> Tuple[Tuple[int, int], ...]:
    return tuple(
        (d, alpha) for d in (1, 2, 3) for alpha in (2, 3)
        if abs(n_rw - d / (2.0 * alpha)) <= CANDIDATE_TOLERANCE
    )


def classify_bath(echo: ChiCurve, tau_c: float, cutoff: float = RANDOM_WALK_CUTOFF) -> BathClassification:
    """
    Random-walk echo exponent from log chi against log t over t > cutoff * tau_c, with a ballistic slope over
    t < tau_c when at least three points fall there. The verdict depends only on the slope.
    """
    if not tau_c > 0:
        raise DataError("tau_c must be positive")
    t = np.asarray(echo.times, dtype=float)
    chi = np.asarray(echo.chi, dtype=float)
    valid = np.isfinite(chi) & (chi > 0) & (t > 0)

    n_ballistic = None
    short = valid & (t < tau_c)
    if np.count_nonzero(short) >= 3:
        n_ballistic = float(linregress(np.log(t[short]), np.log(chi[short])).slope)

    window = valid & (t > cutoff * tau_c)
    count = int(np.count_nonzero(window))
    if count < MIN_WINDOW_POINTS:
        return BathClassification(
            n_rw=None, n_rw_stderr=None, verdict=BathVerdict.INDETERMINATE, n_ballistic=n_ballistic,
            reason=f"only {count} points with t > {cutoff:g} tau_c and 0 < C < 1; need {MIN_WINDOW_POINTS}",
        )
    result = linregress(np.log(t[window]), np.log(chi[window]))
    n_rw = float(result.slope)
    if abs(n_rw - 1.0) <= MARKOVIAN_TOLERANCE:
        verdict, reason = BathVerdict.FIXED_MARKOVIAN, ""
    elif n_rw <= CONFIGURATIONAL_MAX:
        verdict, reason = BathVerdict.CONFIGURATIONAL, ""
    else:
        verdict, reason = BathVerdict.INDETERMINATE, f"n_rw={n_rw:.3f} outside both verdict ranges"
    logger.info("Echo exponent n_rw=%.3f +- %.3f: %s", n_rw, result.stderr, verdict.value)
    return BathClassification(
        n_rw=n_rw,
        n_rw_stderr=float(result.stderr),
        verdict=verdict,
        candidates=_candidates(n_rw),
        n_ballistic=n_ballistic,
        reason=reason,
    )


# Photoluminescence and DEER
def _unit_sum(spectrum, label: str) -> np.ndarray:
    values = np.asarray(spectrum, dtype=float)
    total = values.sum()
    if not total > 0:
        raise DataError(f"{label} spectrum must have a positive sum")
    return values / total


def unmix_pl(measured, ref_nv0, ref_nvm) -> UnmixResult:
    """
    Fraction a of pl = a pl0 + (1 - a) pl- by least squares, every spectrum normalized to unit sum first.
    The one-dimensional optimum is projected onto [0, 1].
    """
    m, r0, rm = (_unit_sum(s, label) for s, label in
                 ((measured, "measured"), (ref_nv0, "NV0 reference"), (ref_nvm, "NV- reference")))
    if not m.shape == r0.shape == rm.shape:
        raise DataError("All spectra must share one wavelength grid")
    difference = r0 - rm
    norm_sq = float(difference @ difference)
    if norm_sq <= 1e-24:
        raise IndeterminateUnmixError("Reference spectra are identical; the NV0 fraction is indeterminate")
    raw = float((m - rm) @ difference) / norm_sq
    a = min(max(raw, 0.0), 1.0)
    residual = float(np.linalg.norm(m - rm - a * difference))
    return UnmixResult(nv0_fraction=a, nvm_fraction=1.0 - a, residual_norm=residual, clipped=a != raw)


def deer_signals(f1, f2, f3, f4) -> DeerSignals:
    """S_D = (F1 - F2)/(F1 + F2), S_E = (F3 - F4)/(F3 + F4), S_FID = S_D / S_E."""
    f1, f2, f3, f4 = (np.asarray(f, dtype=float) for f in (f1, f2, f3, f4))
    if np.any(f1 + f2 <= 0) or np.any(f3 + f4 <= 0):
        raise DataError("Photon counts must satisfy F1 + F2 > 0 and F3 + F4 > 0")
    s_d = (f1 - f2) / (f1 + f2)
    s_e = (f3 - f4) / (f3 + f4)
    if np.any(s_e == 0):
        raise ZeroEchoSignalError(f"Echo contrast S_E is zero at index {np.flatnonzero(s_e == 0).tolist()}")
    s_fid = s_d / s_e
    if s_fid.ndim == 0:
        return DeerSignals(s_d=float(s_d), s_e=float(s_e), s_fid=float(s_fid))
    return DeerSignals(s_d=s_d, s_e=s_e, s_fid=s_fid)


def fit_deer_fid(times: Sequence[float], s_fid: Sequence[float]) -> ExponentialFit:
    fit = fit_exponential(times, s_fid)
    logger.info("DEER FID time %.4e s", fit.time_constant)
    return fit
