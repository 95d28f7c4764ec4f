# Spectral decomposition
#
# Converts families of CPMG coherence traces into noise spectral density points through the delta-peak
# approximation S(pi N / t) = pi chi(t) / (kappa t), bins them logarithmically and appends the DQ and SQ
# relaxation points for the combined overview.

# Imports
import logging
import math
import warnings
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy.stats import binned_statistic

import decohkit.api.api_filterfn as filterfn_api
import decohkit.api.api_spectra as spectra_api

from decohkit.schema import (
    BinnedSpectrum,
    CoherenceTrace,
    DataError,
    DecohKitWarning,
    RatePair,
    SpectrumBin,
    SpectrumPoint,
    SpectrumSource,
    TraceScale,
)

logger = logging.getLogger(__name__)

DEFAULT_MIN_PULSES = 64
DEFAULT_BINS = 14
CONTRAST_SOURCE = "contrast"


# Exceptions
class EmptyTraceError(DataError):
    pass


class NoRetainedPointsError(DataError):
    pass


class SkippedTraceWarning(DecohKitWarning):
    pass


# Methods
def _check_times(trace: CoherenceTrace) -> None:
    times = np.asarray(trace.times, dtype=float)
    if times.size and np.any(np.diff(times) <= 0):
        raise DataError(f"Trace N={trace.n_pulses} {trace.label!r}: times must be strictly increasing")


def resolve_scale(raw: CoherenceTrace, scale: Optional[TraceScale] = None) -> TraceScale:
    """
    Contrast-to-coherence mapping for a trace: the explicit scale, else the trace's own, else min/max
    rescaling for raw contrast traces. Traces already in coherence units map through the identity.
    """
    if scale is not None:
        return scale
    if raw.scale is not None:
        return raw.scale
    if raw.source == CONTRAST_SOURCE:
        values = np.asarray(raw.values, dtype=float)
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            raise DataError(f"Trace N={raw.n_pulses}: constant contrast cannot be rescaled")
        logger.info("Trace N=%d: min/max rescaling (baseline %.6g, amplitude %.6g)", raw.n_pulses, lo, hi - lo)
        return TraceScale(baseline=lo, amplitude=hi - lo)
    return TraceScale(baseline=0.0, amplitude=1.0)


def normalize_trace(raw: CoherenceTrace, scale: Optional[TraceScale] = None) -> CoherenceTrace:
    """
    Rescale to coherence c = (value - baseline) / amplitude and discard samples outside [0, 1]. Samples at
    exactly 0 or 1 are kept.
    """
    if len(raw.times) == 0:
        raise EmptyTraceError(f"Trace N={raw.n_pulses} {raw.label!r} is empty")
    _check_times(raw)
    mapping = resolve_scale(raw, scale)
    if mapping.amplitude == 0:
        raise DataError("TraceScale amplitude must be non-zero")
    times = np.asarray(raw.times, dtype=float)
    values = (np.asarray(raw.values, dtype=float) - mapping.baseline) / mapping.amplitude
    keep = (values >= 0.0) & (values <= 1.0)
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.info("Trace N=%d: discarded %d samples outside [0, 1]", raw.n_pulses, dropped)
    if not np.any(keep):
        raise EmptyTraceError(f"Trace N={raw.n_pulses} {raw.label!r}: all samples discarded after normalization")
    stderr = None
    if raw.stderr is not None:
        stderr = np.asarray(raw.stderr, dtype=float)[keep] / abs(mapping.amplitude)
    return raw._replace(
        times=times[keep],
        values=values[keep],
        stderr=stderr,
        source=SpectrumSource.CPMG.value if raw.source == CONTRAST_SOURCE else raw.source,
        scale=None,
    )


def trace_points(trace: CoherenceTrace, kappa: float) -> List[SpectrumPoint]:
    """Spectrum points of one normalized trace; samples with c of exactly 0 or 1 carry no information."""
    times = np.asarray(trace.times, dtype=float)
    values = np.asarray(trace.values, dtype=float)
    usable = (values > 0.0) & (values < 1.0)
    t, c = times[usable], values[usable]
    chi = -np.log(c)
    omega0 = math.pi * trace.n_pulses / t
    s_values = math.pi * chi / (kappa * t)
    weights = [None] * len(t)
    if trace.stderr is not None:
        err = np.asarray(trace.stderr, dtype=float)[usable]
        with np.errstate(divide="ignore"):
            # sigma_S = S sigma_chi / chi with sigma_chi = sigma_c / c
            sigma_s = s_values * err / (c * chi)
        weights = [float(1.0 / s ** 2) if s > 0 else None for s in sigma_s]
    return [
        SpectrumPoint(omega0=float(w), s_value=float(s), source=SpectrumSource.CPMG, weight=weight)
        for w, s, weight in zip(omega0, s_values, weights)
    ]


def extract_spectrum(traces: Iterable[CoherenceTrace], min_pulses: int = DEFAULT_MIN_PULSES,
                     kappa: Optional[float] = None) -> List[SpectrumPoint]:
    """
    Delta-peak spectral decomposition of normalized CPMG traces. Traces with N <= min_pulses are skipped with a
    SkippedTraceWarning. The result is sorted by frequency, so the order of the input traces does not matter.
    """
    kappa = filterfn_api.delta_peak_calibration() if kappa is None else kappa
    points = []
    for trace in traces:
        if trace.n_pulses <= min_pulses:
            warnings.warn(
                f"Skipping trace {trace.label!r} with N={trace.n_pulses} <= min_pulses={min_pulses}",
                SkippedTraceWarning,
                stacklevel=2,
            )
            continue
        points.extend(trace_points(trace, kappa))
    if not points:
        raise NoRetainedPointsError("no CPMG points retained")
    points.sort(key=lambda p: (p.omega0, p.s_value))
    logger.info("Retained %d spectrum points (kappa=%.6f)", len(points), kappa)
    return points


def log_bin(points: List[SpectrumPoint], n_bins: int = DEFAULT_BINS) -> BinnedSpectrum:
    """
    Arithmetic mean and standard error of S in geometric bins spanning the point frequencies. Bin centres are
    the geometric midpoints of their edges; empty bins are omitted.
    """
    if not points:
        raise DataError("log_bin needs at least one point")
    if n_bins < 1:
        raise DataError("n_bins must be positive")
    omega = np.array([p.omega0 for p in points], dtype=float)
    s_values = np.array([p.s_value for p in points], dtype=float)
    if np.any(omega <= 0):
        raise DataError("All frequencies must be positive")
    lo, hi = float(omega.min()), float(omega.max())
    if lo == hi:
        edges = np.array([lo * (1.0 - 1e-9), hi * (1.0 + 1e-9)])
        centres = np.array([lo])
    else:
        edges = np.geomspace(lo, hi, n_bins + 1)
        centres = np.sqrt(edges[:-1] * edges[1:])
    means, _, _ = binned_statistic(omega, s_values, statistic="mean", bins=edges)
    spreads, _, _ = binned_statistic(omega, s_values, statistic="std", bins=edges)
    counts, _, _ = binned_statistic(omega, s_values, statistic="count", bins=edges)
    bins = []
    for centre, mean, spread, count in zip(centres, means, spreads, counts):
        count = int(count)
        if count == 0:
            continue
        # std with ddof=1 divided by sqrt(n) is the population std over sqrt(n - 1)
        stderr = float(spread / math.sqrt(count - 1)) if count > 1 else 0.0
        bins.append(SpectrumBin(omega=float(centre), mean=float(mean), stderr=stderr, count=count))
    return BinnedSpectrum(bins=tuple(bins), n_bins=len(bins), statistic="mean")


def _rate_point(rate: float, omega: float, source: SpectrumSource) -> SpectrumPoint:
    if rate < 0:
        raise DataError(f"{source.value} rate must be non-negative, got {rate}")
    return SpectrumPoint(omega0=float(omega), s_value=float(rate), source=source)


def assemble_overview(binned: BinnedSpectrum,
                      dq: Tuple[float, Optional[float]],
                      sq: Tuple[float, Optional[float]]) -> List[SpectrumPoint]:
    """
    Binned CPMG points followed by the DQ point S(w_DQ) = gamma and the SQ point S(w_SQ) = Omega. A frequency
    of None selects the default 18.8 MHz / 2.87 GHz.
    """
    points = [
        SpectrumPoint(
            omega0=b.omega,
            s_value=b.mean,
            source=SpectrumSource.CPMG,
            weight=1.0 / b.stderr ** 2 if b.stderr > 0 else None,
        )
        for b in binned.bins
    ]
    gamma, omega_dq = dq
    omega_rate, omega_sq = sq
    points.append(_rate_point(gamma, spectra_api.DEFAULT_OMEGA_DQ if omega_dq is None else omega_dq,
                              SpectrumSource.DQ))
    points.append(_rate_point(omega_rate, spectra_api.DEFAULT_OMEGA_SQ if omega_sq is None else omega_sq,
                              SpectrumSource.SQ))
    return points


def relaxation_overview_points(rates: RatePair, omega_dq: Optional[float] = None,
                               omega_sq: Optional[float] = None) -> List[SpectrumPoint]:
    return assemble_overview(
        BinnedSpectrum(bins=(), n_bins=0),
        dq=(rates.gamma_dq_rate, omega_dq),
        sq=(rates.omega_sq_rate, omega_sq),
    )
