import math
import warnings

import numpy as np
import pytest

import decohkit.api.api_extract as extract_api
import decohkit.api.api_filterfn as filterfn_api
import decohkit.api.api_spectra as spectra_api

from conftest import make_trace
from decohkit.schema import (
    DataError,
    RatePair,
    SpectrumPoint,
    SpectrumSource,
    TraceScale,
)

KAPPA = math.pi / 2


def test_normalize_drops_out_of_range_samples():
    trace = make_trace([1e-6, 2e-6, 3e-6, 4e-6], [1.2, 0.8, 0.5, -0.1])
    normalized = extract_api.normalize_trace(trace)
    np.testing.assert_allclose(normalized.times, [2e-6, 3e-6])
    np.testing.assert_allclose(normalized.values, [0.8, 0.5])


def test_normalize_keeps_boundary_samples():
    trace = make_trace([1e-6, 2e-6, 3e-6], [1.0, 0.4, 0.0])
    assert len(extract_api.normalize_trace(trace).times) == 3


def test_normalize_applies_explicit_scale():
    trace = make_trace([1e-6, 2e-6], [0.3, 0.2], stderr=np.array([0.01, 0.01]))
    normalized = extract_api.normalize_trace(trace, TraceScale(baseline=0.1, amplitude=0.2))
    np.testing.assert_allclose(normalized.values, [1.0, 0.5])
    np.testing.assert_allclose(normalized.stderr, [0.05, 0.05])


def test_contrast_traces_are_rescaled_min_max():
    trace = make_trace([1e-6, 2e-6, 3e-6], [0.30, 0.20, 0.10], source="contrast")
    normalized = extract_api.normalize_trace(trace)
    np.testing.assert_allclose(normalized.values, [1.0, 0.5, 0.0])
    assert normalized.source == "CPMG"


def test_constant_contrast_cannot_be_rescaled():
    with pytest.raises(DataError):
        extract_api.normalize_trace(make_trace([1e-6, 2e-6], [0.3, 0.3], source="contrast"))


def test_empty_trace_raises():
    with pytest.raises(extract_api.EmptyTraceError):
        extract_api.normalize_trace(make_trace([], []))


def test_all_samples_discarded_raises():
    with pytest.raises(extract_api.EmptyTraceError):
        extract_api.normalize_trace(make_trace([1e-6, 2e-6], [1.5, -0.5]))


def test_unsorted_times_raise():
    with pytest.raises(DataError):
        extract_api.normalize_trace(make_trace([2e-6, 1e-6], [0.5, 0.6]))


def test_trace_points_delta_peak_inversion():
    t, c = 1e-5, math.exp(-0.5)
    points = extract_api.trace_points(make_trace([t], [c], n_pulses=128), KAPPA)
    assert len(points) == 1
    assert points[0].omega0 == pytest.approx(math.pi * 128 / t)
    assert points[0].s_value == pytest.approx(math.pi * 0.5 / (KAPPA * t))
    assert points[0].source == SpectrumSource.CPMG


def test_trace_points_skip_uninformative_samples():
    points = extract_api.trace_points(make_trace([1e-6, 2e-6, 3e-6], [1.0, 0.5, 0.0]), KAPPA)
    assert len(points) == 1


def test_trace_points_weights_from_stderr():
    trace = make_trace([1e-5], [math.exp(-1.0)], stderr=np.array([0.01]))
    point = extract_api.trace_points(trace, KAPPA)[0]
    sigma_s = point.s_value * 0.01 / (math.exp(-1.0) * 1.0)
    assert point.weight == pytest.approx(1.0 / sigma_s ** 2)


def test_extract_recovers_white_floor(white):
    kappa = filterfn_api.delta_peak_calibration()
    traces = []
    for n_pulses in (128, 256):
        times = np.geomspace(2e-5, 2e-4, 6)
        chi = filterfn_api.chi_curve(white, n_pulses, times).chi
        traces.append(make_trace(times, np.exp(-chi), n_pulses=n_pulses))
    points = extract_api.extract_spectrum(traces, kappa=kappa)
    assert len(points) == 12
    for point in points:
        assert point.s_value == pytest.approx(white.white_floor, rel=1e-3)


def test_extract_is_sorted_and_order_independent():
    a = make_trace([1e-5, 2e-5], [0.9, 0.8], n_pulses=128)
    b = make_trace([1e-5, 2e-5], [0.7, 0.6], n_pulses=256)
    forward = extract_api.extract_spectrum([a, b], kappa=KAPPA)
    backward = extract_api.extract_spectrum([b, a], kappa=KAPPA)
    assert forward == backward
    omegas = [p.omega0 for p in forward]
    assert omegas == sorted(omegas)


def test_extract_skips_few_pulse_traces_with_warning():
    kept = make_trace([1e-5], [0.5], n_pulses=128)
    skipped = make_trace([1e-5], [0.5], n_pulses=64, label="short")
    with pytest.warns(extract_api.SkippedTraceWarning, match="short"):
        points = extract_api.extract_spectrum([kept, skipped], kappa=KAPPA)
    assert len(points) == 1


def test_extract_without_retained_traces_raises():
    traces = [make_trace([1e-5], [0.5], n_pulses=n) for n in (1, 16, 64)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", extract_api.SkippedTraceWarning)
        with pytest.raises(extract_api.NoRetainedPointsError, match="no CPMG points retained"):
            extract_api.extract_spectrum(traces, kappa=KAPPA)


def _points(omegas, values):
    return [SpectrumPoint(omega0=w, s_value=s) for w, s in zip(omegas, values)]


def test_log_bin_means_and_stderr():
    points = _points([1e6, 1.1e6, 1e8, 1.1e8], [2.0, 4.0, 10.0, 10.0])
    binned = extract_api.log_bin(points, n_bins=2)
    assert binned.n_bins == 2
    low, high = binned.bins
    assert low.mean == pytest.approx(3.0)
    assert low.stderr == pytest.approx(1.0)
    assert low.count == 2
    assert high.stderr == pytest.approx(0.0)
    assert low.omega == pytest.approx(math.sqrt(1e6 * math.sqrt(1e6 * 1.1e8)))


def test_log_bin_omits_empty_bins():
    binned = extract_api.log_bin(_points([1e3, 1e9], [1.0, 2.0]), n_bins=6)
    assert binned.n_bins == 2
    assert binned.bins[0].count == binned.bins[1].count == 1


def test_log_bin_single_frequency():
    binned = extract_api.log_bin(_points([5e6, 5e6], [1.0, 3.0]), n_bins=14)
    assert binned.n_bins == 1
    assert binned.bins[0].omega == pytest.approx(5e6)
    assert binned.bins[0].mean == pytest.approx(2.0)


@pytest.mark.parametrize("points, n_bins", [([], 14), ([SpectrumPoint(omega0=1e6, s_value=1.0)], 0)])
def test_log_bin_rejects_bad_input(points, n_bins):
    with pytest.raises(DataError):
        extract_api.log_bin(points, n_bins=n_bins)


def test_assemble_overview_appends_relaxation_points():
    binned = extract_api.log_bin(_points([1e6, 2e6], [1.0, 1.5]), n_bins=1)
    points = extract_api.assemble_overview(binned, dq=(40.0, None), sq=(100.0, None))
    assert [p.source for p in points] == [SpectrumSource.CPMG, SpectrumSource.DQ, SpectrumSource.SQ]
    assert points[1].omega0 == pytest.approx(spectra_api.DEFAULT_OMEGA_DQ)
    assert points[1].s_value == 40.0
    assert points[2].omega0 == pytest.approx(spectra_api.DEFAULT_OMEGA_SQ)
    assert points[2].s_value == 100.0


def test_assemble_overview_rejects_negative_rates():
    binned = extract_api.log_bin(_points([1e6], [1.0]), n_bins=1)
    with pytest.raises(DataError):
        extract_api.assemble_overview(binned, dq=(-1.0, None), sq=(100.0, None))


def test_relaxation_overview_points():
    points = extract_api.relaxation_overview_points(RatePair(omega_sq_rate=100.0, gamma_dq_rate=40.0), omega_dq=1e8)
    assert len(points) == 2
    assert points[0].omega0 == 1e8
