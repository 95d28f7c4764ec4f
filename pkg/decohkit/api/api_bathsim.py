# Ornstein-Uhlenbeck Monte Carlo
#
# Classical dephasing noise b(t) realised as a sum of OU processes (one per Lorentzian, a log-spaced family for a
# 1/f^a term) plus white phase diffusion. The phase phi = int s(u) b(u) du is accumulated with the CPMG toggling
# sign s(u); C = <cos phi> over shots.
#
# Between sign changes the OU field and its integral are sampled jointly from their exact Gaussian transition, so
# no time step is needed for ideal pulses. Finite pulses in accumulate mode are sub-stepped.

# Imports
import logging
import math
from concurrent.futures import Executor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

import decohkit.api.api_filterfn as filterfn_api
import decohkit.api.api_spectra as spectra_api

from decohkit.schema import (
    CoherencePoint,
    CoherenceTrace,
    DataError,
    DecouplingSequence,
    NoiseSpectrum,
    OUParams,
    PulseDephasingMode,
    SeedType,
)

logger = logging.getLogger(__name__)

MIN_SHOTS = 100
DEFAULT_BLOCK = 1000
ONE_OVER_F_DECADES = 2.0


# Exceptions
class OUParamsError(DataError):
    pass


# Methods
def validate_params(params: OUParams) -> OUParams:
    if not params.tau_c > 0:
        raise OUParamsError(f"tau_c must be positive, got {params.tau_c}")
    if params.delta < 0:
        raise OUParamsError("delta must be non-negative")
    if not 0 < params.dt <= params.tau_c / 10.0 * (1.0 + 1e-12):
        raise OUParamsError(f"dt={params.dt:.3e} must satisfy 0 < dt <= tau_c/10 = {params.tau_c / 10.0:.3e}")
    return params


def ou_ensemble(params: OUParams, duration: float, n_paths: int) -> np.ndarray:
    """
    Exact-discretisation OU paths, shape (n_paths, n_steps + 1):
    b[i+1] = b[i] exp(-dt/tau) + delta sqrt(1 - exp(-2 dt/tau)) xi[i], with b[0] stationary.
    """
    validate_params(params)
    if not duration > 0:
        raise OUParamsError("duration must be positive")
    n_steps = int(math.ceil(duration / params.dt - 1e-9))
    rng = np.random.default_rng(params.seed)
    rho = math.exp(-params.dt / params.tau_c)
    innovations = rng.standard_normal((n_paths, n_steps + 1))
    innovations[:, 0] *= params.delta
    innovations[:, 1:] *= params.delta * math.sqrt(-math.expm1(-2.0 * params.dt / params.tau_c))
    return lfilter([1.0], [1.0, -rho], innovations, axis=1)


def ou_trajectory(params: OUParams, duration: float) -> np.ndarray:
    """Single OU path sampled every params.dt from 0 to duration."""
    return ou_ensemble(params, duration, 1)[0]


def _pulse_centres(sequence: DecouplingSequence, mode: PulseDephasingMode) -> Tuple[float, float]:
    tau = sequence.total_time / sequence.n_pulses
    width = 0.0 if mode == PulseDephasingMode.ZERO_WIDTH else sequence.t_pi
    return tau, width


def sequence_segments(sequence: DecouplingSequence, mode: PulseDephasingMode) -> List[Tuple[float, float, bool]]:
    """
    Piecewise description of the toggling sign: (duration, sign, is_pulse). Free intervals follow the symmetric
    CPMG timing tau/2, tau, ..., tau, tau/2 with tau = t/N. Pulses of width t_pi sit between them unless the
    mode is zero-width; for pulses `sign` is the sign before the pulse.
    """
    tau, width = _pulse_centres(sequence, mode)
    segments = []
    sign = 1.0
    for k in range(sequence.n_pulses + 1):
        free = tau / 2.0 if k in (0, sequence.n_pulses) else tau
        segments.append((free, sign, False))
        if k < sequence.n_pulses:
            if width > 0:
                segments.append((width, sign, True))
            sign = -sign
    return segments


def _advance(b: np.ndarray, sigma: float, tau: float, h: float, rng: np.random.Generator,
             integrate: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Joint exact sample of (b(h), int_0^h b) given b(0) for an OU process of rms sigma.
    """
    rho = math.exp(-h / tau)
    one_minus = -math.expm1(-h / tau)
    var_b = sigma ** 2 * one_minus * (1.0 + rho)
    z1 = rng.standard_normal(b.shape)
    b_next = rho * b + math.sqrt(var_b) * z1
    if not integrate:
        return b_next, np.zeros_like(b)
    x = h / tau
    # 2x - 3 + 4 rho - rho^2 written with expm1 for small x
    var_i = sigma ** 2 * tau ** 2 * (2.0 * x + 4.0 * math.expm1(-x) - math.expm1(-2.0 * x))
    cov = sigma ** 2 * tau * one_minus ** 2
    z2 = rng.standard_normal(b.shape)
    if var_b > 0:
        slope = cov / math.sqrt(var_b)
        residual = math.sqrt(max(var_i - slope ** 2, 0.0))
    else:
        slope, residual = 0.0, 0.0
    integral = tau * one_minus * b + slope * z1 + residual * z2
    return b_next, integral


def _pulse_steps(h: float, sign: float, is_pulse: bool, mode: PulseDephasingMode,
                 dt: float) -> List[Tuple[float, float]]:
    if not is_pulse:
        return [(h, sign)]
    if mode == PulseDephasingMode.FROZEN:
        return [(h, 0.0)]
    # accumulate: the toggling sign follows cos through the pi rotation
    n_sub = max(8, int(math.ceil(h / dt)))
    d = h / n_sub
    return [(d, sign * math.cos(math.pi * (i + 0.5) / n_sub)) for i in range(n_sub)]


def _run_block(sigmas: Sequence[float], taus: Sequence[float], white: float,
               steps: List[Tuple[float, float]], n_shots: int, seed: SeedType,
               key: Tuple[int, ...]) -> Tuple[float, float]:
    """
    One block of shots on its own stream SeedSequence(seed, spawn_key=key). Returns (sum cos phi, sum cos^2 phi).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
    phase = np.zeros(n_shots)
    for sigma, tau in zip(sigmas, taus):
        if sigma == 0:
            continue
        b = sigma * rng.standard_normal(n_shots)
        for d, s in steps:
            b, integral = _advance(b, sigma, tau, d, rng, integrate=s != 0.0)
            if s != 0.0:
                phase += s * integral
    if white > 0:
        weight_sq = sum(d * s * s for d, s in steps)
        phase += math.sqrt(white * weight_sq) * rng.standard_normal(n_shots)
    c = np.cos(phase)
    return float(np.sum(c)), float(np.sum(c * c))


def _simulate_point(sigmas: Sequence[float], taus: Sequence[float], white: float,
                    sequence: DecouplingSequence, mode: PulseDephasingMode, n_shots: int, seed: SeedType,
                    dt: float, point_index: int = 0, block_size: int = DEFAULT_BLOCK,
                    executor: Optional[Executor] = None) -> CoherencePoint:
    if n_shots < MIN_SHOTS:
        raise DataError(f"n_shots must be >= {MIN_SHOTS}, got {n_shots}")
    filterfn_api.validate_sequence(sequence)
    steps = [step for h, sign, is_pulse in sequence_segments(sequence, mode)
             for step in _pulse_steps(h, sign, is_pulse, mode, dt)]
    sizes = [block_size] * (n_shots // block_size)
    if n_shots % block_size:
        sizes.append(n_shots % block_size)
    jobs = [(sigmas, taus, white, steps, size, seed, (point_index, b)) for b, size in enumerate(sizes)]
    if executor is None:
        partials = [_run_block(*job) for job in jobs]
    else:
        partials = list(executor.map(lambda job: _run_block(*job), jobs))
    # fixed reduction order: block 0, 1, 2, ...
    total, total_sq = 0.0, 0.0
    for s1, s2 in partials:
        total += s1
        total_sq += s2
    mean = total / n_shots
    var = max(total_sq / n_shots - mean ** 2, 0.0)
    stderr = math.sqrt(var / (n_shots - 1)) if n_shots > 1 else 0.0
    return CoherencePoint(time=sequence.total_time, coherence=mean, stderr=stderr, n_shots=n_shots)


def simulate_coherence(params: OUParams, sequence: DecouplingSequence, mode: PulseDephasingMode,
                       n_shots: int, executor: Optional[Executor] = None, point_index: int = 0) -> CoherencePoint:
    """
    <cos phi> for a single OU field of rms params.delta under the sequence. params.dt sets the sub-step inside
    finite pulses in accumulate mode; ideal pulses and free intervals are integrated exactly.
    """
    validate_params(params)
    return _simulate_point([params.delta], [params.tau_c], 0.0, sequence, mode, n_shots, params.seed,
                           params.dt, point_index=point_index, executor=executor)


def spectrum_ou_components(spectrum: NoiseSpectrum, omega0: float,
                           omega_band: Optional[Tuple[float, float]] = None) -> Tuple[List[float], List[float]]:
    """
    (sigmas, taus) of the OU processes realising the Lorentzian and 1/f parts of a spectrum. The 1/f term is
    resolved over omega_band, by default two decades either side of the filter peak omega0.
    """
    sigmas, taus = [], []
    for component in spectrum.lorentzians:
        sigmas.append(spectra_api.ou_sigma_for_lorentzian(component))
        taus.append(component.tau_c)
    if spectrum.one_over_f is not None:
        lo, hi = omega_band or (omega0 * 10 ** -ONE_OVER_F_DECADES, omega0 * 10 ** ONE_OVER_F_DECADES)
        for component in spectra_api.ou_components_for_one_over_f(spectrum.one_over_f, lo, hi):
            sigmas.append(spectra_api.ou_sigma_for_lorentzian(component))
            taus.append(component.tau_c)
    return sigmas, taus


def simulate_spectrum_coherence(spectrum: NoiseSpectrum, sequence: DecouplingSequence, mode: PulseDephasingMode,
                                n_shots: int, seed: SeedType = 0, omega_band: Optional[Tuple[float, float]] = None,
                                point_index: int = 0, executor: Optional[Executor] = None) -> CoherencePoint:
    """
    Monte Carlo coherence for a full NoiseSpectrum. The white floor enters as Gaussian phase diffusion with
    variance S0 int s^2 du.
    """
    omega0 = math.pi * sequence.n_pulses / sequence.total_time
    sigmas, taus = spectrum_ou_components(spectrum, omega0, omega_band)
    dt = min(taus) / 10.0 if taus else sequence.total_time
    return _simulate_point(sigmas, taus, spectrum.white_floor, sequence, mode, n_shots, seed, dt,
                           point_index=point_index, executor=executor)


def simulate_trace(spectrum: NoiseSpectrum, n_pulses: int, times: Sequence[float], t_pi: float = 0.0,
                   mode: PulseDephasingMode = PulseDephasingMode.ZERO_WIDTH, n_shots: int = 2000,
                   seed: SeedType = 0, executor: Optional[Executor] = None, point_offset: int = 0) -> CoherenceTrace:
    """Monte Carlo trace over `times`; point i draws from the streams of point index point_offset + i."""
    times = np.asarray(sorted(times), dtype=float)
    points = [
        simulate_spectrum_coherence(spectrum, filterfn_api.make_sequence(n_pulses, t, t_pi), mode, n_shots,
                                    seed=seed, point_index=point_offset + i, executor=executor)
        for i, t in enumerate(times)
    ]
    logger.info("Simulated %d points for N=%d (%d shots each)", len(points), n_pulses, n_shots)
    return CoherenceTrace(
        n_pulses=n_pulses,
        t_pi=t_pi,
        times=times,
        values=np.array([p.coherence for p in points]),
        stderr=np.array([p.stderr for p in points]),
        source="mc",
    )
