# Noise model fit
#
# Fits S(w) = sum_k delta_k^2 tau_k / (pi (1 + w^2 tau_k^2)) + delta_e / w^a (+ S0) to a binned spectrum in
# log space. The 1/f amplitude is not free: delta_e = s_dq w_dq^a pins the power law to the DQ relaxation rate.

# Imports
import itertools
import logging
import math
import warnings
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from decohkit.schema import (
    BinnedSpectrum,
    DataError,
    DecohKitWarning,
    LorentzianComponent,
    NoiseFitResult,
    NoiseSpectrum,
    OneOverFComponent,
)

logger = logging.getLogger(__name__)

TAU_BOUNDS = (1e-11, 1e-4)
TAU_STARTS = tuple(np.geomspace(1e-10, 1e-6, 5))
EXPONENT_BOUNDS = (1.0, 2.0)
EXPONENT_STARTS = (1.3, 1.7)
PROFILE_STEP = 10 ** 0.05
PROFILE_CHI2 = 3.84
LOG_NOISE_FLOOR = 0.01
R2_WARN = 0.9
LSQ_OPTIONS = dict(method="trf", xtol=1e-10, ftol=1e-15, gtol=1e-15, max_nfev=200, x_scale="jac")


# Exceptions
class NoiseFitWarning(DecohKitWarning):
    pass


# Methods
class _Layout:
    """Parameter vector [delta_1, ln tau_1, ..., (a), (S0)] and the model built from it."""

    def __init__(self, n_lorentzians: int, anchored: bool, white: bool, s_dq: float, omega_dq: float):
        self.n = n_lorentzians
        self.anchored = anchored
        self.white = white
        self.s_dq = s_dq
        self.omega_dq = omega_dq

    @property
    def size(self) -> int:
        return 2 * self.n + int(self.anchored) + int(self.white)

    def bounds(self):
        lo, hi = [], []
        for _ in range(self.n):
            lo += [0.0, math.log(TAU_BOUNDS[0])]
            hi += [np.inf, math.log(TAU_BOUNDS[1])]
        if self.anchored:
            lo.append(EXPONENT_BOUNDS[0])
            hi.append(EXPONENT_BOUNDS[1])
        if self.white:
            lo.append(0.0)
            hi.append(np.inf)
        return lo, hi

    def split(self, p):
        deltas = p[0:2 * self.n:2]
        taus = np.exp(p[1:2 * self.n:2])
        i = 2 * self.n
        a = p[i] if self.anchored else None
        s0 = p[-1] if self.white else 0.0
        return deltas, taus, a, s0

    def model(self, p, omega):
        deltas, taus, a, s0 = self.split(p)
        total = np.full_like(omega, s0)
        for delta, tau in zip(deltas, taus):
            total = total + delta ** 2 * tau / (math.pi * (1.0 + (omega * tau) ** 2))
        if self.anchored:
            total = total + self.s_dq * (self.omega_dq / omega) ** a
        return total

    def gradient(self, p, omega):
        deltas, taus, a, _ = self.split(p)
        columns = []
        for delta, tau in zip(deltas, taus):
            x2 = (omega * tau) ** 2
            columns.append(2.0 * delta * tau / (math.pi * (1.0 + x2)))
            columns.append(delta ** 2 * tau * (1.0 - x2) / (math.pi * (1.0 + x2) ** 2))
        if self.anchored:
            ratio = self.omega_dq / omega
            columns.append(self.s_dq * ratio ** a * np.log(ratio))
        if self.white:
            columns.append(np.ones_like(omega))
        return np.column_stack(columns)


def _starts(layout: _Layout, omega: np.ndarray, s_values: np.ndarray, white: bool) -> List[np.ndarray]:
    level = float(np.median(s_values))
    if layout.n == 0:
        tau_sets = [()]
    else:
        # taus ordered slow to fast so start pairs are distinct
        tau_sets = [c for c in itertools.combinations(sorted(TAU_STARTS, reverse=True), layout.n)]
    exponents = EXPONENT_STARTS if layout.anchored else (None,)
    starts = []
    for taus, a in itertools.product(tau_sets, exponents):
        p = []
        for tau in taus:
            p += [math.sqrt(math.pi * level / tau / max(layout.n, 1)), math.log(tau)]
        if a is not None:
            p.append(a)
        if white:
            p.append(0.1 * float(s_values.min()))
        starts.append(np.array(p, dtype=float))
    return starts


def _solve(layout: _Layout, omega, log_s, x0, fixed: Optional[Tuple[int, float]] = None):
    """Least squares in log space; `fixed` pins one parameter index to a value (profile scans)."""
    free = np.ones(layout.size, dtype=bool)
    if fixed is not None:
        free[fixed[0]] = False

    def full(q):
        p = np.empty(layout.size)
        p[free] = q
        if fixed is not None:
            p[fixed[0]] = fixed[1]
        return p

    def residuals(q):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(layout.model(full(q), omega)) - log_s

    def jacobian(q):
        p = full(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            jac = layout.gradient(p, omega) / layout.model(p, omega)[:, None]
        return np.nan_to_num(jac[:, free])

    lo, hi = layout.bounds()
    lo, hi = np.asarray(lo)[free], np.asarray(hi)[free]
    start = np.clip(np.asarray(x0, dtype=float)[free], lo, hi)
    # trf needs a strictly interior start
    start = np.where(start <= lo, lo + 1e-6 * np.maximum(1.0, np.abs(lo)), start)
    start = np.where(start >= hi, hi - 1e-6 * np.maximum(1.0, np.abs(hi)), start)
    result = least_squares(residuals, start, jac=jacobian, bounds=(lo, hi), **LSQ_OPTIONS)
    return full(result.x), float(np.sum(result.fun ** 2)), result


def _tau_profile_bound(layout: _Layout, omega, log_s, best, best_cost: float, index: int,
                       sigma_sq: float) -> float:
    """Largest tau_k whose profile cost stays within PROFILE_CHI2 sigma^2 of the optimum."""
    ln_tau = best[index]
    limit = PROFILE_CHI2 * sigma_sq
    previous = (ln_tau, 0.0)
    x0 = best.copy()
    while ln_tau < math.log(TAU_BOUNDS[1]):
        ln_tau = min(ln_tau + math.log(PROFILE_STEP), math.log(TAU_BOUNDS[1]))
        x0[index] = ln_tau
        x0, cost, _ = _solve(layout, omega, log_s, x0, fixed=(index, ln_tau))
        excess = cost - best_cost
        logger.debug("tau profile %.3e s: excess cost %.3e (limit %.3e)", math.exp(ln_tau), excess, limit)
        if excess > limit:
            # interpolate the crossing in ln tau
            frac = (limit - previous[1]) / (excess - previous[1])
            return math.exp(previous[0] + frac * (ln_tau - previous[0]))
        previous = (ln_tau, excess)
    return TAU_BOUNDS[1]


def fit_noise_model(binned: BinnedSpectrum, dq_anchor: Tuple[float, float], n_lorentzians: int = 2,
                    white: bool = False, log_noise_floor: float = LOG_NOISE_FLOOR) -> NoiseFitResult:
    """
    Multi-start log-space fit of the Lorentzian + anchored 1/f (+ white) model to a binned spectrum.

    Lorentzians are returned slowest first. For a component with w_max tau < 1 the data only bound tau from
    above; the bound from a profile scan is reported in tau_upper_bounds (None where tau is resolved).
    """
    if n_lorentzians not in (0, 1, 2):
        raise DataError(f"n_lorentzians must be 0, 1 or 2, got {n_lorentzians}")
    s_dq, omega_dq = dq_anchor
    if s_dq < 0 or not omega_dq > 0:
        raise DataError("DQ anchor needs s_dq >= 0 and omega_dq > 0")
    bins = [b for b in binned.bins if b.mean > 0]
    layout = _Layout(n_lorentzians, anchored=s_dq > 0, white=white, s_dq=s_dq, omega_dq=omega_dq)
    if len(bins) < layout.size + 1:
        raise DataError(f"Noise model with {layout.size} parameters needs at least {layout.size + 1} bins, "
                        f"got {len(bins)}")
    omega = np.array([b.omega for b in bins], dtype=float)
    s_values = np.array([b.mean for b in bins], dtype=float)
    log_s = np.log(s_values)

    best = None
    for x0 in _starts(layout, omega, s_values, white):
        p, cost, result = _solve(layout, omega, log_s, x0)
        logger.debug("noise fit start %s: cost %.4e, status %d", np.round(x0, 3).tolist(), cost, result.status)
        if np.all(np.isfinite(p)) and (best is None or cost < best[1]):
            best = (p, cost)
    p, cost = best

    n = len(bins)
    sigma_sq = max(cost / max(n - layout.size, 1), log_noise_floor ** 2)
    # components the data cannot tell from zero get zero amplitude
    for k in range(layout.n):
        trial = p.copy()
        trial[2 * k] = 0.0
        trial, trial_cost, _ = _solve(layout, omega, log_s, trial, fixed=(2 * k, 0.0))
        if trial_cost - cost <= PROFILE_CHI2 * sigma_sq:
            logger.info("Lorentzian %d not resolved (cost change %.3e); amplitude set to 0", k, trial_cost - cost)
            p, cost = trial, trial_cost

    ss_tot = float(np.sum((log_s - log_s.mean()) ** 2))
    if ss_tot > 1e-30:
        r_squared = 1.0 - cost / ss_tot
    else:
        r_squared = 1.0 if cost < 1e-12 else 0.0

    deltas, taus, a, s0 = layout.split(p)
    omega_max = float(omega.max())
    components = []
    for k, (delta, tau) in enumerate(zip(deltas, taus)):
        bound = None
        if delta > 0 and omega_max * tau < 1.0:
            bound = _tau_profile_bound(layout, omega, log_s, p, cost, 2 * k + 1, sigma_sq)
        components.append((LorentzianComponent(delta=float(delta), tau_c=float(tau)), bound))
    components.sort(key=lambda item: item[0].tau_c, reverse=True)

    delta_e = s_dq * omega_dq ** a if layout.anchored else 0.0
    spectrum = NoiseSpectrum(
        lorentzians=tuple(c for c, _ in components),
        one_over_f=OneOverFComponent(delta_e=delta_e, exponent_a=float(a)) if layout.anchored else None,
        white_floor=float(s0),
    )
    failed = r_squared < 0
    if r_squared < R2_WARN:
        warnings.warn(f"Noise model explains little of the binned spectrum (r^2={r_squared:.3f} < {R2_WARN})",
                      NoiseFitWarning, stacklevel=2)
    logger.info("Noise model fit: r^2=%.4f over %d bins", r_squared, n)
    return NoiseFitResult(
        spectrum=spectrum,
        exponent_a=float(a) if layout.anchored else None,
        delta_e=delta_e,
        r_squared=r_squared,
        s_dq=s_dq,
        omega_dq=omega_dq,
        tau_upper_bounds=tuple(b for _, b in components),
        residual_rms=math.sqrt(cost / n),
        n_bins=n,
        failed=failed,
    )
