# Band bending
#
# Radial Poisson equation for a spherical diamond nanocrystal. The unknown u(r) is the band-edge shift in eV
# (E_c(r) = E_c0 + u(r), positive = upward) on a node grid r_i = i R / M; u(R) is the prescribed surface bending.
# Control volumes around each node give
#
#   r_{i+1/2}^2 (u_{i+1} - u_i) / h - r_{i-1/2}^2 (u_i - u_{i-1}) / h = (q / eps eps0) rho_i V_i
#
# with V_i = (r_{i+1/2}^3 - r_{i-1/2}^3) / 3 and rho = p - n + N_D+ - N_A- + N_V (P(V+) - P(V-)) in cm^-3.
# Energies are referenced to the bulk valence band edge E_v0 = 0.

# Imports
import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq
from scipy.special import expit, softmax

from decohkit.schema import (
    BandConfig,
    BandProfile,
    ConfigError,
    DataError,
    DefectKind,
    DefectLevel,
    DepletionReport,
    JunctionAlignment,
    JunctionSide,
    LevelReference,
    MaterialBands,
    NumericalError,
    NVChargeReport,
    VacancyLevels,
    constructor,
    enum_value,
)

logger = logging.getLogger(__name__)

BOLTZMANN_EV = 8.617333262e-5
# q / eps0 in eV nm^2 cm^3
CHARGE_CONSTANT = 1.602176634e-19 / 8.8541878128e-12 * 1e6 * 1e-18
CARBON_DENSITY = 1.76e23  # cm^-3

DONOR_DEGENERACY = 2.0
ACCEPTOR_DEGENERACY = 4.0
MIN_GRID_POINTS = 200
MAX_STEP = 0.1  # eV
RESIDUAL_TOLERANCE = 1e-8
MAX_HALVINGS = 30
DEPLETION_THRESHOLD = 0.5
SENSITIVITY_THRESHOLDS = (0.25, 0.75)
DEFAULT_PARTITION = 0.225 / 1.45
# negatively charged vacancies compensating two thirds of the P1 donors
DEFAULT_VACANCY_RATIO = 0.665
VACANCY_DONOR_LEVEL = 0.6  # (+/0), eV above E_v
VACANCY_ACCEPTOR_LEVEL = 2.5  # (0/-)


# Exceptions
class PoissonDivergenceError(NumericalError):
    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        super().__init__(message)
        self.residual_history = residual_history or []


class MissingDefectError(DataError):
    pass


# Materials
def diamond_bands(temperature: float = 300.0) -> MaterialBands:
    """Diamond: gap 5.5 eV, surface electron affinity 2 eV, bulk E_c 1.5 eV below vacuum, eps_r 5.7."""
    return MaterialBands(band_gap=5.5, electron_affinity=2.0, permittivity=5.7, temperature=temperature,
                         vacuum_ec_offset=1.5, nc=1.0e20, nv=1.0e19)


def silica_bands(temperature: float = 300.0) -> MaterialBands:
    return MaterialBands(band_gap=9.4, electron_affinity=0.7, permittivity=3.9, temperature=temperature,
                         vacuum_ec_offset=0.7, nc=1.0e19, nv=1.0e19)


def ppm(value: float) -> float:
    """Defect density in cm^-3 for a concentration in ppm of carbon sites."""
    return value * 1e-6 * CARBON_DENSITY


def default_defects(p1_ppm: float = 100.0, nv_ratio: float = 0.01) -> Tuple[DefectLevel, ...]:
    """P1 donor 1.7 eV below E_c and the NV(-/0) acceptor 2 eV above E_v at 1/100 of the P1 density."""
    p1 = ppm(p1_ppm)
    return (
        DefectLevel(name="P1", density=p1, energy=1.7, kind=DefectKind.DONOR, reference=LevelReference.EC),
        DefectLevel(name="NV", density=p1 * nv_ratio, energy=2.0, kind=DefectKind.ACCEPTOR,
                    reference=LevelReference.EV),
    )


def default_vacancies(p1_ppm: float = 100.0,
                      vacancy_ratio: float = DEFAULT_VACANCY_RATIO) -> Tuple[VacancyLevels, ...]:
    if vacancy_ratio == 0:
        return ()
    return (VacancyLevels(name="V", density=ppm(p1_ppm) * vacancy_ratio, donor_level=VACANCY_DONOR_LEVEL,
                          acceptor_level=VACANCY_ACCEPTOR_LEVEL),)


def free_surface_bending(bands: MaterialBands) -> float:
    """Bare-surface bending: bulk conduction-band offset to vacuum minus the surface electron affinity."""
    offset = bands.electron_affinity if bands.vacuum_ec_offset is None else bands.vacuum_ec_offset
    return offset - bands.electron_affinity


def work_function(side: JunctionSide) -> float:
    bands = side.bands
    offset = bands.electron_affinity if bands.vacuum_ec_offset is None else bands.vacuum_ec_offset
    return offset + bands.band_gap - side.fermi_above_ev


def align_heterojunction(diamond: JunctionSide, shell: JunctionSide,
                         partition: float = DEFAULT_PARTITION) -> JunctionAlignment:
    """
    Vacuum-referenced Fermi mismatch delta_ef = W_shell - W_core before contact. The core's bands bend upward
    (positive) when its Fermi level lies above the shell's; `partition` is the share of delta_ef dropped in the
    core.
    """
    if not 0.0 <= partition <= 1.0:
        raise ConfigError(f"partition must lie in [0, 1], got {partition}")
    delta_ef = work_function(shell) - work_function(diamond)
    return JunctionAlignment(delta_ef=delta_ef, bending=partition * delta_ef, partition=partition)


# Occupation
def _thermal(bands: MaterialBands) -> float:
    return BOLTZMANN_EV * bands.temperature


def level_energy(defect: DefectLevel, bands: MaterialBands) -> float:
    if defect.reference == LevelReference.EC:
        return bands.band_gap - defect.energy
    return defect.energy


def validate_defect(defect: DefectLevel, bands: MaterialBands) -> DefectLevel:
    if defect.density < 0:
        raise ConfigError(f"Defect {defect.name}: density must be non-negative")
    if not 0.0 < defect.energy < bands.band_gap:
        raise ConfigError(f"Defect {defect.name}: level {defect.energy} eV lies outside the gap")
    return defect


def _degeneracy(defect: DefectLevel) -> float:
    if defect.degeneracy is not None:
        return defect.degeneracy
    return DONOR_DEGENERACY if defect.kind == DefectKind.DONOR else ACCEPTOR_DEGENERACY


def ionized_density(defect: DefectLevel, bands: MaterialBands, fermi: float, u) -> np.ndarray:
    """N_D+ = N_D / (1 + g exp((E_f - E_D - u)/kT)); N_A- = N_A / (1 + g exp((E_A + u - E_f)/kT))."""
    kt = _thermal(bands)
    level = level_energy(defect, bands) + np.asarray(u, dtype=float)
    g = math.log(_degeneracy(defect))
    if defect.kind == DefectKind.DONOR:
        return defect.density * expit(-(fermi - level) / kt - g)
    return defect.density * expit(-(level - fermi) / kt - g)


def validate_vacancy(vacancy: VacancyLevels, bands: MaterialBands) -> VacancyLevels:
    if vacancy.density < 0:
        raise ConfigError(f"Vacancy {vacancy.name}: density must be non-negative")
    if not 0.0 < vacancy.donor_level < vacancy.acceptor_level < bands.band_gap:
        raise ConfigError(f"Vacancy {vacancy.name}: need 0 < (+/0) < (0/-) < band gap, got "
                          f"{vacancy.donor_level} and {vacancy.acceptor_level} eV")
    return vacancy


def vacancy_occupation(vacancy: VacancyLevels, bands: MaterialBands, fermi: float, u) -> np.ndarray:
    """
    Probabilities of V+, V0 and V- (axis 0) for unit degeneracies. Each captured electron contributes
    (E_f - E_level - u) / kT to the log weight of the state.
    """
    kt = _thermal(bands)
    u = np.asarray(u, dtype=float)
    first = (fermi - vacancy.donor_level - u) / kt
    second = (fermi - vacancy.acceptor_level - u) / kt
    weights = np.stack([np.zeros_like(first), first, first + second])
    return softmax(weights, axis=0)


def _vacancy_charge(vacancy: VacancyLevels, bands: MaterialBands, fermi: float, u) -> Tuple[np.ndarray, np.ndarray]:
    plus, zero, minus = vacancy_occupation(vacancy, bands, fermi, u)
    captured = zero + 2.0 * minus
    variance = np.maximum(zero + 4.0 * minus - captured ** 2, 0.0)
    return vacancy.density * (plus - minus), vacancy.density * variance / _thermal(bands)


def _carriers(bands: MaterialBands, fermi: float, u) -> Tuple[np.ndarray, np.ndarray]:
    kt = _thermal(bands)
    u = np.asarray(u, dtype=float)
    n = bands.nc * np.exp((fermi - bands.band_gap - u) / kt)
    p = bands.nv * np.exp((u - fermi) / kt)
    return n, p


def charge_density(bands: MaterialBands, defects: Sequence[DefectLevel], fermi: float, u,
                   vacancies: Sequence[VacancyLevels] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """(rho, d rho / du) in cm^-3 and cm^-3 / eV."""
    kt = _thermal(bands)
    n, p = _carriers(bands, fermi, u)
    rho = p - n
    slope = (p + n) / kt
    for defect in defects:
        if defect.density == 0:
            continue
        ionized = ionized_density(defect, bands, fermi, u)
        sign = 1.0 if defect.kind == DefectKind.DONOR else -1.0
        rho = rho + sign * ionized
        slope = slope + ionized * (1.0 - ionized / defect.density) / kt
    for vacancy in vacancies:
        if vacancy.density == 0:
            continue
        charge, charge_slope = _vacancy_charge(vacancy, bands, fermi, u)
        rho = rho + charge
        slope = slope + charge_slope
    return rho, slope


def bulk_fermi_level(bands: MaterialBands, defects: Sequence[DefectLevel],
                     vacancies: Sequence[VacancyLevels] = ()) -> float:
    """Fermi level (eV above E_v) that makes the flat-band crystal neutral."""
    for defect in defects:
        validate_defect(defect, bands)
    for vacancy in vacancies:
        validate_vacancy(vacancy, bands)

    def neutrality(fermi):
        return float(charge_density(bands, defects, fermi, 0.0, vacancies)[0])

    return brentq(neutrality, 0.0, bands.band_gap, xtol=1e-12)


# Solver
def _grid(config: BandConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    m = config.grid_points
    h = config.radius / m
    r = np.arange(m + 1) * h
    faces = np.arange(m + 1) * h + 0.5 * h  # r_{i+1/2}
    lower = np.concatenate([[0.0], faces[:-1]])  # r_{i-1/2}
    upper = np.minimum(faces, config.radius)
    volumes = (upper ** 3 - lower ** 3) / 3.0
    return r, faces, volumes, h


def validate_band_config(config: BandConfig) -> BandConfig:
    if not config.radius > 0:
        raise ConfigError("radius must be positive")
    if config.grid_points < MIN_GRID_POINTS:
        raise ConfigError(f"grid_points must be at least {MIN_GRID_POINTS}, got {config.grid_points}")
    if not config.bands.band_gap > 0:
        raise ConfigError("band_gap must be positive")
    if config.bands.permittivity < 1:
        raise ConfigError("permittivity must be at least 1")
    for defect in config.defects:
        validate_defect(defect, config.bands)
    for vacancy in config.vacancies:
        validate_vacancy(vacancy, config.bands)
    return config


def _residual(u_full, faces, volumes, h, coupling, rho):
    m = len(u_full) - 1
    flux = faces[:m] ** 2 * (u_full[1:] - u_full[:-1]) / h
    divergence = flux - np.concatenate([[0.0], flux[:-1]])
    return divergence - coupling * rho[:m] * volumes[:m]


def solve_poisson(config: BandConfig) -> BandProfile:
    """
    Newton iteration on the finite-volume equations with a banded Jacobian. Steps are capped at 0.1 eV and
    halved while the residual grows; convergence needs max |du| below config.tolerance and the relative
    residual below 1e-8. Raises PoissonDivergenceError with the residual history otherwise.
    """
    validate_band_config(config)
    bands, defects, vacancies = config.bands, config.defects, config.vacancies
    fermi = bulk_fermi_level(bands, defects, vacancies)
    r, faces, volumes, h = _grid(config)
    m = config.grid_points
    coupling = CHARGE_CONSTANT / bands.permittivity
    scale = coupling * max([d.density for d in defects] + [v.density for v in vacancies] + [1.0]) * volumes[:m]

    u = np.zeros(m + 1)
    u[m] = config.surface_bending

    def evaluate(u_full):
        rho, slope = charge_density(bands, defects, fermi, u_full, vacancies)
        res = _residual(u_full, faces, volumes, h, coupling, rho)
        return res, slope, float(np.max(np.abs(res / scale)))

    res, slope, norm = evaluate(u)
    history = [norm]
    iterations = 0
    converged = False
    for iterations in range(1, config.max_iterations + 1):
        left = faces[:m] ** 2 / h
        right = np.concatenate([[0.0], left[:-1]])
        diagonal = -(left + right) - coupling * slope[:m] * volumes[:m]
        banded = np.zeros((3, m))
        banded[0, 1:] = left[:-1]
        banded[1] = diagonal
        banded[2, :-1] = right[1:]
        step = solve_banded((1, 1), banded, -res)
        biggest = float(np.max(np.abs(step)))
        if biggest > MAX_STEP:
            step *= MAX_STEP / biggest
        for _ in range(MAX_HALVINGS):
            trial = u.copy()
            trial[:m] += step
            trial_res, trial_slope, trial_norm = evaluate(trial)
            if trial_norm <= norm or np.max(np.abs(step)) < config.tolerance:
                break
            step *= 0.5
        else:
            logging.error("Poisson line search failed at iteration %d", iterations)
            raise PoissonDivergenceError(f"Line search failed at iteration {iterations}", history)
        u, res, slope, norm = trial, trial_res, trial_slope, trial_norm
        history.append(norm)
        logger.debug("Newton %d: max|du|=%.3e, residual=%.3e", iterations, np.max(np.abs(step)), norm)
        if np.max(np.abs(step)) < config.tolerance and norm < RESIDUAL_TOLERANCE:
            converged = True
            break
    if not converged:
        logging.error("Poisson solve did not converge, residual history %s", history[-5:])
        raise PoissonDivergenceError(
            f"Newton iteration did not converge in {config.max_iterations} iterations (residual {norm:.3e})",
            history,
        )

    rho, _ = charge_density(bands, defects, fermi, u, vacancies)
    enclosed = coupling * float(np.sum(rho[:m] * volumes[:m]))
    surface_flux = faces[m - 1] ** 2 * (u[m] - u[m - 1]) / h
    closure = abs(surface_flux - enclosed) / abs(enclosed) if enclosed != 0 else abs(surface_flux)
    neutral, ionized, charge_states = {}, {}, {}
    for defect in defects:
        charged = ionized_density(defect, bands, fermi, u)
        ionized[defect.name] = charged
        neutral[defect.name] = defect.density - charged
        label = "+" if defect.kind == DefectKind.DONOR else "-"
        charge_states[defect.name] = {label: charged, "0": neutral[defect.name]}
    for vacancy in vacancies:
        plus, zero, minus = vacancy_occupation(vacancy, bands, fermi, u)
        charge_states[vacancy.name] = {"+": vacancy.density * plus, "0": vacancy.density * zero,
                                       "-": vacancy.density * minus}
    logger.info("Poisson converged in %d iterations (R=%.1f nm, bending %+.3f eV)", iterations, config.radius,
                config.surface_bending)
    return BandProfile(
        r=r,
        potential=u,
        ec=bands.band_gap + u,
        ev=u.copy(),
        fermi_level=fermi,
        neutral=neutral,
        ionized=ionized,
        residual_norm=norm,
        iterations=iterations,
        config=config,
        gauss_closure=closure,
        charge_states=charge_states,
    )


# Reports
def _find_defect(profile: BandProfile, name: str, kind: DefectKind) -> DefectLevel:
    for defect in profile.config.defects:
        if defect.name == name:
            if defect.kind != kind:
                raise MissingDefectError(f"Defect {name} is not a {kind.value}")
            return defect
    raise MissingDefectError(f"Profile has no defect named {name!r}")


def _sphere_average(profile: BandProfile, values: np.ndarray) -> float:
    """Volume average over the sphere, the surface node carrying the outer half cell."""
    _, _, volumes, _ = _grid(profile.config)
    return float(np.sum(values * volumes) / np.sum(volumes))


def _width_at(r: np.ndarray, neutral: np.ndarray, bulk: float, threshold: float) -> float:
    target = threshold * bulk
    radius = float(r[-1])
    if neutral[-1] >= target:
        return 0.0
    recovered = np.flatnonzero(neutral >= target)
    if recovered.size == 0:
        return radius
    i = int(recovered[-1])
    # neutral crosses the target between nodes i and i + 1
    frac = (neutral[i] - target) / (neutral[i] - neutral[i + 1])
    return radius - float(r[i] + frac * (r[i + 1] - r[i]))


def p1_depletion_report(profile: BandProfile, p1_name: str = "P1",
                        threshold: float = DEPLETION_THRESHOLD) -> DepletionReport:
    """
    Depletion width (distance from the surface where neutral P1 recovers to `threshold` of its bulk value at the
    centre) and the fractional loss of neutral P1 per particle. Downward or flat bending reports zeros.
    """
    _find_defect(profile, p1_name, DefectKind.DONOR)
    if not 0 < threshold < 1:
        raise ConfigError("depletion threshold must lie in (0, 1)")
    levels = tuple(sorted({threshold, *SENSITIVITY_THRESHOLDS}))
    if profile.config.surface_bending <= 0:
        return DepletionReport(width=0.0, reduction=0.0, threshold=threshold,
                               width_sensitivity={level: 0.0 for level in levels})
    neutral = np.asarray(profile.neutral[p1_name], dtype=float)
    bulk = float(neutral[0])
    if bulk <= 0:
        raise DataError(f"{p1_name} has no neutral population in the bulk")
    widths = {level: _width_at(profile.r, neutral, bulk, level) for level in levels}
    reduction = 1.0 - _sphere_average(profile, neutral) / bulk
    logger.info("%s depletion: width %.3f nm, reduction %.1f%%", p1_name, widths[threshold], 100 * reduction)
    return DepletionReport(width=widths[threshold], reduction=reduction, threshold=threshold,
                           width_sensitivity=widths)


def nv_charge_report(profile: BandProfile, nv_name: str = "NV") -> NVChargeReport:
    """Particle-averaged NV- and NV0 fractions, and the NV- change against flat bands at the same Fermi level."""
    defect = _find_defect(profile, nv_name, DefectKind.ACCEPTOR)
    if defect.density == 0:
        return NVChargeReport(nv_minus=0.0, nv_zero=0.0, flat_nv_minus=0.0, change=0.0)
    minus = _sphere_average(profile, np.asarray(profile.ionized[nv_name], dtype=float)) / defect.density
    zero = _sphere_average(profile, np.asarray(profile.neutral[nv_name], dtype=float)) / defect.density
    flat = float(ionized_density(defect, profile.config.bands, profile.fermi_level, 0.0)) / defect.density
    change = minus / flat - 1.0 if flat > 0 else 0.0
    return NVChargeReport(nv_minus=minus, nv_zero=zero, flat_nv_minus=flat, change=change)


def nv_stability_report(profile: BandProfile, nv_name: str = "NV") -> float:
    """Relative change of the NV- count against flat bands with the same Fermi level."""
    return nv_charge_report(profile, nv_name).change


def profile_table(profile: BandProfile) -> Tuple[List[str], List[List[float]]]:
    """
    Header and rows for the profile CSV: r, u, E_c, E_v, per-defect neutral and ionized densities and the
    V+, V0 and V- densities of each vacancy.
    """
    names = [d.name for d in profile.config.defects]
    vacancies = [v.name for v in profile.config.vacancies]
    header = ["r_nm", "phi_eV", "Ec_eV", "Ev_eV"]
    for name in names:
        header += [f"{name}_neutral_cm3", f"{name}_ionized_cm3"]
    for name in vacancies:
        header += [f"{name}_plus_cm3", f"{name}_zero_cm3", f"{name}_minus_cm3"]
    rows = []
    for i in range(len(profile.r)):
        row = [float(profile.r[i]), float(profile.potential[i]), float(profile.ec[i]), float(profile.ev[i])]
        for name in names:
            row += [float(profile.neutral[name][i]), float(profile.ionized[name][i])]
        for name in vacancies:
            states = profile.charge_states[name]
            row += [float(states["+"][i]), float(states["0"][i]), float(states["-"][i])]
        rows.append(row)
    return header, rows


# Config
def _bands_from_config(section: Optional[Mapping]) -> MaterialBands:
    base = diamond_bands()
    if not section:
        return base
    fields = {k: v for k, v in section.items() if k in MaterialBands._fields}
    dropped = set(section) - set(fields)
    if dropped:
        logger.debug("Ignoring unknown keys in band.bands: %s", sorted(dropped))
    return base._replace(**fields)


def _bending_from_config(value: Union[float, str, Mapping], bands: MaterialBands) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    if value == "free-surface":
        return free_surface_bending(bands)
    if value == "heterojunction" or (isinstance(value, Mapping) and "heterojunction" in value):
        options = value["heterojunction"] if isinstance(value, Mapping) else {}
        options = options or {}
        alignment = align_heterojunction(
            JunctionSide(bands=bands, fermi_above_ev=float(options.get("core_fermi_above_ev", 3.9))),
            JunctionSide(bands=silica_bands(), fermi_above_ev=float(options.get("shell_fermi_above_ev", 5.55))),
            partition=float(options.get("partition", DEFAULT_PARTITION)),
        )
        return alignment.bending
    raise ConfigError(f"Invalid surface_bending {value!r}; expected a number, 'free-surface' or 'heterojunction'")


def band_config_from_config(section: Mapping) -> BandConfig:
    """
    BandConfig from the `band` section. Defects default to P1 (p1_ppm, 100 ppm), NV at nv_ratio (1/100) of it and
    vacancies at vacancy_ratio of it; an explicit `defects` list comes without vacancies unless `vacancies` is
    given. surface_bending is a number in eV, "free-surface" or "heterojunction".
    """
    section = dict(section)
    if "radius" not in section:
        raise ConfigError("Missing value for radius in band")
    if "surface_bending" not in section:
        raise ConfigError("Missing value for surface_bending in band")
    bands = _bands_from_config(section.get("bands"))
    p1_ppm = float(section.get("p1_ppm", 100.0))
    if "defects" in section:
        defects = tuple(constructor(
            DefectLevel,
            sub_constructors={
                "kind": enum_value(DefectKind, "band.defects.kind"),
                "reference": enum_value(LevelReference, "band.defects.reference"),
            },
            section="band.defects",
        )(list(section["defects"])))
    else:
        defects = default_defects(p1_ppm, float(section.get("nv_ratio", 0.01)))
    if "vacancies" in section:
        vacancies = tuple(constructor(VacancyLevels, section="band.vacancies")(list(section["vacancies"])))
    elif "defects" in section:
        vacancies = ()
    else:
        vacancies = default_vacancies(p1_ppm, float(section.get("vacancy_ratio", DEFAULT_VACANCY_RATIO)))
    config = BandConfig(
        radius=float(section["radius"]),
        bands=bands,
        defects=defects,
        surface_bending=_bending_from_config(section["surface_bending"], bands),
        grid_points=int(section.get("grid_points", 400)),
        tolerance=float(section.get("tolerance", 1e-6)),
        max_iterations=int(section.get("max_iterations", 200)),
        vacancies=vacancies,
    )
    return validate_band_config(config)


def depletion_summary(profile: BandProfile, p1_name: str = "P1", nv_name: str = "NV",
                      threshold: float = DEPLETION_THRESHOLD) -> Dict[str, object]:
    names = {d.name for d in profile.config.defects}
    report = p1_depletion_report(profile, p1_name, threshold) if p1_name in names else None
    nv = nv_charge_report(profile, nv_name) if nv_name in names else None
    vacancies = {
        vacancy.name: {label: _sphere_average(profile, density) / vacancy.density
                       for label, density in profile.charge_states[vacancy.name].items()}
        for vacancy in profile.config.vacancies if vacancy.density > 0
    }
    return {
        "surface_bending_eV": profile.config.surface_bending,
        "fermi_level_eV": profile.fermi_level,
        "depletion_width_nm": report.width if report else 0.0,
        "p1_reduction": report.reduction if report else 0.0,
        "threshold": threshold,
        "width_sensitivity_nm": {str(k): v for k, v in report.width_sensitivity.items()} if report else {},
        "nv_change": nv.change if nv else 0.0,
        "nv_minus_fraction": nv.nv_minus if nv else 0.0,
        "nv_zero_fraction": nv.nv_zero if nv else 0.0,
        "vacancy_charge_fractions": vacancies,
        "iterations": profile.iterations,
        "residual_norm": profile.residual_norm,
        "gauss_closure": profile.gauss_closure,
    }
