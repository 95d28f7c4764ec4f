# Library Imports
import logging
from enum import Enum
from typing import Any, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from typing_extensions import TypeAlias

logger = logging.getLogger(__name__)

TOOLKIT_VERSION = "0.1.0"
SCHEMA_VERSION = 1

# User-Defined Structs
# > Units
AngularFrequencyType: TypeAlias = float  # rad/s
SpectralDensityType: TypeAlias = float  # rad/s
SecondsType: TypeAlias = float
RateType: TypeAlias = float  # 1/s
ElectronVoltType: TypeAlias = float
NanometerType: TypeAlias = float
SeedType: TypeAlias = int

# refers to a one dimensional float array, kept as numpy for vectorised evaluation
FloatArrayType: TypeAlias = np.ndarray


# Exceptions
class DecohKitError(Exception):
    pass


class ConfigError(DecohKitError, ValueError):
    pass


class DataError(DecohKitError, ValueError):
    pass


class NumericalError(DecohKitError, ArithmeticError):
    pass


class DecohKitWarning(UserWarning):
    pass


# Enums
class SequenceKind(Enum):
    ECHO = "echo"
    CPMG = "cpmg"


class PulseDephasingMode(Enum):
    ACCUMULATE = "accumulate-during-pulse"
    FROZEN = "frozen-during-pulse"
    ZERO_WIDTH = "zero-width"


class HoppingMode(Enum):
    NONE = "none"
    RESAMPLE = "resample-per-shot"


class EchoAveraging(Enum):
    SAMPLED = "sampled"
    ANALYTIC = "analytic"


class SpectrumSource(Enum):
    CPMG = "CPMG"
    DQ = "DQ"
    SQ = "SQ"


class RelaxationKind(Enum):
    SQ = "SQ"
    DQ = "DQ"


class BathVerdict(Enum):
    FIXED_MARKOVIAN = "fixed-Markovian"
    CONFIGURATIONAL = "configurational-averaging"
    INDETERMINATE = "indeterminate"


class DefectKind(Enum):
    DONOR = "donor"
    ACCEPTOR = "acceptor"


class LevelReference(Enum):
    EC = "Ec"
    EV = "Ev"


# > Spectra
class LorentzianComponent(NamedTuple):
    delta: AngularFrequencyType
    tau_c: SecondsType


class OneOverFComponent(NamedTuple):
    delta_e: float
    exponent_a: float


class NoiseSpectrum(NamedTuple):
    lorentzians: Tuple[LorentzianComponent, ...] = ()
    one_over_f: Optional[OneOverFComponent] = None
    white_floor: SpectralDensityType = 0.0


# > Filter functions
class DecouplingSequence(NamedTuple):
    n_pulses: int
    total_time: SecondsType
    t_pi: SecondsType = 0.0
    kind: SequenceKind = SequenceKind.CPMG


class ChiCurve(NamedTuple):
    times: FloatArrayType
    chi: FloatArrayType
    n_pulses: int = 1
    t_pi: SecondsType = 0.0
    stderr: Optional[FloatArrayType] = None


# > Monte Carlo
class OUParams(NamedTuple):
    delta: AngularFrequencyType
    tau_c: SecondsType
    dt: SecondsType
    seed: SeedType = 0


class CoherencePoint(NamedTuple):
    time: SecondsType
    coherence: float
    stderr: float
    n_shots: int


class DipolarBathConfig(NamedTuple):
    dimensionality: int
    interaction_exponent: int
    spin_density: float
    flip_rate: RateType
    coupling_prefactor: float
    exclusion_radius: float
    region_size: float
    hopping: HoppingMode = HoppingMode.NONE
    n_spins: Optional[int] = None
    seed: SeedType = 0
    averaging: EchoAveraging = EchoAveraging.ANALYTIC


# > Traces and spectra
class TraceScale(NamedTuple):
    baseline: float
    amplitude: float


class CoherenceTrace(NamedTuple):
    n_pulses: int
    t_pi: SecondsType
    times: FloatArrayType
    values: FloatArrayType
    source: str = "cpmg"
    stderr: Optional[FloatArrayType] = None
    scale: Optional[TraceScale] = None
    label: str = ""


class SpectrumPoint(NamedTuple):
    omega0: AngularFrequencyType
    s_value: SpectralDensityType
    source: SpectrumSource = SpectrumSource.CPMG
    weight: Optional[float] = None


class SpectrumBin(NamedTuple):
    omega: AngularFrequencyType
    mean: SpectralDensityType
    stderr: float
    count: int


class BinnedSpectrum(NamedTuple):
    bins: Tuple[SpectrumBin, ...]
    n_bins: int
    statistic: str = "mean"

    @property
    def omegas(self) -> FloatArrayType:
        return np.array([b.omega for b in self.bins], dtype=float)

    @property
    def means(self) -> FloatArrayType:
        return np.array([b.mean for b in self.bins], dtype=float)


# > Fits
class StretchedExpFit(NamedTuple):
    amplitude: float
    t2: SecondsType
    stretch: float
    t0: SecondsType
    residual_norm: float
    n_pulses: int = 1
    amplitude_fixed: bool = False


class PowerLawFit(NamedTuple):
    t2_echo: SecondsType
    k: float
    t2_echo_stderr: float
    k_stderr: float


class RelaxationTrace(NamedTuple):
    times: FloatArrayType
    signal: FloatArrayType
    kind: RelaxationKind


class RatePair(NamedTuple):
    omega_sq_rate: RateType
    gamma_dq_rate: RateType

    @property
    def t1_sq(self) -> SecondsType:
        return 1.0 / (3.0 * self.omega_sq_rate)

    @property
    def t1_dq(self) -> SecondsType:
        return 1.0 / (self.omega_sq_rate + 2.0 * self.gamma_dq_rate)


class NoiseFitResult(NamedTuple):
    spectrum: NoiseSpectrum
    exponent_a: Optional[float]
    delta_e: float
    r_squared: float
    s_dq: float = 0.0
    omega_dq: AngularFrequencyType = 0.0
    tau_upper_bounds: Tuple[Optional[SecondsType], ...] = ()
    residual_rms: float = 0.0
    n_bins: int = 0
    failed: bool = False


class BathClassification(NamedTuple):
    n_rw: Optional[float]
    n_rw_stderr: Optional[float]
    verdict: BathVerdict
    candidates: Tuple[Tuple[int, int], ...] = ()
    n_ballistic: Optional[float] = None
    reason: str = ""


class UnmixResult(NamedTuple):
    nv0_fraction: float
    nvm_fraction: float
    residual_norm: float
    clipped: bool = False


class DeerSignals(NamedTuple):
    s_d: Union[float, FloatArrayType]
    s_e: Union[float, FloatArrayType]
    s_fid: Union[float, FloatArrayType]


class ExponentialFit(NamedTuple):
    amplitude: float
    rate: RateType
    residual_norm: float

    @property
    def time_constant(self) -> SecondsType:
        return 1.0 / self.rate


# > Band bending
class MaterialBands(NamedTuple):
    band_gap: ElectronVoltType
    electron_affinity: ElectronVoltType
    permittivity: float
    temperature: float = 300.0
    vacuum_ec_offset: Optional[ElectronVoltType] = None
    nc: float = 1.0e20  # effective density of states, cm^-3
    nv: float = 1.0e19


class JunctionSide(NamedTuple):
    bands: MaterialBands
    fermi_above_ev: ElectronVoltType


class JunctionAlignment(NamedTuple):
    delta_ef: ElectronVoltType
    bending: ElectronVoltType
    partition: float


class DefectLevel(NamedTuple):
    name: str
    density: float  # cm^-3
    energy: ElectronVoltType
    kind: DefectKind
    reference: LevelReference = LevelReference.EC
    degeneracy: Optional[float] = None


class VacancyLevels(NamedTuple):
    """Vacancy with V+, V0 and V- charge states; both transition levels are eV above E_v."""
    name: str
    density: float  # cm^-3
    donor_level: ElectronVoltType  # (+/0)
    acceptor_level: ElectronVoltType  # (0/-)


class BandConfig(NamedTuple):
    radius: NanometerType
    bands: MaterialBands
    defects: Tuple[DefectLevel, ...]
    surface_bending: ElectronVoltType
    grid_points: int = 400
    tolerance: ElectronVoltType = 1e-6
    max_iterations: int = 200
    vacancies: Tuple[VacancyLevels, ...] = ()


class BandProfile(NamedTuple):
    r: FloatArrayType
    potential: FloatArrayType
    ec: FloatArrayType
    ev: FloatArrayType
    fermi_level: ElectronVoltType
    neutral: Mapping[str, FloatArrayType]
    ionized: Mapping[str, FloatArrayType]
    residual_norm: float
    iterations: int
    config: BandConfig
    gauss_closure: float = 0.0
    # per defect: charge label ("+", "0", "-") to density
    charge_states: Mapping[str, Mapping[str, FloatArrayType]] = {}


class DepletionReport(NamedTuple):
    width: NanometerType
    reduction: float
    threshold: float
    width_sensitivity: Mapping[float, NanometerType]


class NVChargeReport(NamedTuple):
    nv_minus: float  # NV- fraction of all NV, particle average
    nv_zero: float
    flat_nv_minus: float
    change: float  # nv_minus / flat_nv_minus - 1


# > Runs
class RunResultTuple:
    """
    Describe the result of a CLI pipeline: the report data and the files written.
    """
    data: Any
    written: List[str]

    def __init__(self, data, written=None):
        self.data = data
        self.written = written or []


def constructor(
        _namedtuple: Any,
        renamed_fields: Union[None, dict] = None,
        filter_fields: bool = True,
        sub_constructors: Union[None, dict] = None,
        section: str = "config",
):
    def namedtuple_constructor(data: Union[Mapping, List[Mapping]]) -> Any:
        """Returns a namedtuple constructor function that can --
        1. Ingest dictionaries or list of dictionaries directly
        2. Renames field names from dict -> namedtuple
        3. Filters out dictionary keys that do not exist in namedtuple
        4. Can apply further constructors to subfields"""
        if data is None:
            return
        if data == []:
            return []

        # 1. ingest datatypes
        is_singleton = False
        if isinstance(data, dict):
            data = [data]
            is_singleton = True
        elif isinstance(data, list):
            if not all(isinstance(datum, dict) for datum in data):
                raise ConfigError(f"All records in {section} must be objects")
        else:
            raise ConfigError(f"Data ingested by {_namedtuple.__name__} cannot be {type(data).__name__}")

        # 2. rename fields
        if renamed_fields:
            data = [
                {(renamed_fields[k] if k in renamed_fields else k): v for k, v in datum.items()}
                for datum in data
            ]

        # 3. Filter extra fields not present in namedtuple definition
        if filter_fields:
            dropped = {k for datum in data for k in datum if k not in _namedtuple._fields}
            if dropped:
                logger.debug("Ignoring unknown keys in %s: %s", section, sorted(dropped))
            data = [{k: v for k, v in datum.items() if k in _namedtuple._fields} for datum in data]

        # 4. [Composition] Apply constructors like this to individual fields
        if sub_constructors:
            data = [
                {k: (sub_constructors[k](v) if k in sub_constructors else v) for k, v in datum.items()}
                for datum in data
            ]

        built = []
        for datum in data:
            missing = [f for f in _namedtuple._fields
                       if f not in datum and f not in _namedtuple._field_defaults]
            if missing:
                raise ConfigError(f"Missing value for {missing[0]} in {section}")
            built.append(_namedtuple(**datum))
        if is_singleton:
            return built[0]
        return built

    return namedtuple_constructor


def enum_value(enum_cls: Any, section: str = "config"):
    """Constructor for enum-valued config fields."""

    def build(value: Any) -> Any:
        if isinstance(value, enum_cls):
            return value
        try:
            return enum_cls(value)
        except ValueError:
            allowed = ", ".join(str(m.value) for m in enum_cls)
            raise ConfigError(f"Invalid value {value!r} in {section}; expected one of: {allowed}")

    return build
