import copy
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import decohkit.api.api_bandbend as bandbend_api
import decohkit.api.api_filterfn as filterfn_api
import decohkit.api.api_io as io_api
import decohkit.api.api_pipeline as pipeline_api
import decohkit.api.api_spectra as spectra_api

from decohkit.schema import (
    SCHEMA_VERSION,
    TOOLKIT_VERSION,
    BandProfile,
    ConfigError,
    NoiseSpectrum,
    RunResultTuple,
    SeedType,
)

__version__ = TOOLKIT_VERSION

logger = logging.getLogger(__name__)

PRESETS = ("core-shell", "bare", "flat", "synthetic-core-shell")
DEFAULT_OUT_DIR = "decohkit-out"


def load_config(source: Union[str, Path]) -> Dict[str, Any]:
    """JSON config from a file path or the name of a bundled preset."""
    if str(source) in PRESETS:
        text = resources.files("decohkit").joinpath("presets", f"{source}.json").read_text(encoding="utf-8")
        origin = f"preset {source}"
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}. Give a path or one of: {', '.join(PRESETS)}")
        text = path.read_text(encoding="utf-8")
        origin = str(path)
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        logging.error("Could not parse %s", origin)
        raise ConfigError(f"{origin} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError(f"{origin} must hold a JSON object")
    logger.info("Loaded config from %s", origin)
    return config


class ToolkitClient:
    def __init__(
            self,
            config: Optional[Mapping] = None,
            config_path: Optional[str] = None,
            out_dir: Optional[Union[str, Path]] = None,
            seed: Optional[SeedType] = None,
            workers: Optional[int] = None,
            base_dir: Optional[Union[str, Path]] = None,
    ):
        """
        :param config: Config as a dictionary
        :param config_path: Path to a JSON config file, or a bundled preset name
        :param out_dir: Output directory, overrides run.out_dir
        :param seed: Seed, overrides run.seed
        :param workers: Worker threads for the Monte Carlo, overrides run.workers
        :param base_dir: Directory relative input paths are resolved against
        """
        self.config = copy.deepcopy(dict(config)) if config else None
        self.base_dir = Path.cwd()
        if config_path:
            self.config = load_config(config_path)
            if Path(config_path).is_file():
                self.base_dir = Path(config_path).resolve().parent
        if base_dir is not None:
            self.base_dir = Path(base_dir)

        if not self.config:
            raise ConfigError("Missing config. Provide config as dictionary or path to configuration file.")
        if "schema_version" not in self.config:
            raise ConfigError("Missing value for schema_version in config")
        if self.config["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported schema_version {self.config['schema_version']!r}; "
                              f"this is version {SCHEMA_VERSION}")

        run = self.config.setdefault("run", {})
        if seed is not None:
            run["seed"] = int(seed)
        self.seed: SeedType = int(run.get("seed", 0))
        self.out_dir = Path(out_dir if out_dir is not None else run.get("out_dir", DEFAULT_OUT_DIR))

        workers = int(workers if workers is not None else run.get("workers", 1))
        if workers < 1:
            raise ConfigError(f"run.workers must be at least 1, got {workers}")
        self.executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        self._kappa: Optional[float] = None


    def __enter__(self):
        return self


    def __exit__(self, exc_type, exc_value, traceback):
        self.close()


    def close(self):
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None


    def section(self, name: str) -> Mapping:
        if name not in self.config or self.config[name] is None:
            raise ConfigError(f"Missing {name} section in config")
        return self.config[name]


    def setting(self, key: str, default: Any = None) -> Any:
        return self.config["run"].get(key, default)


    def resolve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path


    @property
    def kappa(self) -> float:
        if self._kappa is None:
            configured = self.setting("kappa")
            self._kappa = float(configured) if configured is not None else filterfn_api.delta_peak_calibration()
            logger.debug("kappa = %.6f", self._kappa)
        return self._kappa


    def spectrum(self) -> NoiseSpectrum:
        return spectra_api.spectrum_from_config(self.section("spectrum"))


    def provenance(self) -> Dict[str, Any]:
        # output location and thread count do not change results
        hashed = dict(self.config)
        hashed["run"] = {k: v for k, v in self.config["run"].items() if k not in ("out_dir", "workers")}
        return io_api.provenance(hashed, self.seed)


class DecohKit(ToolkitClient):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)


    def simulate(self) -> RunResultTuple:
        return pipeline_api.simulate(api=self)


    def analyze(self, manifest: Optional[str] = None) -> RunResultTuple:
        return pipeline_api.analyze(api=self, manifest=manifest)


    def classify(self) -> RunResultTuple:
        return pipeline_api.classify(api=self)


    def fit_t1(self) -> RunResultTuple:
        return pipeline_api.fit_t1(api=self)


    def bandbend(self) -> RunResultTuple:
        return pipeline_api.bandbend(api=self)


    def unmix(self) -> RunResultTuple:
        return pipeline_api.unmix(api=self)


    def deer(self) -> RunResultTuple:
        return pipeline_api.deer(api=self)


    def predict_t2(self, n_values: List[int]) -> Dict[str, object]:
        """
        :param n_values: Pulse counts to predict T2 for
        :returns: {"t2_curve": [(N, T2), ...], "power_law": PowerLawFit or None}
        """
        return pipeline_api.t2_scaling(api=self, n_values=n_values)


    def solve_band(self) -> BandProfile:
        return bandbend_api.solve_poisson(bandbend_api.band_config_from_config(self.section("band")))
