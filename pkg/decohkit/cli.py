"""
Command-line entry point for decohkit.

    decohkit --config core-shell --out results simulate
    decohkit --config core-shell --out results analyze --manifest results/manifest.json

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""
import argparse
import copy
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

import decohkit
from decohkit.api.api_io import to_plain
from decohkit.schema import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

# flag dest -> run setting it overrides
RUN_OVERRIDES = {
    "kappa": "kappa",
    "omega_dq": "omega_dq",
    "omega_sq": "omega_sq",
    "n_bins": "n_bins",
    "min_pulses": "min_pulses",
    "depletion_threshold": "depletion_threshold",
    "workers": "workers",
}


class UsageError(ConfigError):
    pass


class DecohKitArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = DecohKitArgumentParser(
        prog="decohkit",
        description="Noise spectroscopy and decoherence modelling for NV centres in nanodiamonds.",
    )
    parser.add_argument("--version", action="version", version=f"decohkit: v{decohkit.__version__}")
    parser.add_argument("--config", required=True,
                        help=f"JSON config file or bundled preset ({', '.join(decohkit.PRESETS)})")
    parser.add_argument("--out", default=None, help="Output directory (overrides run.out_dir)")
    parser.add_argument("--seed", type=int, default=None, help="Seed (overrides run.seed)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    parser.add_argument("--workers", type=int, default=None, help="Worker threads for the Monte Carlo")
    parser.add_argument("--kappa", type=float, default=None, help="Delta-peak calibration factor")
    parser.add_argument("--omega-dq", dest="omega_dq", type=float, default=None, help="DQ transition (rad/s)")
    parser.add_argument("--omega-sq", dest="omega_sq", type=float, default=None, help="SQ transition (rad/s)")
    parser.add_argument("--n-bins", dest="n_bins", type=int, default=None, help="Log bins for the spectrum")
    parser.add_argument("--min-pulses", dest="min_pulses", type=int, default=None,
                        help="Smallest N used for spectral extraction")
    parser.add_argument("--depletion-threshold", dest="depletion_threshold", type=float, default=None,
                        help="Occupancy threshold for the P1 depletion width")

    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True
    simulate = subparsers.add_parser("simulate", help="Write synthetic coherence traces and a manifest.")
    simulate.add_argument("--method", choices=("ou", "filter", "dipolar"), default=None,
                          help="Overrides simulate.method")
    analyze = subparsers.add_parser("analyze", help="Traces to spectrum, noise-model fit and classification.")
    analyze.add_argument("--manifest", default=None, help="Trace manifest written by simulate")
    fit_t1 = subparsers.add_parser("fit-t1", help="Fit the three-level rate equations to SQ and DQ traces.")
    fit_t1.add_argument("--sq", default=None, help="CSV with t_s,signal (overrides t1.sq)")
    fit_t1.add_argument("--dq", default=None, help="CSV with t_s,signal (overrides t1.dq)")
    classify = subparsers.add_parser("classify", help="Classify a Hahn-echo decay by its time exponent.")
    classify.add_argument("--input", default=None, help="CSV with t_s and chi or c (overrides classify.path)")
    classify.add_argument("--tau-c", dest="tau_c", type=float, default=None, help="Bath correlation time (s)")
    subparsers.add_parser("bandbend", help="Solve the radial Poisson problem and report P1 depletion.")
    unmix = subparsers.add_parser("unmix", help="Split a PL spectrum into NV0 and NV- shares.")
    unmix.add_argument("--input", default=None, help="CSV with measured,nv0,nvm (overrides unmix.path)")
    deer = subparsers.add_parser("deer", help="Combine the four DEER frames and fit the FID.")
    deer.add_argument("--input", default=None, help="CSV with t_s,f1,f2,f3,f4 (overrides deer.path)")
    return parser


def configure_logging(verbosity: int):
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    logging.captureWarnings(True)


def _apply_overrides(config: Mapping, args: argparse.Namespace) -> Dict[str, Any]:
    config = copy.deepcopy(dict(config))
    run = config.setdefault("run", {})
    for dest, key in RUN_OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            run[key] = value
    command_overrides = {
        "simulate": {"method": "method"},
        "fit-t1": {"sq": "sq", "dq": "dq"},
        "classify": {"input": "path", "tau_c": "tau_c"},
        "unmix": {"input": "path"},
        "deer": {"input": "path"},
    }
    section_name = {"fit-t1": "t1"}.get(args.command, args.command)
    for dest, key in command_overrides.get(args.command, {}).items():
        value = getattr(args, dest, None)
        if value is not None:
            config.setdefault(section_name, {})[key] = value
    return config


def _client(args: argparse.Namespace) -> decohkit.DecohKit:
    config = _apply_overrides(decohkit.load_config(args.config), args)
    base_dir = None if args.config in decohkit.PRESETS else Path(args.config).resolve().parent
    return decohkit.DecohKit(config=config, out_dir=args.out, seed=args.seed, base_dir=base_dir)


def _emit(result: Mapping):
    sys.stdout.write(json.dumps(to_plain(result), sort_keys=True) + "\n")


def run_simulate(args: argparse.Namespace) -> int:
    result = dict(command="simulate")
    with _client(args) as kit:
        outcome = kit.simulate()
    result["n_traces"] = len(outcome.data["traces"])
    result["seed"] = outcome.data["seed"]
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


def run_analyze(args: argparse.Namespace) -> int:
    result = dict(command="analyze")
    with _client(args) as kit:
        outcome = kit.analyze(manifest=args.manifest)
    noise = outcome.data["noise_fit"]
    result["r_squared"] = noise.r_squared
    result["exponent_a"] = noise.exponent_a
    result["n_bins"] = noise.n_bins
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


def run_fit_t1(args: argparse.Namespace) -> int:
    result = dict(command="fit-t1")
    with _client(args) as kit:
        outcome = kit.fit_t1()
    result["omega_sq_rate"] = outcome.data.omega_sq_rate
    result["gamma_dq_rate"] = outcome.data.gamma_dq_rate
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


def run_classify(args: argparse.Namespace) -> int:
    result = dict(command="classify")
    with _client(args) as kit:
        outcome = kit.classify()
    result["verdict"] = outcome.data.verdict
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


def run_bandbend(args: argparse.Namespace) -> int:
    result = dict(command="bandbend")
    with _client(args) as kit:
        outcome = kit.bandbend()
    result["report"] = outcome.data
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


def run_unmix(args: argparse.Namespace) -> int:
    result = dict(command="unmix")
    with _client(args) as kit:
        outcome = kit.unmix()
    result["nvm_fraction"] = outcome.data.nvm_fraction
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


def run_deer(args: argparse.Namespace) -> int:
    result = dict(command="deer")
    with _client(args) as kit:
        outcome = kit.deer()
    result["written"] = outcome.written
    _emit(result)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "simulate": run_simulate,
    "analyze": run_analyze,
    "fit-t1": run_fit_t1,
    "classify": run_classify,
    "bandbend": run_bandbend,
    "unmix": run_unmix,
    "deer": run_deer,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"decohkit: error: {exc}\n")
        return EXIT_USAGE
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("%s", exc)
        history = getattr(exc, "residual_history", None)
        if history:
            logger.error("Residual history: %s", ", ".join(f"{r:.3e}" for r in history))
        return EXIT_NUMERICAL
