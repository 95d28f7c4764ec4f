# Pipelines
#
# End-to-end runs behind the command-line subcommands. Each function reads its section of the client's config,
# runs the numerical modules and writes its outputs (with provenance) under the client's output directory.

# Imports
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional

import numpy as np

if TYPE_CHECKING:
    from decohkit import ToolkitClient

import decohkit.api.api_bandbend as bandbend_api
import decohkit.api.api_bathsim as bathsim_api
import decohkit.api.api_extract as extract_api
import decohkit.api.api_filterfn as filterfn_api
import decohkit.api.api_fitkit as fitkit_api
import decohkit.api.api_io as io_api
import decohkit.api.api_noisefit as noisefit_api
import decohkit.api.api_spectra as spectra_api
import decohkit.api.api_spinbath as spinbath_api

from decohkit.schema import (
    BathVerdict,
    ChiCurve,
    ConfigError,
    CoherenceTrace,
    OUParams,
    PulseDephasingMode,
    RelaxationKind,
    RelaxationTrace,
    RunResultTuple,
    TraceScale,
    enum_value,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
T2_FITS_DIR = "t2_fits"
SIMULATION_METHODS = ("ou", "filter", "dipolar")


# Exceptions
class PipelineConfigError(ConfigError):
    pass


# Methods
def _times_for(api: "ToolkitClient", section: Mapping, spectrum, n_pulses: int) -> np.ndarray:
    if "times" in section:
        times = np.asarray(section["times"], dtype=float)
        if times.size == 0 or np.any(times <= 0):
            raise PipelineConfigError("simulate.times must be a non-empty list of positive times")
        return np.sort(times)
    grid = section.get("time_grid", {})
    return filterfn_api.design_time_grid(
        spectrum, n_pulses, n_points=int(grid.get("n_points", 12)), span=tuple(grid.get("span", (0.2, 3.0)))
    )


def simulate(api: "ToolkitClient") -> RunResultTuple:
    """
    Synthetic coherence traces. method "ou" runs the Monte Carlo (a single OU field when simulate.ou is given,
    otherwise the configured spectrum), "filter" writes exp(-chi_exact), "dipolar" writes a Hahn-echo trace of
    the dipolar bath. A manifest lists every trace with its metadata.
    """
    section = api.section("simulate")
    method = section.get("method", "ou")
    if method not in SIMULATION_METHODS:
        raise PipelineConfigError(f"Invalid simulate.method {method!r}; expected one of {', '.join(SIMULATION_METHODS)}")
    prov = api.provenance()
    out = api.out_dir
    entries, written = [], []

    if method == "dipolar":
        config = spinbath_api.bath_config_from_config(api.section("dipolar"), seed=api.seed)
        times = np.sort(np.asarray(section["times"], dtype=float)) if "times" in section else None
        if times is None:
            raise PipelineConfigError("Missing value for times in simulate")
        curve = spinbath_api.dipolar_echo_ensemble(config, times, int(section.get("n_realizations", 1000)))
        trace = CoherenceTrace(n_pulses=1, t_pi=0.0, times=curve.times, values=np.exp(-curve.chi),
                               stderr=np.exp(-curve.chi) * curve.stderr, source="dipolar", label="echo_dipolar")
        traces = [trace]
    else:
        needs_spectrum = "ou" not in section or method == "filter"
        spectrum = api.spectrum() if needs_spectrum or "times" not in section else None
        t_pi = float(section.get("t_pi", 0.0))
        traces = []
        for i, n in enumerate(section.get("n_pulses", [64])):
            n = int(n)
            times = _times_for(api, section, spectrum, n)
            if method == "filter":
                chi = filterfn_api.chi_curve(spectrum, n, times, t_pi=t_pi).chi
                trace = CoherenceTrace(n_pulses=n, t_pi=t_pi, times=times, values=np.exp(-chi), source="filter")
            elif "ou" in section:
                trace = _simulate_single_ou(api, section, n, times, t_pi, point_offset=i * len(times))
            else:
                mode = enum_value(PulseDephasingMode, "simulate.mode")(section.get("mode", "zero-width"))
                trace = bathsim_api.simulate_trace(spectrum, n, times, t_pi=t_pi, mode=mode,
                                                   n_shots=int(section.get("n_shots", 2000)),
                                                   seed=api.seed, executor=api.executor,
                                                   point_offset=i * len(times))
            traces.append(trace._replace(label=f"trace_N{n}"))

    for trace in traces:
        path = io_api.write_trace(out / "traces" / f"{trace.label}.csv", trace, prov)
        written.append(str(path))
        entries.append({"path": str(path.relative_to(out)), "n_pulses": trace.n_pulses, "t_pi": trace.t_pi,
                        "source": trace.source})
    manifest = {"method": method, "seed": api.seed, "config": api.config, "traces": entries}
    written.append(str(io_api.write_json(out / MANIFEST_NAME, manifest, prov)))
    logger.info("simulate (%s): wrote %d traces", method, len(traces))
    return RunResultTuple(data=manifest, written=written)


def _simulate_single_ou(api: "ToolkitClient", section: Mapping, n: int, times, t_pi: float,
                        point_offset: int) -> CoherenceTrace:
    ou = section["ou"]
    for key in ("delta", "tau_c"):
        if key not in ou:
            raise PipelineConfigError(f"Missing value for {key} in simulate.ou")
    params = OUParams(delta=float(ou["delta"]), tau_c=float(ou["tau_c"]),
                      dt=float(ou.get("dt", float(ou["tau_c"]) / 10.0)), seed=api.seed)
    mode = enum_value(PulseDephasingMode, "simulate.mode")(section.get("mode", "zero-width"))
    points = [
        bathsim_api.simulate_coherence(params, filterfn_api.make_sequence(n, t, t_pi), mode,
                                       int(section.get("n_shots", 2000)), executor=api.executor,
                                       point_index=point_offset + j)
        for j, t in enumerate(times)
    ]
    return CoherenceTrace(n_pulses=n, t_pi=t_pi, times=np.asarray(times, dtype=float),
                          values=np.array([p.coherence for p in points]),
                          stderr=np.array([p.stderr for p in points]), source="mc")


def _trace_entries(api: "ToolkitClient", manifest: Optional[str]) -> List[Dict]:
    if manifest:
        path = api.resolve(manifest)
        base = path.parent
        entries = io_api.read_json(path).get("traces", [])
    elif "traces" in api.config:
        base = api.base_dir
        entries = api.config["traces"]
    elif (api.out_dir / MANIFEST_NAME).is_file():
        base = api.out_dir
        entries = io_api.read_json(api.out_dir / MANIFEST_NAME).get("traces", [])
    else:
        raise PipelineConfigError("No traces to analyze: give --manifest, a traces section or run simulate first")
    if not entries:
        raise PipelineConfigError("The trace list is empty")
    missing = [str(e.get("path", f"#{i}")) for i, e in enumerate(entries) if "path" not in e or "n_pulses" not in e]
    if missing:
        raise io_api.MissingMetadataError(f"Missing path or n_pulses for traces: {', '.join(missing)}")
    return [dict(e, path=str((base / e["path"]) if not Path(e["path"]).is_absolute() else e["path"]))
            for e in entries]


def load_traces(api: "ToolkitClient", manifest: Optional[str] = None) -> List[CoherenceTrace]:
    traces = []
    for entry in _trace_entries(api, manifest):
        raw = io_api.read_trace(entry["path"], {k: entry[k] for k in ("n_pulses", "t_pi", "source") if k in entry})
        scale = entry.get("scale")
        if scale is not None:
            raw = raw._replace(scale=TraceScale(baseline=float(scale["baseline"]), amplitude=float(scale["amplitude"])))
        traces.append(raw)
    logger.info("Loaded %d traces", len(traces))
    return traces


def _dq_anchor(api: "ToolkitClient"):
    section = api.config.get("dq_anchor", {}) or {}
    s_dq = float(section.get("s_dq", spectra_api.DEFAULT_S_DQ))
    omega_dq = float(section.get("omega_dq", api.setting("omega_dq", spectra_api.DEFAULT_OMEGA_DQ)))
    return s_dq, omega_dq, section


def _stretched_reports(traces: List[CoherenceTrace], monotone: bool):
    fits = fitkit_api.fit_amplitude_monotone(traces) if monotone else [fitkit_api.fit_stretched_exp(t) for t in traces]
    report = {"fits": [dict(f._asdict(), label=t.label) for f, t in
                       zip(fits, sorted(traces, key=lambda tr: tr.n_pulses) if monotone else traces)]}
    distinct = {f.n_pulses for f in fits}
    if len(fits) >= 3 and len(distinct) >= 2:
        report["power_law"] = fitkit_api.fit_power_law([(f.n_pulses, f.t2) for f in fits])._asdict()
    return fits, report


def _fit_file_names(fits: List[Dict]) -> List[str]:
    """One file stem per trace fit: the trace label, else trace_N<n>; repeats get a numeric suffix."""
    names, seen = [], {}
    for fit in fits:
        stem = Path(str(fit.get("label") or "")).name or f"trace_N{fit['n_pulses']}"
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return names


def analyze(api: "ToolkitClient", manifest: Optional[str] = None) -> RunResultTuple:
    """
    traces -> normalization -> stretched-exponential fits -> spectral decomposition -> log bins -> noise model
    fit, plus the echo-exponent classification when an N = 1 trace is present.
    """
    section = api.config.get("analyze", {}) or {}
    raw = load_traces(api, manifest or section.get("manifest"))
    traces = [extract_api.normalize_trace(t) for t in raw]
    prov = api.provenance()
    out = api.out_dir
    written = []

    fits, fit_report = _stretched_reports(traces, bool(section.get("monotone_amplitude", False)))
    points = extract_api.extract_spectrum(traces, min_pulses=int(api.setting("min_pulses", 64)), kappa=api.kappa)
    binned = extract_api.log_bin(points, n_bins=int(api.setting("n_bins", 14)))
    written.append(str(io_api.write_spectrum(out / "spectrum.csv", binned, prov)))

    s_dq, omega_dq, anchor = _dq_anchor(api)
    model = api.config.get("noise_model", {}) or {}
    noise = noisefit_api.fit_noise_model(binned, (s_dq, omega_dq), n_lorentzians=int(model.get("n_lorentzians", 2)),
                                         white=bool(model.get("white", False)))
    noise_report = dict(noise._asdict(), bin_statistic=binned.statistic, kappa=api.kappa)
    written.append(str(io_api.write_json(out / "noise_fit.json", noise_report, prov)))
    for name, fit in zip(_fit_file_names(fit_report["fits"]), fit_report["fits"]):
        written.append(str(io_api.write_json(out / T2_FITS_DIR / f"{name}.json", fit, prov)))
    if "power_law" in fit_report:
        written.append(str(io_api.write_json(out / "t2_power_law.json", fit_report["power_law"], prov)))

    if "omega_sq_rate" in anchor:
        overview = extract_api.assemble_overview(
            binned, dq=(s_dq, omega_dq), sq=(float(anchor["omega_sq_rate"]), api.setting("omega_sq", None))
        )
        written.append(str(io_api.write_spectrum(out / "overview.csv", overview, prov)))

    echoes = [t for t in traces if t.n_pulses == 1]
    if echoes:
        lorentzians = noise.spectrum.lorentzians
        tau_c = float((api.config.get("classify", {}) or {}).get(
            "tau_c", lorentzians[0].tau_c if lorentzians else 0.0))
        classification = _classify_trace(echoes[0], tau_c)
    else:
        classification = {"verdict": BathVerdict.INDETERMINATE, "reason": "no echo (N=1) trace in the input"}
    written.append(str(io_api.write_json(out / "classification.json", classification, prov)))

    logger.info("analyze: %d traces, %d points, %d bins, r^2=%.3f", len(traces), len(points), binned.n_bins,
                noise.r_squared)
    return RunResultTuple(data={"noise_fit": noise, "fits": fits, "binned": binned}, written=written)


def _classify_trace(trace: CoherenceTrace, tau_c: float):
    values = np.asarray(trace.values, dtype=float)
    usable = (values > 0) & (values < 1)
    curve = ChiCurve(times=np.asarray(trace.times)[usable], chi=-np.log(values[usable]), n_pulses=1)
    return fitkit_api.classify_bath(curve, tau_c)


def classify(api: "ToolkitClient") -> RunResultTuple:
    section = api.section("classify")
    for key in ("path", "tau_c"):
        if key not in section:
            raise PipelineConfigError(f"Missing value for {key} in classify")
    columns = io_api.read_columns(api.resolve(section["path"]))
    if "chi" in columns:
        curve = ChiCurve(times=columns["t_s"], chi=columns["chi"], n_pulses=1)
        result = fitkit_api.classify_bath(curve, float(section["tau_c"]))
    else:
        trace = CoherenceTrace(n_pulses=1, t_pi=0.0, times=columns["t_s"], values=columns["c"])
        result = _classify_trace(trace, float(section["tau_c"]))
    path = io_api.write_json(api.out_dir / "classification.json", result, api.provenance())
    return RunResultTuple(data=result, written=[str(path)])


def fit_t1(api: "ToolkitClient") -> RunResultTuple:
    section = api.section("t1")
    traces = {}
    for kind in (RelaxationKind.SQ, RelaxationKind.DQ):
        key = kind.value.lower()
        if key not in section:
            raise PipelineConfigError(f"Missing value for {key} in t1")
        columns = io_api.read_columns(api.resolve(section[key]))
        traces[kind] = RelaxationTrace(times=columns["t_s"], signal=columns["signal"], kind=kind)
    rates = fitkit_api.fit_rate_equations(traces[RelaxationKind.SQ], traces[RelaxationKind.DQ])
    report = {
        "omega_sq_rate": rates.omega_sq_rate,
        "gamma_dq_rate": rates.gamma_dq_rate,
        "t1_sq": rates.t1_sq,
        "t1_dq": rates.t1_dq,
        "overview": extract_api.relaxation_overview_points(
            rates, omega_dq=api.setting("omega_dq", None), omega_sq=api.setting("omega_sq", None)
        ),
    }
    path = io_api.write_json(api.out_dir / "t1_fit.json", report, api.provenance())
    return RunResultTuple(data=rates, written=[str(path)])


def bandbend(api: "ToolkitClient") -> RunResultTuple:
    config = bandbend_api.band_config_from_config(api.section("band"))
    profile = bandbend_api.solve_poisson(config)
    prov = api.provenance()
    header, rows = bandbend_api.profile_table(profile)
    written = [str(io_api.write_table(api.out_dir / "band_profile.csv", header, rows, prov))]
    summary = bandbend_api.depletion_summary(
        profile, threshold=float(api.setting("depletion_threshold", bandbend_api.DEPLETION_THRESHOLD))
    )
    written.append(str(io_api.write_json(api.out_dir / "band_report.json", summary, prov)))
    return RunResultTuple(data=summary, written=written)


def unmix(api: "ToolkitClient") -> RunResultTuple:
    section = api.section("unmix")
    if "path" not in section:
        raise PipelineConfigError("Missing value for path in unmix")
    columns = io_api.read_columns(api.resolve(section["path"]))
    for key in ("measured", "nv0", "nvm"):
        if key not in columns:
            raise io_api.MissingMetadataError(f"Column {key} missing from {section['path']}")
    result = fitkit_api.unmix_pl(columns["measured"], columns["nv0"], columns["nvm"])
    path = io_api.write_json(api.out_dir / "unmix.json", result, api.provenance())
    return RunResultTuple(data=result, written=[str(path)])


def deer(api: "ToolkitClient") -> RunResultTuple:
    section = api.section("deer")
    if "path" not in section:
        raise PipelineConfigError("Missing value for path in deer")
    columns = io_api.read_columns(api.resolve(section["path"]))
    signals = fitkit_api.deer_signals(columns["f1"], columns["f2"], columns["f3"], columns["f4"])
    prov = api.provenance()
    times = columns.get("t_s")
    written = []
    report = {"n_points": int(np.size(signals.s_fid))}
    if times is not None:
        rows = [[float(t), float(d), float(e), float(f)]
                for t, d, e, f in zip(times, signals.s_d, signals.s_e, signals.s_fid)]
        written.append(str(io_api.write_table(api.out_dir / "deer_signals.csv",
                                              ["t_s", "s_d", "s_e", "s_fid"], rows, prov)))
        positive = np.asarray(signals.s_fid) > 0
        if np.count_nonzero(positive) >= 2:
            fit = fitkit_api.fit_deer_fid(times[positive], np.asarray(signals.s_fid)[positive])
            report["fid_fit"] = dict(fit._asdict(), time_constant=fit.time_constant)
    else:
        report["signals"] = signals
    written.append(str(io_api.write_json(api.out_dir / "deer.json", report, prov)))
    return RunResultTuple(data=signals, written=written)


def t2_scaling(api: "ToolkitClient", n_values: List[int]) -> Dict[str, object]:
    """Predicted T2(N) for the configured spectrum and its power-law fit."""
    spectrum = api.spectrum()
    curve = filterfn_api.predict_t2_curve(spectrum, n_values, threshold_chi=float(api.setting("threshold_chi", 1.0)))
    power = fitkit_api.fit_power_law(curve) if len(curve) >= 3 else None
    return {"t2_curve": curve, "power_law": power}
