import json

import numpy as np
import pytest

import decohkit.api.api_fitkit as fitkit_api
import decohkit.api.api_io as io_api
import decohkit.api.api_pipeline as pipeline_api

from conftest import base_config
from decohkit.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from decohkit.schema import RelaxationKind

PROV = {"version": "test", "config_sha256": "", "seed": 0}


def _write_config(tmp_path, **sections):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base_config(**sections)), encoding="utf-8")
    return str(path)


def _output(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    return json.loads(lines[-1])


def _trace_files(out_dir):
    return sorted((out_dir / "traces").glob("*.csv"))


def test_simulate_is_deterministic(tmp_path):
    config = _write_config(tmp_path, spectrum="core-shell", simulate={
        "method": "ou", "n_pulses": [64], "n_shots": 200, "time_grid": {"n_points": 4, "span": [0.5, 2.0]},
    })
    runs = []
    for name, extra in (("a", []), ("b", []), ("threaded", ["--workers", "2"])):
        out = tmp_path / name
        assert main(["--config", config, "--out", str(out), *extra, "simulate"]) == EXIT_OK
        runs.append([path.read_bytes() for path in _trace_files(out)])
    assert runs[0] == runs[1] == runs[2]
    assert len(runs[0]) == 1


def test_seed_changes_monte_carlo(tmp_path):
    config = _write_config(tmp_path, spectrum="core-shell", simulate={
        "method": "ou", "n_pulses": [64], "n_shots": 200, "time_grid": {"n_points": 4, "span": [0.5, 2.0]},
    })
    main(["--config", config, "--out", str(tmp_path / "a"), "simulate"])
    main(["--config", config, "--out", str(tmp_path / "b"), "--seed", "8", "simulate"])
    first = io_api.read_trace(_trace_files(tmp_path / "a")[0])
    second = io_api.read_trace(_trace_files(tmp_path / "b")[0])
    assert not np.array_equal(first.values, second.values)


def test_zero_amplitude_field_keeps_full_coherence(tmp_path, capsys):
    config = _write_config(tmp_path, simulate={
        "method": "ou", "ou": {"delta": 0.0, "tau_c": 1e-6}, "times": [1e-6, 2e-6, 4e-6], "n_pulses": [1, 8],
        "n_shots": 100,
    })
    assert main(["--config", config, "--out", str(tmp_path / "out"), "simulate"]) == EXIT_OK
    assert _output(capsys)["n_traces"] == 2
    for path in _trace_files(tmp_path / "out"):
        trace = io_api.read_trace(path)
        np.testing.assert_array_equal(trace.values, 1.0)


def test_simulate_then_analyze_synthetic_preset(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--config", "synthetic-core-shell", "--out", str(out), "simulate"]) == EXIT_OK
    manifest = io_api.read_json(out / "manifest.json")
    assert [entry["n_pulses"] for entry in manifest["traces"]] == [128, 256, 512, 1024]
    capsys.readouterr()

    assert main(["--config", "synthetic-core-shell", "--out", str(out), "analyze"]) == EXIT_OK
    result = _output(capsys)
    assert result["r_squared"] >= 0.9
    assert 1.0 <= result["exponent_a"] <= 2.0
    for name in ("spectrum.csv", "noise_fit.json", "t2_power_law.json", "overview.csv", "classification.json"):
        assert (out / name).is_file()
    fit_files = sorted(path.name for path in (out / "t2_fits").iterdir())
    assert fit_files == [f"trace_N{n}.json" for n in (1024, 128, 256, 512)]
    fit = io_api.read_json(out / "t2_fits" / "trace_N256.json")
    assert fit["n_pulses"] == 256
    assert fit["label"] == "trace_N256"
    assert fit["provenance"]["seed"] == 20240601
    assert io_api.read_json(out / "noise_fit.json")["provenance"]["seed"] == 20240601


def test_fit_file_names_are_unique():
    fits = [{"label": "echo", "n_pulses": 1}, {"label": "echo", "n_pulses": 1}, {"label": "", "n_pulses": 32},
            {"label": "runs/cpmg", "n_pulses": 64}]
    assert pipeline_api._fit_file_names(fits) == ["echo", "echo_2", "trace_N32", "cpmg"]


def test_analyze_without_retained_traces(tmp_path):
    times = np.linspace(2e-6, 2e-5, 8)
    trace_path = tmp_path / "short.csv"
    io_api.write_table(trace_path, ["t_s", "c"], [[t, float(np.exp(-(t / 1e-5) ** 1.5))] for t in times], PROV)
    config = _write_config(tmp_path, traces=[{"path": "short.csv", "n_pulses": 16}])
    assert main(["--config", config, "--out", str(tmp_path / "out"), "analyze"]) == EXIT_DATA


def test_analyze_with_empty_trace_list(tmp_path):
    config = _write_config(tmp_path, traces=[])
    assert main(["--config", config, "--out", str(tmp_path / "out"), "analyze"]) != EXIT_OK


@pytest.mark.parametrize("preset, depleted", [("flat", False), ("bare", False), ("core-shell", True)])
def test_bandbend_presets(tmp_path, capsys, preset, depleted):
    assert main(["--config", preset, "--out", str(tmp_path), "bandbend"]) == EXIT_OK
    report = _output(capsys)["report"]
    assert (report["depletion_width_nm"] > 0) == depleted
    assert (report["p1_reduction"] > 0) == depleted
    assert (tmp_path / "band_profile.csv").is_file()


def test_bandbend_divergence_exit_code(tmp_path):
    config = _write_config(tmp_path, band={"radius": 35.0, "surface_bending": 0.5, "max_iterations": 1})
    assert main(["--config", config, "--out", str(tmp_path / "out"), "bandbend"]) == EXIT_NUMERICAL


def test_fit_t1_from_csv(tmp_path, capsys):
    times = np.linspace(0.0, 5e-3, 30)
    for kind in (RelaxationKind.SQ, RelaxationKind.DQ):
        trace = fitkit_api.simulate_relaxation(100.0, 40.0, times, kind)
        io_api.write_table(tmp_path / f"{kind.value.lower()}.csv", ["t_s", "signal"],
                           [[float(t), float(s)] for t, s in zip(trace.times, trace.signal)], PROV)
    config = _write_config(tmp_path, t1={"sq": "sq.csv", "dq": "dq.csv"})
    assert main(["--config", config, "--out", str(tmp_path / "out"), "fit-t1"]) == EXIT_OK
    result = _output(capsys)
    assert result["omega_sq_rate"] == pytest.approx(100.0, rel=1e-6)
    assert result["gamma_dq_rate"] == pytest.approx(40.0, rel=1e-6)


def test_classify_from_csv(tmp_path, capsys):
    times = np.geomspace(2e-4, 1e-2, 8)
    io_api.write_table(tmp_path / "echo.csv", ["t_s", "chi"], [[float(t), float(t / 1e-5)] for t in times], PROV)
    config = _write_config(tmp_path, classify={})
    assert main(["--config", config, "--out", str(tmp_path / "out"), "classify", "--input",
                 str(tmp_path / "echo.csv"), "--tau-c", "1e-5"]) == EXIT_OK
    assert _output(capsys)["verdict"] == "fixed-Markovian"


def test_unmix_from_csv(tmp_path, capsys):
    grid = np.linspace(550.0, 800.0, 101)
    nv0 = np.exp(-0.5 * ((grid - 620.0) / 10.0) ** 2)
    nvm = np.exp(-0.5 * ((grid - 690.0) / 10.0) ** 2)
    measured = 0.25 * nv0 / nv0.sum() + 0.75 * nvm / nvm.sum()
    io_api.write_table(tmp_path / "pl.csv", ["measured", "nv0", "nvm"],
                       [[float(m), float(a), float(b)] for m, a, b in zip(measured, nv0, nvm)], PROV)
    config = _write_config(tmp_path, unmix={"path": "pl.csv"})
    assert main(["--config", config, "--out", str(tmp_path / "out"), "unmix"]) == EXIT_OK
    assert _output(capsys)["nvm_fraction"] == pytest.approx(0.75, rel=1e-6)


def test_unmix_missing_column(tmp_path):
    io_api.write_table(tmp_path / "pl.csv", ["measured", "nv0"], [[1.0, 2.0], [2.0, 1.0]], PROV)
    config = _write_config(tmp_path, unmix={"path": "pl.csv"})
    assert main(["--config", config, "--out", str(tmp_path / "out"), "unmix"]) == EXIT_DATA


def test_deer_writes_signals_and_fit(tmp_path):
    times = np.linspace(0.0, 1e-5, 20)
    s_fid = 0.8 * np.exp(-times / 2e-6)
    rows = [[float(t), 50.0 * (1 + 0.5 * s), 50.0 * (1 - 0.5 * s), 75.0, 25.0] for t, s in zip(times, s_fid)]
    io_api.write_table(tmp_path / "deer.csv", ["t_s", "f1", "f2", "f3", "f4"], rows, PROV)
    config = _write_config(tmp_path, deer={"path": "deer.csv"})
    assert main(["--config", config, "--out", str(tmp_path / "out"), "deer"]) == EXIT_OK
    report = io_api.read_json(tmp_path / "out" / "deer.json")
    assert report["fid_fit"]["time_constant"] == pytest.approx(2e-6, rel=1e-6)


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["--config", "core-shell"]) == EXIT_USAGE
    assert main(["--config", "core-shell", "transmogrify"]) == EXIT_USAGE


def test_config_errors(tmp_path):
    assert main(["--config", str(tmp_path / "absent.json"), "bandbend"]) == EXIT_USAGE
    missing_band = _write_config(tmp_path)
    assert main(["--config", missing_band, "--out", str(tmp_path / "out"), "bandbend"]) == EXIT_USAGE
    wrong_version = tmp_path / "v2.json"
    wrong_version.write_text(json.dumps({"schema_version": 2}), encoding="utf-8")
    assert main(["--config", str(wrong_version), "bandbend"]) == EXIT_USAGE


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert "decohkit" in capsys.readouterr().out
