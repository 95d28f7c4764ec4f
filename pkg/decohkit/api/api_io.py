# File formats
#
# Trace CSV (t_s,c[,stderr]), spectrum CSV (omega_rad_s,S_rad_s,stderr,count,source), generic column CSVs and
# JSON reports. Every file written here starts with a provenance block (toolkit version, config hash, seed):
# leading "# provenance: {...}" comment lines in CSVs, a "provenance" key in JSON. Floats are written with repr
# and JSON keys sorted so identical inputs give identical bytes.

# Imports
import csv
import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from decohkit.schema import (
    TOOLKIT_VERSION,
    BinnedSpectrum,
    CoherenceTrace,
    DataError,
    SeedType,
    SpectrumPoint,
)

logger = logging.getLogger(__name__)

PathType = Union[str, Path]
TRACE_HEADER = ["t_s", "c"]
SPECTRUM_HEADER = ["omega_rad_s", "S_rad_s", "stderr", "count", "source"]
PROVENANCE_PREFIX = "# provenance: "
TRACE_PREFIX = "# trace: "


# Exceptions
class MissingMetadataError(DataError):
    pass


# Methods
def to_plain(value: Any) -> Any:
    """JSON-ready copy of nested NamedTuples, enums, numpy scalars and arrays."""
    if isinstance(value, Enum):
        return value.value
    if hasattr(value, "_asdict"):
        return {k: to_plain(v) for k, v in value._asdict().items()}
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def canonical_json(value: Any, indent: Optional[int] = 2) -> str:
    separators = None if indent else (",", ":")
    return json.dumps(to_plain(value), sort_keys=True, indent=indent, separators=separators, allow_nan=True)


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(canonical_json(config, indent=None).encode("utf-8")).hexdigest()


def provenance(config: Mapping, seed: Optional[SeedType]) -> Dict[str, Any]:
    return {"version": TOOLKIT_VERSION, "config_sha256": config_hash(config), "seed": seed}


def _number(value: float) -> str:
    return repr(float(value))


def _write_rows(path: PathType, header: Sequence[str], rows: Sequence[Sequence[Any]],
                prov: Mapping, comments: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(PROVENANCE_PREFIX + canonical_json(prov, indent=None) + "\n")
        for line in comments:
            f.write(line + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_number(v) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.info("Wrote %s (%d rows)", path, len(rows))
    return path


def _read_rows(path: PathType) -> Tuple[Dict[str, Any], List[str], List[List[str]]]:
    """(metadata from comment lines, header, rows). Lines starting with '#' are comments."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"No such file: {path}")
    metadata: Dict[str, Any] = {}
    lines = []
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if line.startswith(PROVENANCE_PREFIX):
                metadata["provenance"] = json.loads(line[len(PROVENANCE_PREFIX):])
            elif line.startswith(TRACE_PREFIX):
                metadata["trace"] = json.loads(line[len(TRACE_PREFIX):])
            elif line.startswith("#") or not line.strip():
                continue
            else:
                lines.append(line)
    table = list(csv.reader(lines))
    if not table:
        raise DataError(f"{path} has no header row")
    return metadata, [h.strip() for h in table[0]], table[1:]


def read_columns(path: PathType) -> Dict[str, np.ndarray]:
    """Numeric CSV as {column name: array}."""
    _, header, rows = _read_rows(path)
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})")
    return {name: data[:, i] for i, name in enumerate(header)}


def write_table(path: PathType, header: Sequence[str], rows: Sequence[Sequence[Any]], prov: Mapping) -> Path:
    return _write_rows(path, header, rows, prov)


def write_trace(path: PathType, trace: CoherenceTrace, prov: Mapping) -> Path:
    meta = {"n_pulses": trace.n_pulses, "t_pi": trace.t_pi, "source": trace.source, "label": trace.label}
    header = list(TRACE_HEADER)
    columns = [trace.times, trace.values]
    if trace.stderr is not None:
        header.append("stderr")
        columns.append(trace.stderr)
    rows = [[float(v) for v in row] for row in zip(*columns)]
    return _write_rows(path, header, rows, prov, comments=[TRACE_PREFIX + canonical_json(meta, indent=None)])


def read_trace(path: PathType, metadata: Optional[Mapping] = None) -> CoherenceTrace:
    """
    Trace CSV with header t_s,c (optionally stderr). N, t_pi and source come from `metadata` or, failing that,
    from the file's own "# trace:" line.
    """
    embedded, header, rows = _read_rows(path)
    meta = dict(embedded.get("trace", {}))
    meta.update(metadata or {})
    if "n_pulses" not in meta:
        raise MissingMetadataError(f"Missing n_pulses for trace {path}")
    if header[:2] != TRACE_HEADER:
        raise DataError(f"{path}: expected header starting with t_s,c, got {','.join(header)}")
    values = read_columns(path)
    stderr = values.get("stderr")
    return CoherenceTrace(
        n_pulses=int(meta["n_pulses"]),
        t_pi=float(meta.get("t_pi", 0.0)),
        times=values["t_s"],
        values=values["c"],
        source=str(meta.get("source", "cpmg")),
        stderr=stderr,
        label=str(meta.get("label", Path(path).stem)),
    )


def write_spectrum(path: PathType, spectrum: Union[BinnedSpectrum, Sequence[SpectrumPoint]], prov: Mapping) -> Path:
    if isinstance(spectrum, BinnedSpectrum):
        rows = [[b.omega, b.mean, b.stderr, b.count, "CPMG"] for b in spectrum.bins]
    else:
        rows = [
            [p.omega0, p.s_value, (p.weight ** -0.5 if p.weight else 0.0), 1, p.source.value]
            for p in spectrum
        ]
    return _write_rows(path, SPECTRUM_HEADER, rows, prov)


def write_json(path: PathType, report: Mapping, prov: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(to_plain(report))
    body["provenance"] = dict(prov)
    path.write_text(canonical_json(body) + "\n", encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def read_json(path: PathType) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"No such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}")
