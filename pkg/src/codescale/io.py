"""Run-record ingestion, law persistence and plot-data emission.

Run files are CSV with a mandatory header. Required columns are
``n_params``, ``d_tokens`` and ``loss``; ``mixture`` is optional and any
other column is carried along as a string in ``RunRecord.meta``. Counts are
raw unless a ``# units: billions`` line precedes the header, in which case
``n_params`` and ``d_tokens`` are multiplied by 1e9 exactly.

Law files are canonical JSON (sorted keys, two-space indent) so that
emit -> parse -> emit is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

from .errors import DataError, ScalingError
from .laws import LAW_TYPES, LawHandle, RunRecord

REQUIRED_COLUMNS = ("n_params", "d_tokens", "loss")
UNITS_SCALE = {"raw": 1, "billions": 10**9}
FORMAT_VERSION = 1
PROVENANCE_KEYS = ("source", "fit_config_digest", "record_count", "mre_permille", "input_units")
PAPER_SOURCE = "paper-printed (rounded)"

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Run files


def _directives(lines: list[str]) -> tuple[dict[str, str], list[str]]:
    found = {}
    body = []
    for line in lines:
        stripped = line.strip()
        if not body and stripped.startswith("#"):
            key, sep, value = stripped.lstrip("#").partition(":")
            if sep:
                found[key.strip().lower()] = value.strip().lower()
            continue
        if not body and not stripped:
            continue
        body.append(line)
    return found, body


def _parse_count(text: str, scale: int, row: int, column: str, source: str) -> int:
    try:
        value = Decimal(text.strip()) * scale
    except InvalidOperation:
        raise DataError(f"not a number: {text!r}", row, column, source) from None
    if not value.is_finite() or value <= 0:
        raise DataError(f"must be positive, got {text!r}", row, column, source)
    if value != value.to_integral_value():
        raise DataError(f"not a whole count: {text!r}", row, column, source)
    return int(value)


def parse_runs(text: str, source: str = "<string>") -> list[RunRecord]:
    directives, body = _directives(text.splitlines())
    units = directives.get("units", "raw")
    if units not in UNITS_SCALE:
        raise DataError(f"{source}: unknown units {units!r}; expected one of {sorted(UNITS_SCALE)}")
    scale = UNITS_SCALE[units]
    if not body:
        raise DataError(f"{source}: missing header row")
    reader = csv.DictReader(body)
    header = [h.strip() for h in (reader.fieldnames or [])]
    reader.fieldnames = header
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise DataError("missing required column", column=col, source=source)
    records = []
    # header is line 1 of the data section; rows are numbered from 2
    for row_no, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise DataError("wrong number of fields", row_no, source=source)
        n = _parse_count(row["n_params"], scale, row_no, "n_params", source)
        d = _parse_count(row["d_tokens"], scale, row_no, "d_tokens", source)
        try:
            loss = float(row["loss"])
        except ValueError:
            raise DataError(f"not a number: {row['loss']!r}", row_no, "loss", source) from None
        if not (loss > 0 and math.isfinite(loss)):
            raise DataError(f"must be positive, got {row['loss']!r}", row_no, "loss", source)
        mixture = row.get("mixture", "").strip() or None
        meta = {k: v.strip() for k, v in row.items() if k not in REQUIRED_COLUMNS and k != "mixture"}
        if units != "raw":
            meta["source_units"] = units
        records.append(RunRecord(n, d, loss, mixture, meta))
    if not records:
        raise DataError(f"{source}: no data rows")
    return records


def ingest(path: PathLike) -> list[RunRecord]:
    """Read a run file; records come back in file order, counts in raw units."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return parse_runs(text, str(path))


def format_runs(records: Sequence[RunRecord]) -> str:
    """Render records as a raw-unit run file that parses back to equal records."""
    extra = sorted({k for r in records for k in r.meta if k != "source_units"})
    has_mixture = any(r.mixture for r in records)
    header = list(REQUIRED_COLUMNS) + (["mixture"] if has_mixture else []) + extra
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in records:
        row = [r.n_params, r.d_tokens, repr(float(r.loss))]
        if has_mixture:
            row.append(r.mixture or "")
        row += [r.meta.get(k, "") for k in extra]
        writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Law files


@dataclass(frozen=True)
class LawFile:
    law: LawHandle
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.provenance) - set(PROVENANCE_KEYS)
        if unknown:
            raise DataError(f"unknown provenance fields: {sorted(unknown)}")


def dump_law(law_file: LawFile) -> str:
    prov = {"source": law_file.law.provenance}
    prov.update(law_file.provenance)
    doc = {
        "format_version": FORMAT_VERSION,
        "family": law_file.law.family,
        "coefficients": law_file.law.params.as_dict(),
        "provenance": {k: prov.get(k) for k in PROVENANCE_KEYS},
    }
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _reject_unknown(found: Iterable[str], allowed: Iterable[str], where: str):
    unknown = sorted(set(found) - set(allowed))
    if unknown:
        raise DataError(f"unknown {where} fields: {unknown}")


def parse_law(text: str, source: str = "<string>") -> LawFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{source}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{source}: law file must be a JSON object")
    _reject_unknown(doc, ("format_version", "family", "coefficients", "provenance"), "top-level")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported format_version {doc.get('format_version')!r}")
    family = doc.get("family")
    if family not in LAW_TYPES:
        raise DataError(f"{source}: unknown family {family!r}")
    law_type = LAW_TYPES[family]
    coeffs = doc.get("coefficients")
    if not isinstance(coeffs, dict):
        raise DataError(f"{source}: coefficients must be an object")
    expected = list(law_type.__dataclass_fields__)
    _reject_unknown(coeffs, expected, "coefficient")
    missing = [k for k in expected if k not in coeffs]
    if missing:
        raise DataError(f"{source}: missing coefficients {missing}")
    for k in expected:
        if isinstance(coeffs[k], bool) or not isinstance(coeffs[k], (int, float)):
            raise DataError(f"{source}: coefficient {k} must be a number")
    prov = doc.get("provenance") or {}
    if not isinstance(prov, dict):
        raise DataError(f"{source}: provenance must be an object")
    _reject_unknown(prov, PROVENANCE_KEYS, "provenance")
    try:
        params = law_type(**{k: float(coeffs[k]) for k in expected})
    except ScalingError as exc:
        raise DataError(f"{source}: {exc}") from None
    source_text = prov.get("source") or ""
    rest = {k: prov.get(k) for k in PROVENANCE_KEYS if k != "source"}
    return LawFile(LawHandle(family, params, source_text), rest)


def read_law(path: PathLike) -> LawFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return parse_law(text, str(path))


def write_law(law_file: LawFile, path: PathLike) -> None:
    _write_text(Path(path), dump_law(law_file))


def fixture_path(name: str) -> Path:
    """Path of a bundled data file (``chinchilla_code.json``, ``farseer_code.json``, ``validation_runs.csv``)."""
    return Path(str(resources.files("codescale") / "data" / name))


# ---------------------------------------------------------------------------
# Series emission


def _fmt(value) -> str:
    if isinstance(value, bool) or isinstance(value, str):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return f"{float(value):.9g}"


def _json_value(value):
    if isinstance(value, (bool, str, int)) or value is None:
        return value
    return float(f"{float(value):.9g}")


def render_series(series: Sequence[Mapping[str, Any]], fmt: str) -> str:
    if not series:
        raise DataError("cannot emit an empty series")
    keys = list(series[0])
    for i, row in enumerate(series):
        if list(row) != keys:
            raise DataError(f"series row {i} has fields {list(row)}, expected {keys}")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(keys)
        for row in series:
            writer.writerow([_fmt(row[k]) for k in keys])
        return buf.getvalue()
    if fmt == "json":
        doc = [{k: _json_value(row[k]) for k in keys} for row in series]
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"
    raise DataError(f"unknown series format {fmt!r}; expected csv or json")


def emit_series(series: Sequence[Mapping[str, Any]], fmt: str, path: PathLike) -> None:
    """Write plot-ready data: CSV with 9 significant digits, or a JSON array of objects."""
    _write_text(Path(path), render_series(series, fmt))


def _write_text(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
