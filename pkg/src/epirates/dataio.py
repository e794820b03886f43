"""Case tables, missingness injection, dequantization and result serialization."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import tomli

from .core import CaseRecord, DataError
from .simulate import make_rng

CASE_COLUMNS = (
    "case_id",
    "exposure_time",
    "infection_time",
    "removal_time",
    "infection_group",
    "removal_group",
    "x",
    "y",
)
MISSING_TOKENS = ("", "NA")
SCHEMA_VERSION = "1"
SIG_DIGITS = 12
DEQUANTIZE_TRIES = 100


@dataclass(frozen=True)
class CaseRow:
    """One parsed table row before case invariants are enforced."""

    id: int
    exposure_time: float | None
    infection_time: float | None
    removal_time: float | None
    infection_group: str | None
    removal_group: str | None
    location: tuple[float, ...] | None


def _parse_float(text: str, column: str, line: int):
    text = text.strip()
    if text in MISSING_TOKENS:
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: {column} value {text!r} is not a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}: {column} must be finite")
    return value


def _parse_label(text: str):
    text = text.strip()
    return None if text in MISSING_TOKENS else text


def read_case_rows(source) -> list[CaseRow]:
    """Parse a case table from a path or a text stream."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_case_rows(fh)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise DataError("case table is empty")
    missing = [c for c in ("case_id", "infection_time", "removal_time") if c not in reader.fieldnames]
    if missing:
        raise DataError(f"case table lacks columns {missing}")
    rows = []
    for line, rec in enumerate(reader, start=2):
        try:
            cid = int(rec["case_id"])
        except (TypeError, ValueError):
            raise DataError(f"line {line}: case_id {rec['case_id']!r} is not an integer") from None
        x = _parse_float(rec.get("x") or "", "x", line)
        y = _parse_float(rec.get("y") or "", "y", line)
        if (x is None) != (y is None):
            raise DataError(f"line {line}: location needs both x and y")
        rows.append(
            CaseRow(
                id=cid,
                exposure_time=_parse_float(rec.get("exposure_time") or "", "exposure_time", line),
                infection_time=_parse_float(rec["infection_time"] or "", "infection_time", line),
                removal_time=_parse_float(rec["removal_time"] or "", "removal_time", line),
                infection_group=_parse_label(rec.get("infection_group") or ""),
                removal_group=_parse_label(rec.get("removal_group") or ""),
                location=None if x is None else (x, y),
            )
        )
    ids = [r.id for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate case_id values")
    return rows


def apply_offsets(rows: Sequence[CaseRow], infection_offset: float = 0.0, removal_offset: float = 0.0) -> list[CaseRow]:
    """Shift recorded symptom-based times to infection and removal times."""

    def shift(v, d):
        return None if v is None else v + d

    return [
        CaseRow(
            r.id,
            shift(r.exposure_time, infection_offset),
            shift(r.infection_time, infection_offset),
            shift(r.removal_time, removal_offset),
            r.infection_group,
            r.removal_group,
            r.location,
        )
        for r in rows
    ]


def dequantize(
    infection: Sequence[float | None],
    removal: Sequence[float | None],
    sigma: float = 0.1,
    seed=None,
    ids: Sequence[int] | None = None,
) -> tuple[list, list]:
    """Add Normal(0, sigma) noise to every present time.

    A case whose noisy removal does not follow its noisy infection is
    redrawn, at most 100 times.

    Raises
    ------
    DataError
        When a case has ``removal <= infection`` before noise, or stays
        invalid after all redraws.
    """
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    rng = make_rng(seed)
    ids = list(range(1, len(infection) + 1)) if ids is None else list(ids)
    out_i, out_r = [], []
    for cid, i, r in zip(ids, infection, removal):
        if i is not None and r is not None and not r > i:
            raise DataError(f"case {cid}: removal time {r} does not follow infection time {i}")
        for _ in range(DEQUANTIZE_TRIES):
            ni = None if i is None else i + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
            nr = None if r is None else r + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
            if ni is None or nr is None or nr > ni:
                break
        else:
            raise DataError(f"case {cid}: no valid noisy times after {DEQUANTIZE_TRIES} draws")
        out_i.append(ni)
        out_r.append(nr)
    return out_i, out_r


def rows_to_cases(rows: Sequence[CaseRow], noise_sd: float | None = None, seed=None) -> list[CaseRecord]:
    """Build case records, optionally dequantizing times first."""
    inf = [r.infection_time for r in rows]
    rem = [r.removal_time for r in rows]
    exp_shift = [0.0] * len(rows)
    if noise_sd is not None:
        new_inf, rem = dequantize(inf, rem, noise_sd, seed, [r.id for r in rows])
        exp_shift = [0.0 if a is None else b - a for a, b in zip(inf, new_inf)]
        inf = new_inf
    cases = []
    for r, i, rr, s in zip(rows, inf, rem, exp_shift):
        e = None if r.exposure_time is None else r.exposure_time + s
        cases.append(CaseRecord(r.id, e, i, rr, r.infection_group, r.removal_group, r.location))
    return cases


def load_cases(
    source,
    infection_offset: float = 0.0,
    removal_offset: float = 0.0,
    noise_sd: float | None = None,
    seed=None,
) -> list[CaseRecord]:
    """Read a case table, apply day offsets and optional dequantization."""
    rows = apply_offsets(read_case_rows(source), infection_offset, removal_offset)
    return rows_to_cases(rows, noise_sd, seed)


def _fmt_time(v) -> str:
    # adding 0.0 turns -0.0 into 0.0
    return "NA" if v is None else repr(float(v) + 0.0)


def write_case_table(cases: Iterable[CaseRecord], dest=None) -> str:
    """Write cases as CSV; floats use the shortest exact representation.

    Returns the text and also writes it to ``dest`` (path or stream) if given.
    """
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CASE_COLUMNS)
    for c in cases:
        loc = c.location
        if loc is not None and len(loc) != 2:
            raise DataError("case tables store two location coordinates")
        w.writerow(
            [
                c.id,
                _fmt_time(c.exposure_time),
                _fmt_time(c.infection_time),
                _fmt_time(c.removal_time),
                "NA" if c.infection_group is None else c.infection_group,
                "NA" if c.removal_group is None else c.removal_group,
                "NA" if loc is None else repr(loc[0]),
                "NA" if loc is None else repr(loc[1]),
            ]
        )
    text = buf.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    elif dest is not None:
        dest.write(text)
    return text


def read_locations(source) -> np.ndarray:
    """Read never-infected locations from a CSV with ``x`` and ``y`` columns."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_locations(fh)
    reader = csv.DictReader(source)
    if reader.fieldnames is None or "x" not in reader.fieldnames or "y" not in reader.fieldnames:
        raise DataError("location table needs x and y columns")
    out = []
    for line, rec in enumerate(reader, start=2):
        x = _parse_float(rec["x"], "x", line)
        y = _parse_float(rec["y"], "y", line)
        if x is None or y is None:
            raise DataError(f"line {line}: missing location")
        out.append((x, y))
    return np.array(out, float).reshape(-1, 2)


@dataclass(frozen=True)
class MaskReport:
    """Which cases lost which endpoint."""

    partial: int
    infection_missing: tuple[int, ...]
    removal_missing: tuple[int, ...]


def inject_missingness(
    cases: Sequence[CaseRecord], p_missing: float, p_inf_missing: float, seed=None
) -> tuple[list[CaseRecord], MaskReport]:
    """Mask one endpoint of a Binomial(n, p_missing) random subset of cases.

    Of the masked cases, Binomial(·, p_inf_missing) lose the infection time
    and the rest lose the removal time.
    """
    for name, p in (("p_missing", p_missing), ("p_inf_missing", p_inf_missing)):
        if not 0 <= p <= 1:
            raise ValueError(f"{name} must lie in [0, 1]")
    for c in cases:
        if not c.is_complete:
            raise DataError(f"case {c.id} is already partially observed")
    rng = make_rng(seed)
    n = len(cases)
    x1 = int(rng.binomial(n, p_missing)) if n else 0
    x2 = int(rng.binomial(x1, p_inf_missing)) if x1 else 0
    chosen = rng.permutation(n)[:x1]
    lose_inf = set(int(p) for p in chosen[:x2])
    lose_rem = set(int(p) for p in chosen[x2:])
    out = []
    for pos, c in enumerate(cases):
        i, r = c.infection_time, c.removal_time
        if pos in lose_inf:
            i = None
        elif pos in lose_rem:
            r = None
        out.append(CaseRecord(c.id, c.exposure_time, i, r, c.infection_group, c.removal_group, c.location))
    report = MaskReport(
        partial=x1,
        infection_missing=tuple(sorted(cases[p].id for p in lose_inf)),
        removal_missing=tuple(sorted(cases[p].id for p in lose_rem)),
    )
    return out, report


# ---------------------------------------------------------------- results


def round_sig(x: float, digits: int = SIG_DIGITS) -> float:
    if x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.{digits}g}")


def to_jsonable(obj: Any) -> Any:
    """Convert results to JSON-ready values with floats at 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else round_sig(x)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n"


def format_csv_value(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return "NA" if not math.isfinite(x) else f"{x:.{SIG_DIGITS}g}"
    return str(v)


def write_records_csv(records: Sequence[dict], columns: Sequence[str], dest=None) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([format_csv_value(rec.get(c)) for c in columns])
    text = buf.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    elif dest is not None:
        dest.write(text)
    return text


def load_config(path) -> dict:
    """Read a flat TOML configuration file."""
    with open(path, "rb") as fh:
        return tomli.load(fh)
