"""File formats: response/Q CSVs, key=value configs, JSON manifests and reports.

Every writer is deterministic so that ``write(read(x))`` reproduces the
input byte for byte when the input was itself produced by the writer.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import ResponseData, as_binary


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def _split_lines(text: str) -> list[list[str]]:
    rows = [r for r in csv.reader(io.StringIO(text))]
    return [[c.strip() for c in r] for r in rows if r and any(c.strip() for c in r)]


def _is_header(row: Sequence[str], allowed: set[str]) -> bool:
    return any(c not in allowed for c in row)


@dataclass
class Table:
    """Binary table with optional missing cells, as read from CSV."""

    values: NDArray[np.uint8]
    observed: NDArray[np.bool_]
    header: list[str] | None = None


def parse_binary_csv(text: str, na_token: str | None = "NA") -> Table:
    rows = _split_lines(text)
    if not rows:
        raise InputError("file is empty")
    allowed = {"0", "1"} | ({na_token} if na_token else set())
    header = None
    if _is_header(rows[0], allowed):
        header, rows = rows[0], rows[1:]
        if not rows:
            raise InputError("file has a header but no data rows")
    width = len(rows[0])
    if header is not None and len(header) != width:
        raise InputError(f"header has {len(header)} columns but data rows have {width}")
    vals = np.zeros((len(rows), width), dtype=np.uint8)
    obs = np.ones((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"data row {i + 1} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            if cell == "1":
                vals[i, j] = 1
            elif cell == "0":
                pass
            elif na_token and cell == na_token:
                obs[i, j] = False
            else:
                raise InputError(f"data row {i + 1}, column {j + 1}: invalid cell {cell!r}")
    return Table(vals, obs, header)


def format_binary_csv(values: ArrayLike, observed: ArrayLike | None = None,
                      header: Sequence[str] | None = None, na_token: str = "NA") -> str:
    vals = as_binary(values, ndim=2, name="values")
    obs = np.ones(vals.shape, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for v_row, o_row in zip(vals, obs):
        lines.append(",".join(str(int(v)) if o else na_token for v, o in zip(v_row, o_row)))
    return "\n".join(lines) + "\n"


def read_responses(path: str | Path, na_token: str = "NA") -> ResponseData:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    t = parse_binary_csv(text, na_token)
    try:
        return ResponseData(t.values, t.observed, item_names=tuple(t.header) if t.header else None)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def write_responses(data: ResponseData, path: str | Path, na_token: str = "NA") -> None:
    Path(path).write_text(format_binary_csv(data.responses, data.observed, data.item_names, na_token))


def read_q(path: str | Path) -> NDArray[np.uint8]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    t = parse_binary_csv(text, na_token=None)
    return t.values


def write_q(Q: ArrayLike, path: str | Path, header: Sequence[str] | None = None) -> None:
    Path(path).write_text(format_binary_csv(Q, header=header))


# --------------------------------------------------------------------------
# key=value configuration

def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InputError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def format_config(values: dict[str, Any]) -> str:
    return "".join(f"{k}={v}\n" for k, v in values.items())


def read_config(path: str | Path) -> dict[str, str]:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


# --------------------------------------------------------------------------
# JSON helpers

def matrix_to_json(M: ArrayLike) -> dict:
    arr = np.asarray(M)
    return {"shape": list(arr.shape), "data": arr.tolist()}


def matrix_from_json(obj: dict, dtype=np.float64) -> NDArray:
    arr = np.asarray(obj["data"], dtype=dtype)
    shape = tuple(obj["shape"])
    if arr.size == 0:
        return np.zeros(shape, dtype=dtype)
    if arr.shape != shape:
        raise InputError(f"matrix data has shape {arr.shape}, declared {shape}")
    return arr


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


# --------------------------------------------------------------------------
# run report

@dataclass
class RunReport:
    """Everything a fit produces.  Edge lists and pattern indices are 1-based."""

    input: dict
    config: dict
    seed: int
    model: str
    Q_hat: NDArray[np.uint8]
    n_candidates: int
    n_candidates_reduced: int
    A_final: NDArray[np.uint8]
    p_hat: NDArray[np.float64]
    theta_plus: NDArray[np.float64]
    theta_minus: NDArray[np.float64]
    hierarchy_closure: list[list[int]]
    hierarchy_reduction: list[list[int]]
    indistinguishable: list[list[int]]
    best_lambda: float
    per_lambda_table: list[dict]
    converged: bool
    n_iter: int
    timing: dict
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Q_hat"] = matrix_to_json(self.Q_hat)
        d["A_final"] = matrix_to_json(self.A_final)
        d["p_hat"] = [float(x) for x in self.p_hat]
        d["theta_plus"] = [float(x) for x in self.theta_plus]
        d["theta_minus"] = [float(x) for x in self.theta_minus]
        d["best_lambda"] = float(self.best_lambda)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        d = dict(d)
        d["Q_hat"] = matrix_from_json(d["Q_hat"], np.uint8)
        d["A_final"] = matrix_from_json(d["A_final"], np.uint8)
        for key in ("p_hat", "theta_plus", "theta_minus"):
            d[key] = np.asarray(d[key], dtype=np.float64)
        return cls(**d)

    def dumps(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> RunReport:
        return cls.from_dict(json.loads(text))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read(cls, path: str | Path) -> RunReport:
        return cls.from_dict(read_json(path))


# --------------------------------------------------------------------------
# traces and result tables

def format_trace(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def parse_trace(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def format_rows(rows: Sequence[dict], columns: Sequence[str]) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_cell(r[c]) for c in columns))
    return "\n".join(lines) + "\n"


def parse_rows(text: str) -> list[dict]:
    rd = csv.DictReader(io.StringIO(text))
    out = []
    for row in rd:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = int(v)
            except ValueError:
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
        out.append(parsed)
    return out
