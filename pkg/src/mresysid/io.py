"""File formats: time series CSV with a JSON sidecar, model / record / report JSON.

Floats are written with ``repr``, the shortest text that parses back to the
same double, so files round-trip exactly and repeated runs are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import FastDynamics, HammersteinModel, PolynomialNonlinearity, SlowDynamics, TimeSeries
from .signals import StaticCharacteristic, StepRecord


class FormatError(ValueError):
    """A file exists but does not hold what its format promises."""


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, columns):
    cols = [np.asarray(c, dtype=float) for c in columns]
    lines = [",".join(header)]
    lines += [",".join(map(_fmt, row)) for row in zip(*cols)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_csv(path, header):
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
    if first.split(",") != list(header):
        raise FormatError(f"{path}: expected header {','.join(header)!r}, got {first!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise FormatError(f"{path}: expected {len(header)} columns")
    return [data[:, i] for i in range(len(header))]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


# --- time series ------------------------------------------------------------


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_series(path, series: TimeSeries):
    """``t,value`` CSV plus ``<stem>.meta.json`` with unit and sample period."""
    _write_csv(path, ("t", "value"), (series.t, series.values))
    write_json(meta_path(path), {"unit": series.unit, "sample_period": series.sample_period})


def read_series(path) -> TimeSeries:
    """Read a series written by :func:`write_series`.

    Without a sidecar the sample period is taken from the time column.
    """
    t, values = _read_csv(path, ("t", "value"))
    if t.size < 2:
        raise FormatError(f"{path}: a time series needs at least 2 samples")
    meta = meta_path(path)
    if meta.exists():
        info = read_json(meta)
        dt, unit = float(info["sample_period"]), str(info.get("unit", ""))
    else:
        dt, unit = float(t[1] - t[0]), ""
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-12):
        raise FormatError(f"{path}: time column is not uniform with period {dt!r}")
    return TimeSeries(dt, values, unit=unit)


# --- model ------------------------------------------------------------------


def model_to_dict(model: HammersteinModel) -> dict:
    return {
        "poly": [float(c) for c in model.nonlinearity.coefficients],
        "fast": {"k": model.fast.k, "alpha": model.fast.alpha, "omega": model.fast.omega},
        "slow": {"s0": model.slow.s0, "z0": model.slow.z0},
    }


def model_from_dict(d) -> HammersteinModel:
    try:
        f = PolynomialNonlinearity(tuple(float(c) for c in d["poly"]))
        fast = FastDynamics(float(d["fast"]["k"]), float(d["fast"]["alpha"]),
                            float(d["fast"]["omega"]))
        slow = SlowDynamics(float(d["slow"]["s0"]), float(d["slow"]["z0"]))
        return HammersteinModel(f, fast, slow)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"invalid model description: missing or malformed {exc}") from None
    except ValueError as exc:
        raise FormatError(f"invalid model: {exc}") from None


def write_model(path, model: HammersteinModel):
    write_json(path, model_to_dict(model))


def read_model(path) -> HammersteinModel:
    return model_from_dict(read_json(path))


# --- step records and static points -----------------------------------------


def write_records(path, records):
    write_json(path, [
        {"u_pre": r.u_pre, "u_post": r.u_post, "sample_period": r.sample_period,
         "delta_y": [float(v) for v in r.delta_y]}
        for r in records
    ])


def read_records(path) -> list[StepRecord]:
    data = read_json(path)
    if not isinstance(data, list):
        raise FormatError(f"{path}: expected a JSON array of step records")
    try:
        return [StepRecord(float(r["u_pre"]), float(r["u_post"]), float(r["sample_period"]),
                           np.asarray(r["delta_y"], dtype=float)) for r in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid step record ({exc})") from None


def write_statics(path, statics: StaticCharacteristic):
    _write_csv(path, ("U", "Y"), (statics.U, statics.Y))


def read_statics(path) -> StaticCharacteristic:
    U, Y = _read_csv(path, ("U", "Y"))
    try:
        return StaticCharacteristic.from_points(U, Y)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_table(path, header, columns):
    """Plot-ready CSV with the given column names."""
    _write_csv(path, header, columns)
