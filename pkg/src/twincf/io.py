"""CSV and JSON file formats."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .model import Dataset, HiddenTruth, SimulatorSpec, SpecError, StrataPartition, TwinDraws, WorldSpec

PathLike = Union[str, Path]


class FormatError(ValueError):
    """Malformed input file; the message names the path and line."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _float(value: str, path, line: int, column: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise FormatError(f"{path}:{line}: column {column!r}: not a number: {value!r}") from None


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


def write_dataset(data: Dataset, path: PathLike) -> None:
    """Write ``unit_id,x1..xp,d,y_obs`` plus ``stratum``/``rct`` when present."""
    header = ["unit_id"] + [f"x{j + 1}" for j in range(data.p)] + ["d", "y_obs"]
    labels = data.strata is not None
    if labels:
        header.append("stratum")
    if data.rct is not None:
        header.append("rct")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [data.unit_ids[i]] + [_fmt(v) for v in data.X[i]] + [int(data.d[i]), _fmt(data.y[i])]
            if labels:
                names = data.strata.names
                row.append(names[data.stratum[i]] if names else str(data.stratum[i]))
            if data.rct is not None:
                row.append(int(data.rct[i]))
            w.writerow(row)


def read_dataset(path: PathLike, outcome_bounds=None, strata: Optional[StrataPartition] = None) -> Dataset:
    """Read a dataset CSV.

    A ``stratum`` column defines strata by label unless ``strata`` is given.
    An optional ``rct`` column (0/1) marks the randomized subset.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "unit_id" or "d" not in header or "y_obs" not in header:
            raise FormatError(f"{path}:1: header must start with unit_id and contain d and y_obs")
        xcols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if xcols != expected:
            raise FormatError(f"{path}:1: covariate columns must be x1..xp in order, got {xcols}")
        pos = {h: i for i, h in enumerate(header)}
        ids, X, d, y, lab, rct = [], [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            ids.append(row[0])
            X.append([_float(row[pos[c]], path, line, c) for c in xcols])
            dv = row[pos["d"]].strip()
            if dv not in ("0", "1"):
                raise FormatError(f"{path}:{line}: column 'd' must be 0 or 1, got {dv!r}")
            d.append(int(dv))
            y.append(_float(row[pos["y_obs"]], path, line, "y_obs"))
            if "stratum" in pos:
                lab.append(row[pos["stratum"]])
            if "rct" in pos:
                rv = row[pos["rct"]].strip()
                if rv not in ("0", "1"):
                    raise FormatError(f"{path}:{line}: column 'rct' must be 0 or 1, got {rv!r}")
                rct.append(rv == "1")
    if not ids:
        raise FormatError(f"{path}: no data rows")
    if strata is None and lab:
        strata = StrataPartition.from_labels(lab)
    try:
        return Dataset(np.array(ids), np.array(X, dtype=float).reshape(len(ids), len(xcols)), d, y,
                       outcome_bounds=outcome_bounds, strata=strata, rct=np.array(rct) if rct else None)
    except (ValueError, SpecError) as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Twin draws and hidden truth
# ---------------------------------------------------------------------------


def write_draws(draws: TwinDraws, path: PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "replicate", "y1_hat", "y0_hat", "coupling"])
        for i, u in enumerate(draws.unit_ids):
            for r in range(draws.R):
                w.writerow([u, r, _fmt(draws.y1[i, r]), _fmt(draws.y0[i, r]), draws.coupling])


def read_draws(path: PathLike) -> TwinDraws:
    """Read ``unit_id,replicate,y1_hat,y0_hat,coupling``; every unit needs the same replicate set."""
    units: dict = {}
    couplings = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if header != ["unit_id", "replicate", "y1_hat", "y0_hat", "coupling"]:
            raise FormatError(f"{path}:1: header must be unit_id,replicate,y1_hat,y0_hat,coupling")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise FormatError(f"{path}:{line}: expected 5 fields, found {len(row)}")
            try:
                rep = int(row[1])
            except ValueError:
                raise FormatError(f"{path}:{line}: replicate must be an integer, got {row[1]!r}") from None
            reps = units.setdefault(row[0], {})
            if rep in reps:
                raise FormatError(f"{path}:{line}: duplicate replicate {rep} for unit {row[0]!r}")
            reps[rep] = (_float(row[2], path, line, "y1_hat"), _float(row[3], path, line, "y0_hat"))
            couplings.add(row[4].strip())
    if not units:
        raise FormatError(f"{path}: no data rows")
    if len(couplings) != 1:
        raise FormatError(f"{path}: mixed coupling flags {sorted(couplings)}")
    rep_sets = {tuple(sorted(r)) for r in units.values()}
    if len(rep_sets) != 1:
        raise FormatError(f"{path}: units have differing replicate sets")
    reps = rep_sets.pop()
    y1 = np.array([[units[u][r][0] for r in reps] for u in units])
    y0 = np.array([[units[u][r][1] for r in reps] for u in units])
    try:
        return TwinDraws(np.array(list(units)), y1, y0, couplings.pop())
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_truth(truth: HiddenTruth, path: PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "y1", "y0"])
        for u, a, b in zip(truth.unit_ids, truth.y1, truth.y0):
            w.writerow([u, _fmt(a), _fmt(b)])


def read_truth(path: PathLike) -> HiddenTruth:
    ids, y1, y0 = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FormatError(f"{path}:{line}: expected 3 fields, found {len(row)}")
            ids.append(row[0])
            y1.append(_float(row[1], path, line, "y1"))
            y0.append(_float(row[2], path, line, "y0"))
    return HiddenTruth(np.array(ids), np.array(y1), np.array(y0))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


def load_json(path: PathLike) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def load_world(path: PathLike) -> WorldSpec:
    try:
        return WorldSpec.from_dict(load_json(path))
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from None


def load_simulator(path: PathLike) -> SimulatorSpec:
    try:
        return SimulatorSpec.from_dict(load_json(path))
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from None


def spec_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def write_json(doc: dict, path: PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")
