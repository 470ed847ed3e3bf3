"""Flat-file formats: forests, covariance matrices, bands and generic tables.

Floats are written with ``repr`` so every file round-trips exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .band import ConfidenceBand
from .covariance import CovarianceEstimate
from .data import Dataset, TimeGrid
from .errors import ParseError
from .forest import _PACKED_FIELDS, ForestParams, MatchedPairForest
from .tree import TreeParams

FOREST_FORMAT = "rsfband-forest"
FOREST_VERSION = 1
MATRIX_FORMAT = "rsfband-matrix"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_dataset(path, data: Dataset):
    rows = ([*data.X[i], data.time[i], int(data.event[i])] for i in range(data.n))
    write_table(path, [*data.names, "time", "status"], rows)


# -- forests ------------------------------------------------------------------

def save_forest(path, forest: MatchedPairForest):
    """JSON document holding the packed tree arrays and subsample index sets."""
    doc = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "p": forest.p,
        "params": {"k": forest.params.k, "B": forest.params.B, "seed": forest.params.seed,
                   "mtry": forest.params.tree.mtry,
                   "min_node_size": forest.params.tree.min_node_size},
        "pairs": forest.pairs.tolist(),
        "arrays": {f: getattr(forest, f).tolist() for f in _PACKED_FIELDS},
    }
    Path(path).write_text(json.dumps(doc))


def load_forest(path) -> MatchedPairForest:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FOREST_FORMAT or doc.get("version") != FOREST_VERSION:
        raise ParseError(f"{path} is not a version-{FOREST_VERSION} forest file")
    dtypes = {"threshold": np.float64, "leaf_times": np.float64, "leaf_chf": np.float64,
              "node_off": np.int64, "leaf_off": np.int64}
    arrays = {f: np.asarray(doc["arrays"][f], dtype=dtypes.get(f, np.int32))
              for f in _PACKED_FIELDS}
    pr = doc["params"]
    params = ForestParams(pr["k"], pr["B"], TreeParams(pr["mtry"], pr["min_node_size"]),
                          pr["seed"])
    pairs = np.asarray(doc["pairs"], dtype=np.int64).reshape(pr["B"], 2, pr["k"])
    return MatchedPairForest(pairs=pairs, p=doc["p"], params=params, **arrays)


# -- covariance matrices ------------------------------------------------------

def save_matrix_csv(path, cov: CovarianceEstimate):
    write_table(path, [f"c{j}" for j in range(cov.P)], cov.matrix.tolist())


def load_matrix_csv(path) -> np.ndarray:
    rows = read_table(path)
    return np.array([[float(v) for v in r.values()] for r in rows])


def save_matrix_binary(path, cov: CovarianceEstimate):
    """Row-major little-endian doubles plus a ``.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cov.matrix.astype("<f8").tofile(path)
    write_json(path.with_suffix(path.suffix + ".json"), {
        "format": MATRIX_FORMAT,
        "version": 1,
        "shape": list(cov.matrix.shape),
        "dtype": "<f8",
        "order": "row-major",
        "stage": cov.stage,
        "grid": None if cov.grid is None else [float(t) for t in cov.grid.points],
    })


def load_matrix_binary(path) -> CovarianceEstimate:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta.get("format") != MATRIX_FORMAT:
        raise ParseError(f"{path}: unknown matrix sidecar")
    m = np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])
    grid = None if meta["grid"] is None else TimeGrid(meta["grid"])
    return CovarianceEstimate(m, meta["stage"], grid)


# -- bands ---------------------------------------------------------------------

BAND_COLUMNS = ("t", "center", "lower", "upper", "s")


def save_band(path, band: ConfidenceBand, **meta):
    """Band CSV with columns ``t, center, lower, upper, s`` and a JSON sidecar."""
    path = Path(path)
    write_table(path, BAND_COLUMNS,
                zip(band.t, band.center, band.lower, band.upper, band.s))
    write_json(path.with_suffix(".json"), {
        "zeta": band.zeta, "alpha": band.alpha, "stage": band.stage,
        "sample_enclosed": band.sample_enclosed, **meta})


def load_band(path) -> ConfidenceBand:
    path = Path(path)
    rows = read_table(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    cols = {c: np.array([float(r[c]) for r in rows]) for c in BAND_COLUMNS}
    return ConfidenceBand(zeta=meta["zeta"], alpha=meta["alpha"], stage=meta["stage"],
                          sample_enclosed=meta["sample_enclosed"], **cols)
