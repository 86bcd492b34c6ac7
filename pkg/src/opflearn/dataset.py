"""Three-container datasets: inputs x, outputs y, and dual records.

On disk a dataset is a directory with ``inputs.csv``, ``outputs.csv``,
``duals.csv`` (one aligned row per record) and ``metadata.json``.  Floats are
written with 17 significant digits, so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acopf import DEFAULT_ACTIVE_TOL, AcOpfSolution, active_set_from_duals, dual_labels
from .errors import SchemaMismatch
from .netio import NetworkModel

FILES = ("inputs.csv", "outputs.csv", "duals.csv")
META = "metadata.json"


@dataclass
class DatasetRecord:
    x: np.ndarray
    y: np.ndarray
    duals: np.ndarray
    objective: float = float("nan")

    def active_set(self, active_tol: float = DEFAULT_ACTIVE_TOL) -> np.ndarray:
        return active_set_from_duals(self.duals, active_tol)

    @classmethod
    def from_solution(cls, sol: AcOpfSolution) -> "DatasetRecord":
        return cls(x=sol.load.copy(), y=sol.outputs(), duals=sol.duals.copy(), objective=sol.objective)


@dataclass
class Dataset:
    fingerprint: str
    input_labels: list
    output_labels: list
    dual_labels: list
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    active_tol: float = DEFAULT_ACTIVE_TOL

    @classmethod
    def for_model(cls, model: NetworkModel, metadata=None, active_tol=DEFAULT_ACTIVE_TOL) -> "Dataset":
        loads = [str(b) for b in model.bus_ids[model.load_bus]]
        gens = [str(g) for g in model.gen_ids]
        return cls(
            fingerprint=model.fingerprint,
            input_labels=[f"pl_{b}" for b in loads] + [f"ql_{b}" for b in loads],
            output_labels=[f"vg_{g}" for g in gens] + [f"pg_{g}" for g in gens],
            dual_labels=dual_labels(model),
            metadata=dict(metadata or {}),
            active_tol=active_tol,
        )

    def __len__(self):
        return len(self.records)

    def append(self, rec: DatasetRecord):
        if (len(rec.x), len(rec.y), len(rec.duals)) != (
                len(self.input_labels), len(self.output_labels), len(self.dual_labels)):
            raise SchemaMismatch("record dimensions do not match the dataset")
        self.records.append(rec)

    def subset(self, idx) -> "Dataset":
        out = Dataset(self.fingerprint, list(self.input_labels), list(self.output_labels),
                      list(self.dual_labels), metadata=dict(self.metadata), active_tol=self.active_tol)
        out.records = [self.records[i] for i in idx]
        return out

    # matrix views
    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.records]).reshape(len(self), len(self.input_labels))

    @property
    def Y(self) -> np.ndarray:
        return np.array([r.y for r in self.records]).reshape(len(self), len(self.output_labels))

    @property
    def duals(self) -> np.ndarray:
        return np.array([r.duals for r in self.records]).reshape(len(self), len(self.dual_labels))

    def target(self, name: str) -> np.ndarray:
        """Output columns for ``"Pg"`` or ``"Vg"``."""
        prefix = {"pg": "pg_", "vg": "vg_"}.get(name.lower())
        if prefix is None:
            raise ValueError(f"unknown target {name!r}")
        cols = [i for i, lab in enumerate(self.output_labels) if lab.startswith(prefix)]
        return self.Y[:, cols]


def _fmt(v: float) -> str:
    return "%.17g" % v


def _write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_csv(ds: Dataset, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / f for f in FILES]
    _write_table(paths[0], ds.input_labels, (r.x for r in ds.records))
    _write_table(paths[1], ds.output_labels, (r.y for r in ds.records))
    _write_table(paths[2], ds.dual_labels, (r.duals for r in ds.records))
    meta = {
        "fingerprint": ds.fingerprint,
        "active_tol": ds.active_tol,
        "objectives": [_fmt(r.objective) for r in ds.records],
        "metadata": ds.metadata,
    }
    with open(d / META, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths + [d / META]


def _read_table(path: Path):
    if not path.exists():
        raise SchemaMismatch(f"missing {path.name}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch(f"{path.name} has no header")
    header, body = rows[0], rows[1:]
    out = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaMismatch(f"{path.name} row {i}: expected {len(header)} values, got {len(row)}")
        try:
            out.append(np.array([float(v) for v in row]))
        except ValueError:
            raise SchemaMismatch(f"{path.name} row {i}: non-numeric value") from None
    return header, out


def read_csv(directory) -> Dataset:
    d = Path(directory)
    (hx, X), (hy, Y), (hd, D) = (_read_table(d / f) for f in FILES)
    if not (len(X) == len(Y) == len(D)):
        raise SchemaMismatch(f"row counts differ: {len(X)}, {len(Y)}, {len(D)}")
    if not all(h.startswith(("pl_", "ql_")) for h in hx) or not all(h.startswith(("vg_", "pg_")) for h in hy):
        raise SchemaMismatch("unexpected column names")
    meta_path = d / META
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    objectives = [float(v) for v in meta.get("objectives", [])]
    if objectives and len(objectives) != len(X):
        raise SchemaMismatch("metadata objective count differs from the row count")
    ds = Dataset(
        fingerprint=meta.get("fingerprint", ""),
        input_labels=hx, output_labels=hy, dual_labels=hd,
        metadata=meta.get("metadata", {}),
        active_tol=float(meta.get("active_tol", DEFAULT_ACTIVE_TOL)),
    )
    for i in range(len(X)):
        obj = objectives[i] if objectives else float("nan")
        ds.records.append(DatasetRecord(X[i], Y[i], D[i], obj))
    return ds


def unique_active_sets(ds: Dataset, active_tol: float | None = None):
    """Number of distinct active sets and the cumulative count per record."""
    tol = ds.active_tol if active_tol is None else active_tol
    seen = set()
    curve = []
    for r in ds.records:
        seen.add(np.packbits(r.active_set(tol)).tobytes())
        curve.append(len(seen))
    return len(seen), curve


def split(ds: Dataset, train_fraction: float, seed) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    k = int(np.floor(train_fraction * n))
    return ds.subset(perm[:k]), ds.subset(perm[k:])
