"""Dataset container and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError


@dataclass(frozen=True)
class Dataset:
    """Outcome, scalar endogenous regressor, included controls, excluded
    instruments, and optional cluster labels."""

    y: np.ndarray
    x: np.ndarray
    z1: np.ndarray  # (n, d1)
    z2: np.ndarray  # (n, d2)
    clusters: np.ndarray | None = None
    y_name: str = "y"
    x_name: str = "x"
    z1_names: tuple[str, ...] = ("z1",)
    z2_names: tuple[str, ...] = ("z2",)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        z1 = np.asarray(self.z1, dtype=float)
        z2 = np.asarray(self.z2, dtype=float)
        if z1.ndim == 1:
            z1 = z1[:, None]
        if z2.ndim == 1:
            z2 = z2[:, None]
        n = y.size
        if not (x.size == n and z1.shape[0] == n and z2.shape[0] == n):
            raise DataError("y, x, z1, z2 must have matching row counts")
        if self.clusters is not None:
            cl = np.asarray(self.clusters).ravel()
            if cl.size != n:
                raise DataError("cluster labels must have one entry per row")
            object.__setattr__(self, "clusters", cl)
        for name, arr in (("y", y), ("x", x), ("z1", z1), ("z2", z2)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"column block {name!r} contains non-finite values")
        if len(self.z1_names) != z1.shape[1]:
            object.__setattr__(
                self, "z1_names", tuple(f"z1_{j}" for j in range(z1.shape[1]))
            )
        if len(self.z2_names) != z2.shape[1]:
            object.__setattr__(
                self, "z2_names", tuple(f"z2_{j}" for j in range(z2.shape[1]))
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class LoadReport:
    rows_read: int
    rows_dropped_missing: int
    rows_dropped_trim: int
    trim_cutoff: float | None = None


def write_csv(dataset: Dataset, path) -> None:
    """Serialize a dataset to RFC-4180 CSV at full float precision."""
    header = (
        [dataset.y_name, dataset.x_name]
        + list(dataset.z1_names)
        + list(dataset.z2_names)
        + (["cluster"] if dataset.clusters is not None else [])
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(dataset.y[i])), repr(float(dataset.x[i]))]
            row += [repr(float(v)) for v in dataset.z1[i]]
            row += [repr(float(v)) for v in dataset.z2[i]]
            if dataset.clusters is not None:
                row.append(str(dataset.clusters[i]))
            writer.writerow(row)


def load_csv(
    path,
    outcome: str,
    endog: str,
    controls: tuple[str, ...],
    instruments: tuple[str, ...],
    cluster: str | None = None,
    trim_upper_fraction: float | None = None,
) -> tuple[Dataset, LoadReport]:
    """Read a dataset from CSV.

    Rows with missing values in any referenced column are dropped and
    counted. With ``trim_upper_fraction`` = f, rows whose endogenous value
    strictly exceeds the empirical (1 - f) quantile are dropped; ties at
    the cutoff are retained.
    """
    controls = tuple(controls)
    instruments = tuple(instruments)
    referenced = [outcome, endog, *controls, *instruments]
    if cluster is not None:
        referenced.append(cluster)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, no header row (line 1)")
        header = [h.strip() for h in header]
        if any(_looks_numeric(h) for h in header):
            raise DataError(f"{path}: line 1 does not look like a header row")
        col_index = {}
        for name in referenced:
            if name not in header:
                raise DataError(f"{path}: column {name!r} not found in header {header}")
            col_index[name] = header.index(name)
        rows = []
        clusters = []
        n_missing = 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            vals = []
            missing = False
            for name in referenced:
                if name == cluster:
                    continue
                raw = rec[col_index[name]].strip() if col_index[name] < len(rec) else ""
                if raw == "" or raw.lower() in ("na", "nan"):
                    missing = True
                    break
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {raw!r} at line {lineno}, column {name!r}"
                    )
            if missing:
                n_missing += 1
                continue
            rows.append(vals)
            if cluster is not None:
                clusters.append(rec[col_index[cluster]].strip())
    if not rows:
        raise DataError(f"{path}: no usable data rows")
    arr = np.asarray(rows, dtype=float)
    names_in_order = [n for n in referenced if n != cluster]
    pos = {n: j for j, n in enumerate(names_in_order)}
    y = arr[:, pos[outcome]]
    x = arr[:, pos[endog]]
    z1 = arr[:, [pos[c] for c in controls]] if controls else np.empty((len(arr), 0))
    z2 = arr[:, [pos[c] for c in instruments]] if instruments else np.empty((len(arr), 0))
    cl = np.asarray(clusters) if cluster is not None else None

    n_trim = 0
    cutoff = None
    if trim_upper_fraction is not None:
        if not 0.0 < trim_upper_fraction < 1.0:
            raise DataError("trim_upper_fraction must be in (0, 1)")
        cutoff = float(np.quantile(x, 1.0 - trim_upper_fraction))
        keep = x <= cutoff
        n_trim = int(np.sum(~keep))
        y, x, z1, z2 = y[keep], x[keep], z1[keep], z2[keep]
        if cl is not None:
            cl = cl[keep]
    dataset = Dataset(
        y=y,
        x=x,
        z1=z1,
        z2=z2,
        clusters=cl,
        y_name=outcome,
        x_name=endog,
        z1_names=controls,
        z2_names=instruments,
    )
    report = LoadReport(
        rows_read=len(arr) + n_missing,
        rows_dropped_missing=n_missing,
        rows_dropped_trim=n_trim,
        trim_cutoff=cutoff,
    )
    return dataset, report


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False
