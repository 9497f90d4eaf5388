"""Quantile grids and instrument basis construction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import QlsivError

BASIS_SPECS = ("linear", "quadratic-full", "quadratic-no-z2sq")


@dataclass(frozen=True)
class QuantileGrid:
    """Evenly spaced, symmetrically trimmed quantile indices.

    The grid is tau_min, tau_min + step, ... up to 1 - tau_min. With the
    default tau_min = 0.01, steps 0.10 / 0.05 / 0.01 / 0.001 give
    K = 10 / 20 / 99 / 981.
    """

    tau_min: float = 0.01
    step: float = 0.01
    taus: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.tau_min < 0.5:
            raise QlsivError(f"tau_min must be in (0, 0.5), got {self.tau_min}")
        if self.step <= 0.0:
            raise QlsivError(f"step must be positive, got {self.step}")
        count = int(np.floor((1.0 - 2.0 * self.tau_min) / self.step + 1e-9)) + 1
        taus = np.round(self.tau_min + self.step * np.arange(count), 12)
        if taus[-1] >= 1.0 or taus[0] <= 0.0:
            raise QlsivError("quantile grid escapes (0, 1)")
        object.__setattr__(self, "taus", tuple(float(t) for t in taus))

    @property
    def k(self) -> int:
        return len(self.taus)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.taus)


@dataclass(frozen=True)
class BuiltBasis:
    """Materialized basis: column matrix, labels, and which columns involve
    the excluded instruments."""

    matrix: np.ndarray
    labels: tuple[str, ...]
    z2_mask: np.ndarray  # bool per column

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class InstrumentBasis:
    """Polynomial basis in the controls and excluded instruments.

    linear            -> (1, Z1, Z2)
    quadratic-full    -> (1, Z1, Z2, Z1^2, Z2^2, Z1*Z2)
    quadratic-no-z2sq -> quadratic-full without the Z2 squares (needed when
                         Z2 is binary, where Z2^2 duplicates Z2)
    """

    spec: str = "quadratic-full"

    def __post_init__(self):
        if self.spec not in BASIS_SPECS:
            raise QlsivError(f"unknown basis spec {self.spec!r}; choose from {BASIS_SPECS}")

    def build(
        self,
        z1: np.ndarray,
        z2: np.ndarray,
        z1_names: tuple[str, ...] | None = None,
        z2_names: tuple[str, ...] | None = None,
    ) -> BuiltBasis:
        z1 = np.atleast_2d(np.asarray(z1, dtype=float))
        z2 = np.atleast_2d(np.asarray(z2, dtype=float))
        if z1.shape[0] == 1 and z1.shape[1] > 1:
            z1 = z1.T
        if z2.shape[0] == 1 and z2.shape[1] > 1:
            z2 = z2.T
        n = z1.shape[0]
        if z2.shape[0] != n:
            raise QlsivError("z1 and z2 must have the same number of rows")
        d1, d2 = z1.shape[1], z2.shape[1]
        if z1_names is None:
            z1_names = tuple(f"z1_{j}" for j in range(d1)) if d1 != 1 else ("z1",)
        if z2_names is None:
            z2_names = tuple(f"z2_{j}" for j in range(d2)) if d2 != 1 else ("z2",)

        cols = [np.ones(n)]
        labels = ["const"]
        involves = [False]
        for j in range(d1):
            cols.append(z1[:, j])
            labels.append(z1_names[j])
            involves.append(False)
        for j in range(d2):
            cols.append(z2[:, j])
            labels.append(z2_names[j])
            involves.append(True)
        if self.spec != "linear":
            for j in range(d1):
                cols.append(z1[:, j] ** 2)
                labels.append(f"{z1_names[j]}^2")
                involves.append(False)
            if self.spec == "quadratic-full":
                for j in range(d2):
                    cols.append(z2[:, j] ** 2)
                    labels.append(f"{z2_names[j]}^2")
                    involves.append(True)
            stacked = [(z1[:, j], z1_names[j], False) for j in range(d1)]
            stacked += [(z2[:, j], z2_names[j], True) for j in range(d2)]
            for a in range(len(stacked)):
                for b in range(a + 1, len(stacked)):
                    cols.append(stacked[a][0] * stacked[b][0])
                    labels.append(f"{stacked[a][1]}*{stacked[b][1]}")
                    involves.append(stacked[a][2] or stacked[b][2])
        matrix = np.column_stack(cols)
        return BuiltBasis(matrix=matrix, labels=tuple(labels), z2_mask=np.asarray(involves))
