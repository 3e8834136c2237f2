"""Uniform cell grids on [-L, L]^dim, the degenerate weights and grid-function norms."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exponents import WeightCase, check_alpha


@dataclass(frozen=True)
class WeightSpec:
    case: WeightCase
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "case", WeightCase(self.case))
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")

    def validate(self, N: int) -> "WeightSpec":
        check_alpha(self.case, self.alpha, N)
        return self


def weight_at(spec: WeightSpec, point) -> float | np.ndarray:
    """w(x) = |x_1|^alpha (case A) or |x|^alpha (case B).

    `point` is a coordinate vector or an array whose last axis holds coordinates.
    Returns exactly 1 for alpha = 0 (including on the degeneracy set).
    """
    x = np.asarray(point, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if spec.case is WeightCase.A:
        rad = np.abs(x[..., 0])
    else:
        rad = np.sqrt(np.sum(x * x, axis=-1))
    if spec.alpha == 0:
        out = np.ones_like(rad)
    else:
        out = rad ** spec.alpha
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    L: float
    cells_per_axis: int

    @property
    def h(self) -> float:
        return 2 * self.L / self.cells_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.cells_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def axis(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        n = self.cells_per_axis
        return (np.arange(n) - (n - 1) / 2) * self.h

    @property
    def cell_centers(self) -> np.ndarray:
        """Array of shape (size, dim), C-order over the axes."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.cell_centers ** 2, axis=-1))

    @property
    def center_index(self) -> int:
        mid = self.cells_per_axis // 2
        return int(np.ravel_multi_index((mid,) * self.dim, self.shape))

    def index_of(self, point) -> int:
        """Flat index of the cell containing `point`."""
        x = np.atleast_1d(np.asarray(point, dtype=float))
        n = self.cells_per_axis
        idx = np.clip(np.floor((x + self.L) / self.h).astype(int), 0, n - 1)
        return int(np.ravel_multi_index(tuple(idx), self.shape))


def build_grid(dim: int, L: float, cells_per_axis: int) -> Grid:
    """Uniform grid with an odd number of cells so x = 0 is a cell center."""
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if cells_per_axis < 3 or cells_per_axis % 2 == 0:
        raise ValueError(
            f"cells_per_axis must be odd and >= 3 (x=0 must be a cell center), got {cells_per_axis}")
    return Grid(dim, float(L), int(cells_per_axis))


@dataclass(eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.grid.size:
            raise ValueError(f"field has {self.values.size} values, grid has {self.grid.size} cells")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.grid.dim)] + ["value"])
        for c, v in zip(self.grid.cell_centers, self.values):
            w.writerow([repr(float(ci)) for ci in c] + [repr(float(v))])
        return buf.getvalue()


class NormKind(str, Enum):
    STRONG = "Strong"
    WEAK = "WeakLorentz"


def norm(field: Field | np.ndarray, zeta: float, kind: NormKind | str = NormKind.STRONG,
         cell_volume: float | None = None) -> float:
    """L^zeta or weak-L^zeta norm of a grid function.

    The weak norm sup_rho rho * |{|f| > rho}|^(1/zeta) is evaluated exactly on
    the discrete distribution function: sort |f| descending and take, at each
    distinct level v, v times (volume of cells with |f| >= v)^(1/zeta).
    """
    kind = NormKind(kind)
    if isinstance(field, Field):
        vals, vol = field.values, field.grid.cell_volume
    else:
        if cell_volume is None:
            raise ValueError("cell_volume required for bare arrays")
        vals, vol = np.asarray(field, dtype=float).reshape(-1), cell_volume
    a = np.abs(vals)
    if not np.all(np.isfinite(a)):
        raise ValueError("field has non-finite values")
    if kind is NormKind.WEAK:
        if not zeta > 1:
            raise ValueError(f"weak-L^zeta norm needs zeta > 1, got {zeta}")
        if math.isinf(zeta):
            return float(a.max(initial=0.0))
        srt = np.sort(a)[::-1]
        srt = srt[srt > 0]
        if srt.size == 0:
            return 0.0
        measure = vol * np.arange(1, srt.size + 1)
        # last position of each run of equal values carries the full level-set measure
        last = np.r_[srt[1:] != srt[:-1], True]
        return float(np.max(srt[last] * measure[last] ** (1.0 / zeta)))
    if not zeta >= 1:
        raise ValueError(f"L^zeta norm needs zeta >= 1, got {zeta}")
    if math.isinf(zeta):
        return float(a.max(initial=0.0))
    m = a.max(initial=0.0)
    if m == 0:
        return 0.0
    # scale out the max to keep a**zeta finite for large zeta
    return float(m * (np.sum((a / m) ** zeta) * vol) ** (1.0 / zeta))
