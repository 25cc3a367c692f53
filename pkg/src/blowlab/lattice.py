"""Scalar fields on the truncated lattice h*Z^N.

A field stores values on the symmetric index box [-A, A]^N of the grid
x_alpha = h*alpha and declares how it extends outside the box: either by
zero (the l1 setting used for diffusion and blow-up runs) or by a constant
boundary-layer value (needed so spatially constant data evolve as the exact
reaction ODE, since the diffusion operator annihilates constants).

Fields are immutable once constructed. Norm reductions use numpy's C-order
summation, so repeated evaluations are bitwise reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class GridMismatchError(ValueError):
    """Two lattice objects do not live on the same grid."""


class NormError(ValueError):
    """Requested norm is infinite for this extension mode."""


@dataclass(frozen=True)
class Extension:
    """Exterior extension tag: values at indices with |alpha_i| > A."""

    kind: str  # "zero" or "constant"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant"):
            raise ValueError(f"unknown extension kind {self.kind!r}")
        if self.kind == "zero" and self.value != 0.0:
            raise ValueError("zero extension cannot carry a nonzero value")
        if not np.isfinite(self.value):
            raise ValueError("extension value must be finite")


ZERO = Extension("zero")


def constant_extension(value: float) -> Extension:
    return Extension("constant", float(value))


@dataclass(frozen=True)
class LatticeField:
    """Values of a grid function on the index box [-A, A]^N.

    Attributes:
        h: spatial step, > 0.
        dim: lattice dimension N.
        box_radius: integer A >= 1; stored indices alpha satisfy |alpha_i| <= A.
        values: float64 array of shape (2A+1,)*N, read-only.
        extension: exterior extension tag.
    """

    h: float
    dim: int
    box_radius: int
    values: np.ndarray
    extension: Extension = ZERO

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.box_radius < 1:
            raise ValueError("box_radius must be >= 1")
        n = 2 * self.box_radius + 1
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.shape != (n,) * self.dim:
            raise ValueError(
                f"values shape {arr.shape} does not match box "
                f"(expected {(n,) * self.dim})"
            )
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0] - self.box_radius
            raise ValueError(f"non-finite value at index {tuple(bad)}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    # -- geometry -----------------------------------------------------------

    def indices(self) -> np.ndarray:
        """Index range -A..A along one axis."""
        return np.arange(-self.box_radius, self.box_radius + 1)

    def coordinates(self) -> np.ndarray:
        """Grid coordinates h*alpha along one axis."""
        return self.h * self.indices()

    def coordinate_grids(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of coordinates, one array per axis (ij indexing)."""
        axes = [self.coordinates()] * self.dim
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def exterior_value(self) -> float:
        return self.extension.value if self.extension.kind == "constant" else 0.0

    def value_at(self, alpha) -> float:
        """Value at index alpha (int in 1D or index tuple), honoring the extension."""
        idx = np.atleast_1d(np.asarray(alpha, dtype=int))
        if idx.shape != (self.dim,):
            raise ValueError(f"index {alpha!r} has wrong dimension")
        if np.any(np.abs(idx) > self.box_radius):
            return self.exterior_value()
        return float(self.values[tuple(idx + self.box_radius)])

    def with_values(self, values, extension: Extension | None = None) -> "LatticeField":
        return LatticeField(
            self.h,
            self.dim,
            self.box_radius,
            np.asarray(values, dtype=np.float64),
            self.extension if extension is None else extension,
        )

    def boundary_layer_max(self) -> float:
        """Max |value| on the outermost index layer (boundary-influence diagnostic)."""
        v = self.values
        mask = np.zeros(v.shape, dtype=bool)
        for axis in range(self.dim):
            sl_lo = [slice(None)] * self.dim
            sl_hi = [slice(None)] * self.dim
            sl_lo[axis] = 0
            sl_hi[axis] = -1
            mask[tuple(sl_lo)] = True
            mask[tuple(sl_hi)] = True
        return float(np.max(np.abs(v[mask])))


def restrict_function(f, h: float, box_radius: int, dim: int = 1,
                      extension: Extension = ZERO) -> LatticeField:
    """Restrict a function on R^N to the grid: values[alpha] = f(h*alpha).

    ``f`` is called with one coordinate array per axis (so 1D fields take
    f(x), 2D fields f(x, y)); a plain scalar function works too.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    axes = [h * np.arange(-box_radius, box_radius + 1)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    with np.errstate(all="ignore"):  # non-finite values are reported below
        try:
            vals = np.asarray(f(*grids), dtype=np.float64)
            if vals.shape != grids[0].shape:
                vals = np.broadcast_to(vals, grids[0].shape).astype(np.float64)
        except Exception:
            vals = np.vectorize(f, otypes=[np.float64])(*grids)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0] - box_radius
        raise ValueError(f"function is non-finite at grid node {tuple(bad)}")
    return LatticeField(h, dim, box_radius, vals, extension)


def norm(field: LatticeField, kind) -> float:
    """Discrete norm of a field.

    ``kind`` is "sup" for the l-infinity norm or a real p >= 1 for the
    lp(h*Z^N) norm (h^N sum |v|^p)^(1/p). The sup norm accounts for a
    constant exterior; lp norms with a nonzero constant exterior are
    infinite and raise NormError.
    """
    if kind == "sup":
        interior = float(np.max(np.abs(field.values)))
        return max(interior, abs(field.exterior_value()))
    p = float(kind)
    if not p >= 1:
        raise ValueError("lp norm requires p >= 1")
    if field.extension.kind == "constant" and field.extension.value != 0.0:
        raise NormError("lp norm is infinite for a nonzero constant extension")
    hN = field.h ** field.dim
    return float((hN * np.sum(np.abs(field.values) ** p)) ** (1.0 / p))


def mass(field: LatticeField) -> float:
    """Signed discrete integral h^N * sum of values (zero-extension fields)."""
    if field.extension.kind == "constant" and field.extension.value != 0.0:
        raise NormError("mass is infinite for a nonzero constant extension")
    return float(field.h ** field.dim * np.sum(field.values))


# -- serialization ----------------------------------------------------------

def field_to_csv(field: LatticeField, path) -> None:
    """Write rows (index..., coordinate..., value), one per stored node."""
    n = 2 * field.box_radius + 1
    idx_axes = [field.indices()] * field.dim
    grids = np.meshgrid(*idx_axes, indexing="ij")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"alpha{i + 1}" for i in range(field.dim)]
        header += [f"x{i + 1}" for i in range(field.dim)]
        header.append("value")
        writer.writerow(header)
        flat_idx = [g.ravel() for g in grids]
        flat_val = field.values.ravel()
        for k in range(n ** field.dim):
            row = [str(int(g[k])) for g in flat_idx]
            row += [f"{field.h * g[k]:.17e}" for g in flat_idx]
            row.append(f"{flat_val[k]:.17e}")
            writer.writerow(row)


def field_to_npz(field: LatticeField, path) -> None:
    """Binary snapshot: header (h, N, A, extension) plus the value array."""
    np.savez(
        path,
        values=field.values,
        h=field.h,
        dim=field.dim,
        box_radius=field.box_radius,
        extension_kind=field.extension.kind,
        extension_value=field.extension.value,
    )


def field_from_npz(path) -> LatticeField:
    with np.load(path, allow_pickle=False) as data:
        ext = Extension(str(data["extension_kind"]), float(data["extension_value"]))
        return LatticeField(
            float(data["h"]),
            int(data["dim"]),
            int(data["box_radius"]),
            data["values"],
            ext,
        )
