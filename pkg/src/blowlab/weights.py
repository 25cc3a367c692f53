"""Weight families omega(alpha, h) defining the discrete diffusion operator.

Supported families (mirroring the usual finite-difference discretizations of
local and nonlocal generators):

  * ``laplacian``       - 1/h^2 on the 2N axis neighbors, zero elsewhere.
  * ``fractional``      - h^N |x_alpha|^(-N-2s), the bare power-law kernel
                          (no normalizing constant), s in (0, 1).
  * ``zero_order``      - h^N J(x_alpha) for an integrable radial profile J
                          from a small registry (gaussian, exponential,
                          indicator).
  * ``discrete_delta``  - symmetric point masses at given integer offsets.
  * ``mixed``           - positive linear combination of the above.

A kernel caches its l1 norm (truncated sum plus an analytic tail correction
where the family admits one; exact via the zeta function for the 1D
fractional kernel), its second moment, and the tail decay order. Kernels are
immutable after construction and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

CUTOFF_CAP = 5_000_000

_ZERO_ORDER_PROFILES = ("gaussian", "exponential", "indicator")


class KernelError(ValueError):
    """Invalid kernel descriptor or parameters."""


def _offsets_grid(radius: int, dim: int) -> np.ndarray:
    """All integer offsets in the box [-radius, radius]^dim, shape (K, dim)."""
    axes = [np.arange(-radius, radius + 1)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


class WeightKernel:
    """Immutable weight family omega(., h) with cached norms and moments."""

    def __init__(self, family: str, params: dict, h: float, dim: int,
                 cutoff_radius: int, components=None):
        self.family = family
        self.params = dict(params)
        self.h = float(h)
        self.dim = int(dim)
        self.cutoff_radius = int(cutoff_radius)
        self.components = components  # [(coef, WeightKernel), ...] for mixed
        if not self.h > 0:
            raise KernelError("h must be positive")
        if self.dim < 1:
            raise KernelError("dim must be >= 1")
        if self.cutoff_radius < 1:
            raise KernelError("cutoff_radius must be >= 1")
        self._init_caches()

    # -- evaluation ----------------------------------------------------------

    def weight_array(self, offsets: np.ndarray) -> np.ndarray:
        """Evaluate omega at integer offsets, shape (..., dim) -> (...)."""
        o = np.asarray(offsets, dtype=np.int64)
        if o.shape[-1] != self.dim:
            raise KernelError("offset array has wrong trailing dimension")
        h, N = self.h, self.dim
        if self.family == "laplacian":
            axis_neighbor = np.sum(np.abs(o), axis=-1) == 1
            return np.where(axis_neighbor, 1.0 / h**2, 0.0)
        if self.family == "fractional":
            s = self.params["s"]
            r = h * np.sqrt(np.sum(o.astype(np.float64) ** 2, axis=-1))
            with np.errstate(divide="ignore"):
                w = h**N * r ** (-N - 2 * s)
            return np.where(r > 0, w, 0.0)
        if self.family == "zero_order":
            r = h * np.sqrt(np.sum(o.astype(np.float64) ** 2, axis=-1))
            w = h**N * self._profile(r)
            return np.where(r > 0, w, 0.0)
        if self.family == "discrete_delta":
            out = np.zeros(o.shape[:-1])
            for off, m in self._masses.items():
                out += m * np.all(o == np.asarray(off), axis=-1)
            return out
        if self.family == "mixed":
            out = np.zeros(o.shape[:-1])
            for coef, k in self.components:
                out += coef * k.weight_array(o)
            return out
        raise KernelError(f"unknown family {self.family!r}")

    def weight(self, alpha) -> float:
        """omega at a single integer index (int in 1D or a tuple)."""
        idx = np.atleast_1d(np.asarray(alpha, dtype=np.int64))
        return float(self.weight_array(idx.reshape(1, self.dim))[0])

    def weights_on_box(self, radius: int | None = None) -> np.ndarray:
        """Array of omega over the offset box, shape (2r+1,)*dim, center zero."""
        r = self.cutoff_radius if radius is None else int(radius)
        offs = _offsets_grid(r, self.dim)
        return self.weight_array(offs).reshape((2 * r + 1,) * self.dim)

    def _profile(self, r: np.ndarray) -> np.ndarray:
        name = self.params["profile"]
        if name == "gaussian":
            return np.exp(-(r**2))
        if name == "exponential":
            return np.exp(-r)
        if name == "indicator":
            return (r <= self.params.get("radius", 1.0)).astype(np.float64)
        raise KernelError(f"unknown zero-order profile {name!r}")

    # -- caches ---------------------------------------------------------------

    def _init_caches(self):
        h, N, C = self.h, self.dim, self.cutoff_radius
        if self.family == "discrete_delta":
            offsets = [tuple(int(v) for v in np.atleast_1d(o))
                       for o in self.params["offsets"]]
            masses = [float(m) for m in self.params["masses"]]
            if len(offsets) != len(masses):
                raise KernelError("offsets and masses must pair up")
            table: dict[tuple, float] = {}
            for off, m in zip(offsets, masses):
                if len(off) != N:
                    raise KernelError(f"offset {off} has wrong dimension")
                if m < 0:
                    raise KernelError("negative point mass")
                if all(v == 0 for v in off):
                    raise KernelError("point mass at the origin is not allowed")
                table[off] = table.get(off, 0.0) + m
            for off, m in table.items():
                mirror = tuple(-v for v in off)
                if not math.isclose(table.get(mirror, 0.0), m, rel_tol=1e-12):
                    raise KernelError(f"offset list not symmetric at {off}")
            self._masses = table

        w = self.weights_on_box()
        if np.any(w < 0):
            raise KernelError("negative weight encountered")
        self.l1_truncated = float(np.sum(w))
        self.l1_tail = self._tail_l1()
        self.l1_norm = self.l1_truncated + self.l1_tail
        if not self.l1_norm > 0:
            raise KernelError("kernel has zero l1 norm")

        offs = _offsets_grid(C, N)
        r2 = (h * h) * np.sum(offs.astype(np.float64) ** 2, axis=-1)
        if self._has_infinite_second_moment():
            self.second_moment = math.inf
        else:
            self.second_moment = float(np.sum(w.ravel() * r2))
        self.tail_order = self._tail_order()

    def _has_infinite_second_moment(self) -> bool:
        if self.family == "fractional":
            return True
        if self.family == "mixed":
            return any(k._has_infinite_second_moment() for _, k in self.components)
        return False

    def _tail_order(self):
        if self.family == "fractional":
            return float(self.params["s"])
        if self.family == "mixed":
            orders = [k.tail_order for _, k in self.components
                      if k.tail_order is not None]
            return min(orders) if orders else None
        return None

    def _tail_l1(self) -> float:
        """Analytic correction for the l1 mass beyond the cutoff box."""
        h, N, C = self.h, self.dim, self.cutoff_radius
        R = C * h
        if self.family == "fractional":
            s = self.params["s"]
            if N == 1:
                full = 2.0 * h ** (-2 * s) * float(special.zeta(1 + 2 * s))
                return max(full - self.l1_truncated, 0.0)
            surf = 2 * math.pi if N == 2 else 4 * math.pi
            return surf * R ** (-2 * s) / (2 * s)
        if self.family == "zero_order":
            name = self.params["profile"]
            if name == "gaussian":
                if N == 1:
                    return float(math.sqrt(math.pi) * special.erfc(R))
                return float(math.pi * math.exp(-(R**2)))
            if name == "exponential":
                if N == 1:
                    return 2.0 * math.exp(-R)
                return float(2 * math.pi * (1 + R) * math.exp(-R))
            return 0.0
        if self.family == "mixed":
            return float(sum(c * k._tail_l1() for c, k in self.components))
        return 0.0

    # -- export ---------------------------------------------------------------

    def to_table(self, radius: int | None = None) -> np.ndarray:
        """Audit table with one row (alpha_1..alpha_N, omega) per offset."""
        r = self.cutoff_radius if radius is None else int(radius)
        offs = _offsets_grid(r, self.dim)
        w = self.weight_array(offs)
        return np.column_stack([offs.astype(np.float64), w])

    def descriptor(self) -> dict:
        d = {"family": self.family}
        d.update(self.params)
        if self.family == "mixed":
            d["components"] = [
                {"coefficient": c, "kernel": k.descriptor()}
                for c, k in self.components
            ]
        return d

    def __repr__(self):
        return (f"WeightKernel({self.family!r}, h={self.h}, dim={self.dim}, "
                f"cutoff={self.cutoff_radius})")


def _default_cutoff(spec: dict, h: float, dim: int) -> int:
    if isinstance(spec, str):
        spec = {"family": spec}
    family = spec["family"]
    if family == "laplacian":
        return 1
    if family == "discrete_delta":
        return max(int(np.max(np.abs(np.atleast_1d(off))))
                   for off in spec["offsets"])
    if family == "zero_order":
        profile = spec.get("profile", "gaussian")
        if profile == "gaussian":
            return min(CUTOFF_CAP, max(1, math.ceil(7.0 / h)))
        if profile == "exponential":
            return min(CUTOFF_CAP, max(1, math.ceil(45.0 / h)))
        if profile == "indicator":
            return max(1, math.ceil(spec.get("radius", 1.0) / h))
        raise KernelError(f"unknown zero-order profile {profile!r}")
    if family == "fractional":
        return 128
    if family == "mixed":
        return max(_default_cutoff(c["kernel"], h, dim)
                   for c in spec["components"])
    raise KernelError(f"unknown family {family!r}")


def build_kernel(spec, h: float, dim: int = 1,
                 cutoff_radius: int | None = None) -> WeightKernel:
    """Construct a kernel from a descriptor.

    ``spec`` is a dict like {"family": "fractional", "s": 0.5} or the bare
    family name for parameter-free families. ``cutoff_radius`` bounds all
    direct sums; it defaults per family (heavy-tailed kernels should get
    roughly 4x the field box radius from the caller).
    """
    if isinstance(spec, str):
        spec = {"family": spec}
    spec = dict(spec)
    family = spec.pop("family", None)
    if family not in ("laplacian", "fractional", "zero_order",
                      "discrete_delta", "mixed"):
        raise KernelError(f"unknown family {family!r}")
    if cutoff_radius is None:
        cutoff_radius = _default_cutoff({"family": family, **spec}, h, dim)
    cutoff_radius = min(int(cutoff_radius), CUTOFF_CAP)

    if family == "fractional":
        s = float(spec.get("s", math.nan))
        if not 0 < s < 1:
            raise KernelError("fractional order s must lie in (0, 1)")
        return WeightKernel(family, {"s": s}, h, dim, cutoff_radius)
    if family == "zero_order":
        profile = spec.get("profile", "gaussian")
        if profile not in _ZERO_ORDER_PROFILES:
            raise KernelError(f"unknown zero-order profile {profile!r}")
        params = {"profile": profile}
        if profile == "indicator":
            params["radius"] = float(spec.get("radius", 1.0))
        return WeightKernel(family, params, h, dim, cutoff_radius)
    if family == "discrete_delta":
        return WeightKernel(family, {"offsets": spec["offsets"],
                                     "masses": spec["masses"]},
                            h, dim, cutoff_radius)
    if family == "mixed":
        comps = []
        for item in spec["components"]:
            coef = float(item["coefficient"])
            if not coef > 0:
                raise KernelError("mixed coefficients must be positive")
            sub = build_kernel(item["kernel"], h, dim, cutoff_radius)
            comps.append((coef, sub))
        if not comps:
            raise KernelError("mixed kernel needs at least one component")
        return WeightKernel(family, {}, h, dim, cutoff_radius, components=comps)
    return WeightKernel(family, {}, h, dim, cutoff_radius)


def cfl_tau_max(kernel: WeightKernel) -> float:
    """Largest stable base step: 1 / (4 * l1 norm of the weights)."""
    if not kernel.l1_norm > 0:
        raise KernelError("kernel has zero l1 norm")
    return 1.0 / (4.0 * kernel.l1_norm)


# -- assumption validation ---------------------------------------------------

@dataclass
class AssumptionReport:
    """Outcome of the structural weight checks on the cutoff index set.

    a4/a5 use None for "undetermined" (never guessed). a4 carries the fitted
    tail order, the two-sided constants, and the onset radius from which the
    power-law envelope holds.
    """

    a1: bool
    a2: bool
    a3: bool
    a4: bool | None
    a5: bool | None
    second_moment: float
    l1_norm: float
    a4_s: float | None = None
    a4_c1: float | None = None
    a4_c2: float | None = None
    a4_onset_radius: float | None = None


def _radial_groups(kernel: WeightKernel, radius: int):
    offs = _offsets_grid(radius, kernel.dim)
    keep = np.any(offs != 0, axis=-1)
    offs = offs[keep]
    w = kernel.weight_array(offs)
    r = kernel.h * np.sqrt(np.sum(offs.astype(np.float64) ** 2, axis=-1))
    order = np.argsort(r, kind="stable")
    return r[order], w[order], offs[order]


def validate_assumptions(kernel: WeightKernel,
                         sample_radius: int | None = None) -> AssumptionReport:
    """Check the structural weight assumptions exhaustively on the cutoff set."""
    radius = kernel.cutoff_radius if sample_radius is None else int(sample_radius)
    # scan past compact supports so the tail classification has room, but
    # keep the dense scan affordable in higher dimensions
    cap = {1: 5000, 2: 100}.get(kernel.dim, 12)
    floor = {1: 64, 2: 16}.get(kernel.dim, 4)
    radius = min(cap, max(radius, floor))
    r, w, offs = _radial_groups(kernel, radius)

    # (A1): symmetry and nonnegativity, positive finite l1 mass.
    mirrored = kernel.weight_array(-offs)
    a1 = bool(np.all(w >= 0) and np.allclose(w, mirrored, rtol=0, atol=0)
              and 0 < kernel.l1_norm < math.inf)

    # (A2): positive weight on the first axis neighbors.
    axes = np.eye(kernel.dim, dtype=np.int64)
    a2 = bool(np.all(kernel.weight_array(axes) > 0))

    # (A3): radially nonincreasing on all stored radii.
    a3 = True
    uniq = np.unique(np.round(r, 12))
    prev_min = math.inf
    for radius_value in uniq:
        grp = w[np.abs(r - radius_value) < 1e-12 * max(radius_value, 1.0)]
        if grp.max() > prev_min * (1 + 1e-12) + 1e-300:
            a3 = False
            break
        prev_min = grp.min()

    a4, a4_s, a4_c1, a4_c2, a4_onset = _fit_tail(kernel, r, w)

    if math.isinf(kernel.second_moment):
        a5 = False
    else:
        a5 = True

    return AssumptionReport(
        a1=a1, a2=a2, a3=a3, a4=a4, a5=a5,
        second_moment=kernel.second_moment, l1_norm=kernel.l1_norm,
        a4_s=a4_s, a4_c1=a4_c1, a4_c2=a4_c2, a4_onset_radius=a4_onset,
    )


def _fit_tail(kernel: WeightKernel, r: np.ndarray, w: np.ndarray):
    """Log-log fit of the weight tail against C * h^N * |x|^(-N-2s)."""
    N = kernel.dim
    hN = kernel.h ** N
    r_max = r.max()
    tail = r >= 0.5 * r_max
    rt, wt = r[tail], w[tail]
    if np.all(wt == 0):
        return False, None, None, None, None  # compactly supported tail
    pos = wt > 0
    radii = np.unique(np.round(rt[pos], 12))
    if radii.size < 3:
        return None, None, None, None, None  # too little data to classify
    logr, logw = np.log(rt[pos]), np.log(wt[pos] / hN)
    slope, intercept = np.polyfit(logr, logw, 1)
    resid = np.max(np.abs(logw - (slope * logr + intercept)))
    fitted_s = (-slope - N) / 2.0
    if resid > 0.05 or not 0 < fitted_s < 1 or np.any(~pos):
        return False, float(fitted_s) if np.isfinite(fitted_s) else None, \
            None, None, None
    ratios = wt[pos] / hN * rt[pos] ** (N + 2 * fitted_s)
    c1, c2 = float(ratios.min()), float(ratios.max())
    # onset: extend inward while the envelope from the fit window still holds
    ratios_all = np.where(w > 0, w / hN * np.maximum(r, 1e-300) ** (N + 2 * fitted_s), np.nan)
    onset = float(rt[pos].min())
    inner = np.argsort(r)
    for i in inner[::-1]:
        if r[i] >= 0.5 * r_max:
            continue
        ok = np.isfinite(ratios_all[i]) and c1 * 0.99 <= ratios_all[i] <= c2 * 1.01
        if ok:
            onset = float(r[i])
        else:
            break
    return True, float(fitted_s), c1, c2, onset
