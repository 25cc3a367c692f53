"""Adaptive explicit evolution, blow-up detection, and decay diagnostics.

The semilinear update is pure explicit Euler with the adaptive step

    tau_j = tau * min(1, ||u(., t_j)||_inf^(1-p)),
    u(x, t_{j+1}) = u(x, t_j) + tau_j * (L_h u(x, t_j) + u^p(x, t_j)),

run under the CFL restriction tau <= 1/(4 ||omega||_1), which makes the step
monotone and positivity preserving. A run halts as blown-up once the sup norm
reaches the configured threshold; the remaining time to the singularity is
extrapolated by the geometric-tail formula, whose per-step factor is

    g(tau) = tau (1+tau)^(p-1) / ((1+tau)^(p-1) - 1).

Blow-up is certified at the first step where ||u||^(p-1) exceeds the weight
mass ||omega||_1; from then on the sup norm grows strictly and the relative
excess eps_j increases toward 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .lattice import LatticeField, ZERO, constant_extension, norm
from .operators import ApplyPlan, apply as apply_operator
from .weights import WeightKernel, cfl_tau_max

BLOWN_UP = "BlownUp"
GLOBAL_SUSPECTED = "GlobalSuspected"
HORIZON_REACHED = "HorizonReached"


class NumericsError(RuntimeError):
    """Non-finite state encountered during a run."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class SchemeConfig:
    """Parameters of a semilinear run.

    ``horizon`` caps the physical time, ``max_steps`` the step count; the run
    returns a verdict when either is hit. ``blowup_threshold`` is the sup-norm
    level at which the run halts as blown-up. ``global_window`` is the
    trailing step count over which a nonincreasing sup norm is read as a
    suspected global solution.
    """

    p: float
    tau: float
    horizon: float = math.inf
    max_steps: int | None = None
    blowup_threshold: float = 1e8
    global_window: int = 50

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("reaction exponent p must exceed 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.blowup_threshold > 1:
            raise ValueError("blowup_threshold must exceed 1")
        if self.global_window < 1:
            raise ValueError("global_window must be >= 1")
        if not (self.horizon > 0 or self.max_steps):
            raise ValueError("need a positive horizon or a max_steps cap")


@dataclass
class SimulationTrace:
    """Per-step record (t_j, tau_j, sup norm, l1 norm, eps_j).

    Row j+1 satisfies t_{j+1} = t_j + tau_j up to the compensated-summation
    correction. ``eps`` is NaN until the blow-up certificate holds.
    """

    t: np.ndarray
    tau: np.ndarray
    sup_norm: np.ndarray
    l1_norm: np.ndarray
    eps: np.ndarray

    def __len__(self):
        return len(self.t)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j", "t", "tau_j", "sup_norm", "l1_norm", "eps_j"])
            for j in range(len(self.t)):
                eps = "" if math.isnan(self.eps[j]) else f"{self.eps[j]:.17e}"
                writer.writerow([
                    j, f"{self.t[j]:.17e}", f"{self.tau[j]:.17e}",
                    f"{self.sup_norm[j]:.17e}", f"{self.l1_norm[j]:.17e}", eps,
                ])


@dataclass
class BlowUpReport:
    """Verdict of a semilinear run with the extrapolated blow-up time.

    For a blown-up run, T_estimate = t_stop + g(tau) ||u||^(1-p) adds the
    geometric tail of the remaining adaptive steps to the halt time T_lower;
    rate_constant is the last recorded (T_estimate - t_j) ||u||^(p-1).
    """

    verdict: str
    trigger_step: int | None
    T_lower: float | None
    T_estimate: float | None
    rate_constant: float | None
    config: SchemeConfig
    boundary_layer_max: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "trigger_step": self.trigger_step,
            "T_lower": self.T_lower,
            "T_estimate": self.T_estimate,
            "rate_constant": self.rate_constant,
            "boundary_layer_max": self.boundary_layer_max,
            "config": {
                "p": self.config.p,
                "tau": self.config.tau,
                "horizon": self.config.horizon,
                "max_steps": self.config.max_steps,
                "blowup_threshold": self.config.blowup_threshold,
                "global_window": self.config.global_window,
            },
        }


def g_factor(tau: float, p: float) -> float:
    """Geometric-tail factor tau (1+tau)^(p-1) / ((1+tau)^(p-1) - 1)."""
    grow = (1.0 + tau) ** (p - 1.0)
    return tau * grow / (grow - 1.0)


def adaptive_tau(sup: float, p: float, tau: float) -> float:
    """tau_j = tau * min(1, sup^(1-p)); full step for sup <= 1 (or zero)."""
    if sup <= 1.0:
        return tau
    return tau * sup ** (1.0 - p)


def _react_exterior(ext: float, tau_j: float, p: float) -> float:
    """Reaction-only update of the exterior constant; inf on overflow."""
    with np.errstate(over="ignore"):
        return float(np.float64(ext) + np.float64(tau_j) * np.float64(ext) ** p)


def explicit_update(kernel: WeightKernel, field: LatticeField, p: float,
                    tau_j: float, plan: ApplyPlan | None = None) -> LatticeField:
    """One explicit Euler update with a prescribed step tau_j."""
    if plan is None:
        plan = ApplyPlan(kernel, field.box_radius)
    ext = field.exterior_value()
    lu = plan(field.values, ext)
    with np.errstate(over="ignore"):
        values = field.values + tau_j * (lu + field.values**p)
    new_ext = _react_exterior(ext, tau_j, p)
    if not (np.all(np.isfinite(values)) and math.isfinite(new_ext)):
        raise NumericsError("non-finite update (overflow); halt at the "
                            "blow-up threshold before stepping this far")
    values = _clip_roundoff_negatives(values)
    extension = constant_extension(new_ext) \
        if field.extension.kind == "constant" else ZERO
    return LatticeField(field.h, field.dim, field.box_radius, values, extension)


def step(kernel: WeightKernel, field: LatticeField, p: float,
         tau: float) -> tuple[LatticeField, float]:
    """One adaptive step: returns the updated field and the step tau_j taken."""
    if np.any(field.values < 0) or field.exterior_value() < 0:
        raise ValueError("step requires a nonnegative field")
    if tau > cfl_tau_max(kernel) * (1 + 1e-12):
        raise ValueError("tau violates the CFL bound for this kernel")
    sup = norm(field, "sup")
    tau_j = adaptive_tau(sup, p, tau)
    return explicit_update(kernel, field, p, tau_j), tau_j


def _clip_roundoff_negatives(values: np.ndarray) -> np.ndarray:
    """Clamp FFT roundoff undershoot; genuine negatives are an error."""
    low = values.min()
    if low >= 0.0:
        return values
    scale = max(float(np.max(np.abs(values))), 1.0)
    if low < -1e-10 * scale:
        raise NumericsError(f"update produced negative value {low:.3e}")
    return np.maximum(values, 0.0)


class _Columns:
    """Doubling float64 column buffers (runs can reach 10^7 steps)."""

    def __init__(self, names):
        self.names = names
        self._cap = 1024
        self._n = 0
        self._data = {n: np.empty(self._cap) for n in names}

    def append(self, **row):
        if self._n == self._cap:
            self._cap *= 2
            for n in self.names:
                grown = np.empty(self._cap)
                grown[:self._n] = self._data[n][:self._n]
                self._data[n] = grown
        for n, v in row.items():
            self._data[n][self._n] = v
        self._n += 1

    def column(self, name) -> np.ndarray:
        return self._data[name][:self._n].copy()


def run_semilinear(kernel: WeightKernel, u0: LatticeField,
                   config: SchemeConfig) -> tuple[SimulationTrace, BlowUpReport]:
    """Run the adaptive scheme until blow-up, the horizon, or the step cap."""
    if kernel.h != u0.h or kernel.dim != u0.dim:
        raise ValueError("kernel and datum live on different grids")
    if np.any(u0.values < 0) or u0.exterior_value() < 0:
        raise ValueError("datum must be nonnegative")
    if norm(u0, "sup") == 0.0:
        raise ValueError("datum must be nontrivial")
    if config.tau > cfl_tau_max(kernel) * (1 + 1e-12):
        raise ValueError("config.tau violates the CFL bound for this kernel")

    p, tau = config.p, config.tau
    l1w = kernel.l1_norm
    hN = kernel.h ** kernel.dim
    plan = ApplyPlan(kernel, u0.box_radius)
    values = u0.values.copy()
    ext = u0.exterior_value()
    constant_mode = u0.extension.kind == "constant"

    cols = _Columns(["t", "tau", "sup", "l1", "eps"])
    t = 0.0
    comp = 0.0  # Kahan compensation
    j = 0
    trigger_step = None
    verdict = None

    while True:
        sup = max(float(values.max()), ext) if values.size else ext
        l1 = math.inf if (constant_mode and ext != 0.0) \
            else hN * float(np.sum(np.abs(values)))
        sup_pow = sup ** (p - 1.0)
        eps = (sup_pow - l1w) / sup_pow if sup_pow > l1w else math.nan
        tau_j = adaptive_tau(sup, p, tau)
        cols.append(t=t, tau=tau_j, sup=sup, l1=l1, eps=eps)
        if trigger_step is None and sup_pow > l1w:
            trigger_step = j
        if sup >= config.blowup_threshold:
            verdict = BLOWN_UP
            break
        if t >= config.horizon or (config.max_steps is not None
                                   and j >= config.max_steps):
            verdict = HORIZON_REACHED
            break

        lu = plan(values, ext)
        with np.errstate(over="ignore"):
            values = values + tau_j * (lu + values**p)
        if constant_mode:
            ext = _react_exterior(ext, tau_j, p)
        if not (np.all(np.isfinite(values)) and math.isfinite(ext)):
            raise NumericsError("non-finite state during run", step=j)
        values = _clip_roundoff_negatives(values)
        # compensated time accumulation: thousands of tiny steps near blow-up
        y = tau_j - comp
        t_new = t + y
        comp = (t_new - t) - y
        t = t_new
        j += 1

    trace = SimulationTrace(cols.column("t"), cols.column("tau"),
                            cols.column("sup"), cols.column("l1"),
                            cols.column("eps"))
    final = LatticeField(u0.h, u0.dim, u0.box_radius, values,
                         constant_extension(ext) if constant_mode else ZERO)

    if verdict == BLOWN_UP:
        sup_stop = trace.sup_norm[-1]
        t_stop = trace.t[-1]
        T_estimate = t_stop + g_factor(tau, p) * sup_stop ** (1.0 - p)
        rate_constant = (T_estimate - t_stop) * sup_stop ** (p - 1.0)
        report = BlowUpReport(BLOWN_UP, trigger_step, t_stop, T_estimate,
                              rate_constant, config,
                              final.boundary_layer_max())
    else:
        window = min(config.global_window, len(trace) - 1)
        sups = trace.sup_norm[-(window + 1):]
        tol = 1e-12 * max(sups.max(), 1.0)
        nonincreasing = window >= 1 and bool(np.all(np.diff(sups) <= tol))
        verdict = GLOBAL_SUSPECTED if nonincreasing else HORIZON_REACHED
        report = BlowUpReport(verdict, trigger_step, None, None, None,
                              config, final.boundary_layer_max())
    return trace, report


def run_diffusion(kernel: WeightKernel, phi: LatticeField, tau: float,
                  steps: int, sample_steps=()) -> tuple[SimulationTrace, dict]:
    """Fixed-step linear evolution; returns the trace and sampled fields."""
    if kernel.h != phi.h or kernel.dim != phi.dim:
        raise ValueError("kernel and datum live on different grids")
    if tau > cfl_tau_max(kernel) * (1 + 1e-12):
        raise ValueError("tau violates the CFL bound for this kernel")
    if phi.extension.kind != "zero":
        raise ValueError("diffusion runs need an l1 (zero-extension) datum")

    hN = kernel.h ** kernel.dim
    plan = ApplyPlan(kernel, phi.box_radius)
    values = phi.values.copy()
    wanted = set(int(s) for s in sample_steps)
    samples: dict[int, LatticeField] = {}
    cols = _Columns(["t", "tau", "sup", "l1", "eps"])

    for j in range(steps + 1):
        if j in wanted:
            samples[j] = LatticeField(phi.h, phi.dim, phi.box_radius, values)
        cols.append(t=j * tau, tau=tau,
                    sup=float(np.max(np.abs(values))),
                    l1=hN * float(np.sum(np.abs(values))),
                    eps=math.nan)
        if j == steps:
            break
        values = values + tau * plan(values, 0.0)
        if not np.all(np.isfinite(values)):
            raise NumericsError("non-finite state during diffusion run", step=j)

    trace = SimulationTrace(cols.column("t"), cols.column("tau"),
                            cols.column("sup"), cols.column("l1"),
                            cols.column("eps"))
    return trace, samples


# -- fractional heat kernel ----------------------------------------------------

def gamma_s(x, t: float, K: float, s: float, dim: int = 1,
            method: str = "auto"):
    """Fundamental solution of d_t G = -K (-Laplacian)^s G at time t.

    Closed forms at s=1 (Gaussian) and s=1/2 in 1D (Poisson kernel);
    otherwise numeric Fourier inversion by adaptive quadrature (abs tol
    1e-8). Accepts scalar or array ``x``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if not K > 0:
        raise ValueError("K must be positive")
    if not 0 < s <= 1:
        raise ValueError("s must lie in (0, 1]")
    xv = np.asarray(x, dtype=np.float64)
    scalar = xv.ndim == 0
    if dim == 1:
        r = np.abs(np.atleast_1d(xv))
    else:
        pts = np.atleast_2d(xv)
        r = np.sqrt(np.sum(pts**2, axis=-1))

    if method not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    use_closed = method != "quadrature"
    if use_closed and s == 1.0:
        out = (4 * math.pi * K * t) ** (-dim / 2.0) * np.exp(-(r**2) / (4 * K * t))
    elif use_closed and s == 0.5 and dim == 1:
        kt = K * t
        out = (1.0 / math.pi) * kt / (kt**2 + r**2)
    elif method == "closed":
        raise ValueError(f"no closed form at s={s}, dim={dim}")
    else:
        out = np.array([_gamma_quadrature(ri, t, K, s, dim) for ri in r])
    return float(out[0]) if scalar else out.reshape(np.shape(x) if dim == 1
                                                    else np.shape(r))


def _gamma_quadrature(r: float, t: float, K: float, s: float, dim: int) -> float:
    decay = lambda rho: np.exp(-K * t * rho ** (2 * s))
    if dim == 1:
        if r == 0.0:
            val, _ = integrate.quad(decay, 0, np.inf, epsabs=1e-10)
        else:
            val, _ = integrate.quad(decay, 0, np.inf, weight="cos", wvar=r,
                                    epsabs=1e-10)
        return val / math.pi
    if dim == 2:
        integrand = lambda rho: decay(rho) * special.j0(rho * r) * rho
        val, _ = integrate.quad(integrand, 0, np.inf, epsabs=1e-10, limit=400)
        return val / (2 * math.pi)
    raise ValueError("quadrature inversion implemented for dim <= 2")


@dataclass
class DecayProfile:
    """Rescaled decay series t^rho * (discrepancy to the heat kernel, sup norm),
    with rho = N/(2s)."""

    t: np.ndarray
    rescaled_discrepancy: np.ndarray
    rescaled_sup: np.ndarray
    rho: float

    def sup_slope_between(self, t_min: float, t_max: float) -> float:
        """Log-log least-squares slope of the raw sup norm on [t_min, t_max]."""
        keep = (self.t >= t_min) & (self.t <= t_max)
        if keep.sum() < 2:
            return math.nan
        logt = np.log(self.t[keep])
        logsup = np.log(self.rescaled_sup[keep]) - self.rho * logt
        return float(np.polyfit(logt, logsup, 1)[0])

    @property
    def tail_slope(self) -> float:
        """Sup-norm slope over the second half of the sampled time range."""
        if len(self.t) < 2:
            return math.nan
        return self.sup_slope_between(self.t[len(self.t) // 2], self.t[-1])


def decay_profile(samples, phi_mass: float, K: float, s: float) -> DecayProfile:
    """Rescaled comparison of diffusion snapshots against phi_mass * Gamma_s.

    ``samples`` is an iterable of (t_j, field) pairs from run_diffusion;
    entries at t=0 are skipped.
    """
    ts, disc, rsup = [], [], []
    rho = None
    for t_j, fld in samples:
        if t_j <= 0:
            continue
        rho = fld.dim / (2.0 * s)
        if fld.dim == 1:
            xs = fld.coordinates()
        else:
            grids = fld.coordinate_grids()
            xs = np.stack([g.ravel() for g in grids], axis=-1)
        g = gamma_s(xs, t_j, K, s, fld.dim)
        g = np.asarray(g).reshape(fld.values.shape)
        d = float(np.max(np.abs(fld.values - phi_mass * g)))
        ts.append(t_j)
        disc.append(t_j**rho * d)
        rsup.append(t_j**rho * float(np.max(np.abs(fld.values))))
    if rho is None:
        raise ValueError("no positive-time samples supplied")
    return DecayProfile(np.asarray(ts), np.asarray(disc), np.asarray(rsup), rho)


@dataclass
class RateSeries:
    """Series (t_j, (T_estimate - t_j) * sup^(p-1)) with its tail mean."""

    t: np.ndarray
    values: np.ndarray
    tail_mean: float
    g_tau: float


def rate_series(trace: SimulationTrace, report: BlowUpReport,
                p: float) -> RateSeries:
    """Blow-up rate diagnostic; tail = last decade of sup-norm growth."""
    if report.verdict != BLOWN_UP:
        raise ValueError("rate series requires a blown-up run")
    values = (report.T_estimate - trace.t) * trace.sup_norm ** (p - 1.0)
    tail = trace.sup_norm >= trace.sup_norm[-1] / 10.0
    return RateSeries(trace.t, values, float(np.mean(values[tail])),
                      g_factor(report.config.tau, p))


# -- blow-up certificates -------------------------------------------------------

@dataclass
class KaplanReport:
    I0: float
    threshold: float
    guaranteed: bool


def kaplan_check(u0: LatticeField, eig, p: float) -> KaplanReport:
    """Weighted-mass blow-up certificate against the first Dirichlet eigenpair.

    ``eig`` is an EigenResult whose eigenfunction is l1-normalized; blow-up
    is guaranteed once h^N sum u0*phi exceeds lambda^(1/(p-1)).
    """
    phi = eig.eigenfunction
    if abs(norm(phi, 1) - 1.0) > 1e-10:
        raise ValueError("eigenfunction must be l1-normalized to 1")
    if u0.h != phi.h or u0.dim != phi.dim:
        raise ValueError("datum and eigenfunction live on different grids")
    u_on_phi = _embed_values(u0, phi.box_radius)
    i0 = float(u0.h ** u0.dim * np.sum(u_on_phi * phi.values))
    threshold = eig.lam ** (1.0 / (p - 1.0))
    return KaplanReport(i0, threshold, i0 > threshold)


def _embed_values(field: LatticeField, box_radius: int) -> np.ndarray:
    """Field values on a box of the given radius, honoring the extension."""
    A, B = field.box_radius, int(box_radius)
    if B == A:
        return field.values
    if B < A:
        sl = tuple(slice(A - B, A + B + 1) for _ in range(field.dim))
        return field.values[sl]
    pad = B - A
    return np.pad(field.values, pad, constant_values=field.exterior_value())


def check_initial_condition_b(kernel: WeightKernel, u0: LatticeField,
                              epsilon: float, p: float) -> bool:
    """Check L_h u0 + (1 - epsilon) u0^p >= 0 at every stored node."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    lu = apply_operator(kernel, u0)
    lhs = lu.values + (1.0 - epsilon) * u0.values**p
    return bool(np.min(lhs) >= -1e-12)
