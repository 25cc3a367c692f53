"""Config-driven experiment runner.

Usage: ``blowlab <command> --config path.json [--out dir]`` with commands
simulate, diffuse, eigen, symbol, sweep, butimes, rates, decay. The JSON
config carries the kernel descriptor, grid, scheme, and datum; every report
echoes the config back so artifacts are self-describing. Identical config
and seed produce byte-identical CSV output.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 inconclusive
(horizon reached without a verdict, or a refinement row failing to blow up).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import eigen as eig
from . import evolution as evo
from .lattice import LatticeField, constant_extension, field_to_csv, mass, restrict_function
from .operators import symbol, symbol_bounds
from .weights import KernelError, build_kernel, cfl_tau_max

COMMANDS = ("simulate", "diffuse", "eigen", "symbol", "sweep", "butimes",
            "rates", "decay")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INCONCLUSIVE = 4


class ConfigError(ValueError):
    pass


class InconclusiveError(RuntimeError):
    """A study row ended without the verdict the study requires."""


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; round-trips losslessly through JSON."""

    command: str
    kernel: dict
    h: float
    box_radius: int
    cutoff_radius: int | None = None
    p: float | None = None
    tau: float | str = "auto"  # number, "auto", or "auto:<fraction>"
    horizon: float = 50.0
    max_steps: int | None = None
    blowup_threshold: float = 1e8
    global_window: int = 50
    initial: dict = field(default_factory=lambda: {"name": "bump"})
    output_dir: str = "."
    seed: int = 0
    emit_plot_script: bool = False
    steps: int | None = None
    sample_count: int = 17
    xi_count: int = 200
    s: float | None = None
    R_list: list | None = None
    interval: list | None = None  # eigen domain as an open interval (a, b)
    p_list: list | None = None
    h_list: list | None = None
    reference_h: float | None = None
    K: float | str = "auto"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if isinstance(self.kernel, str):
            self.kernel = {"family": self.kernel}
        if isinstance(self.initial, str):
            self.initial = {"name": self.initial}
        if not self.h > 0:
            raise ConfigError("h must be positive")
        if self.box_radius < 1:
            raise ConfigError("box_radius must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "command" not in data:
            raise ConfigError("config needs a 'command'")
        for key in ("kernel", "h", "box_radius"):
            if key not in data:
                raise ConfigError(f"config needs {key!r}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path, command: str | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if command is not None:
        stated = data.get("command", command)
        if stated != command:
            raise ConfigError(
                f"config command {stated!r} does not match CLI command "
                f"{command!r}")
        data["command"] = command
    return ExperimentConfig.from_dict(data)


# -- building blocks -----------------------------------------------------------

def make_kernel(config: ExperimentConfig, h: float | None = None,
                box_radius: int | None = None):
    h = config.h if h is None else h
    box = config.box_radius if box_radius is None else box_radius
    cutoff = config.cutoff_radius
    if cutoff is None and _is_heavy_tailed(config.kernel):
        cutoff = 4 * box
    try:
        return build_kernel(config.kernel, h, dim=1, cutoff_radius=cutoff)
    except KernelError as exc:
        raise ConfigError(f"bad kernel descriptor: {exc}") from exc


def _is_heavy_tailed(desc) -> bool:
    if isinstance(desc, str):
        return False
    if desc.get("family") == "fractional":
        return True
    if desc.get("family") == "mixed":
        return any(_is_heavy_tailed(c["kernel"]) for c in desc["components"])
    return False


def make_initial(config: ExperimentConfig, h: float | None = None,
                 box_radius: int | None = None) -> LatticeField:
    h = config.h if h is None else h
    box = config.box_radius if box_radius is None else box_radius
    desc = config.initial
    name = desc.get("name")
    if name == "bump":
        return restrict_function(lambda x: 0.9 * np.maximum(1 - x**2, 0.0),
                                 h, box)
    if name == "gaussian":
        return restrict_function(lambda x: np.exp(-(x**2)), h, box)
    if name == "constant":
        value = float(desc.get("value", 1.0))
        return LatticeField(h, 1, box, np.full(2 * box + 1, value),
                            constant_extension(value))
    if name == "spike":
        values = np.zeros(2 * box + 1)
        values[box] = float(desc.get("value", 1.0))
        return LatticeField(h, 1, box, values)
    raise ConfigError(f"unknown initial datum {desc!r}")


def resolve_tau(config: ExperimentConfig, kernel) -> float:
    cap = cfl_tau_max(kernel)
    tau = config.tau
    if isinstance(tau, str):
        if tau == "auto":
            fraction = 0.9
        elif tau.startswith("auto:"):
            fraction = float(tau.split(":", 1)[1])
        else:
            raise ConfigError(f"bad tau spec {tau!r}")
        if not 0 < fraction <= 1:
            raise ConfigError("auto-CFL fraction must lie in (0, 1]")
        return fraction * cap
    tau = float(tau)
    if tau > cap * (1 + 1e-12):
        raise ConfigError(f"tau={tau} violates the CFL bound {cap}")
    return tau


def resolve_order(config: ExperimentConfig, kernel) -> float:
    """Decay/rescaling order s: explicit, else kernel tail order, else 1."""
    if config.s is not None:
        return float(config.s)
    if kernel.tail_order is not None:
        return float(kernel.tail_order)
    if math.isinf(kernel.second_moment):
        raise ConfigError("kernel needs an explicit order s")
    return 1.0


def scheme_config(config: ExperimentConfig, kernel) -> evo.SchemeConfig:
    if config.p is None:
        raise ConfigError("this command needs the reaction exponent p")
    return evo.SchemeConfig(
        p=float(config.p),
        tau=resolve_tau(config, kernel),
        horizon=config.horizon,
        max_steps=config.max_steps,
        blowup_threshold=config.blowup_threshold,
        global_window=config.global_window,
    )


# -- artifact writers -----------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17e}"
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_report(path, config: ExperimentConfig, payload: dict) -> None:
    doc = {"config": config.to_dict()}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True,
                  default=_json_default)
        fh.write("\n")


_PLOT_TEMPLATE = """\
# Auto-generated plot script: reads {csv_name} next to this file.
import csv
from pathlib import Path

import matplotlib.pyplot as plt

rows = list(csv.DictReader(open(Path(__file__).parent / "{csv_name}")))
x = [float(r["{x_col}"]) for r in rows]
y = [abs(float(r["{y_col}"])) for r in rows if r["{y_col}"]]
x = x[: len(y)]

fig, ax = plt.subplots()
ax.plot(x, y, marker="o")
ax.set_xlabel("{x_col}")
ax.set_ylabel("{y_col}")
ax.set_xscale("{x_scale}")
ax.set_yscale("{y_scale}")
fig.savefig(Path(__file__).parent / "{png_name}", dpi=150)
print("wrote {png_name}")
"""


def write_plot_script(out_dir, command, csv_name, x_col, y_col,
                      x_scale="log", y_scale="log") -> None:
    script = _PLOT_TEMPLATE.format(csv_name=csv_name, x_col=x_col, y_col=y_col,
                                   x_scale=x_scale, y_scale=y_scale,
                                   png_name=f"{command}.png")
    (out_dir / f"plot_{command}.py").write_text(script)


# -- commands -------------------------------------------------------------------

def cmd_simulate(config: ExperimentConfig, out_dir) -> int:
    kernel = make_kernel(config)
    u0 = make_initial(config)
    cfg = scheme_config(config, kernel)
    trace, report = evo.run_semilinear(kernel, u0, cfg)
    trace.to_csv(out_dir / "trace.csv")
    payload = {"report": report.to_json_dict(), "steps": len(trace)}
    write_report(out_dir / "report.json", config, payload)
    if config.emit_plot_script:
        write_plot_script(out_dir, "simulate", "trace.csv", "t", "sup_norm",
                          x_scale="linear")
    return EXIT_OK if report.verdict != evo.HORIZON_REACHED else EXIT_INCONCLUSIVE


def cmd_diffuse(config: ExperimentConfig, out_dir) -> int:
    kernel = make_kernel(config)
    phi = make_initial(config)
    tau = resolve_tau(config, kernel)
    steps = config.steps or int(math.ceil(config.horizon / tau))
    trace, samples = evo.run_diffusion(kernel, phi, tau, steps,
                                       sample_steps=[steps])
    trace.to_csv(out_dir / "trace.csv")
    field_to_csv(samples[steps], out_dir / f"field_step{steps}.csv")
    payload = {
        "steps": steps,
        "tau": tau,
        "final_sup_norm": float(trace.sup_norm[-1]),
        "mass_initial": mass(phi),
        "mass_final": mass(samples[steps]),
        "boundary_layer_max": samples[steps].boundary_layer_max(),
    }
    write_report(out_dir / "report.json", config, payload)
    if config.emit_plot_script:
        write_plot_script(out_dir, "diffuse", "trace.csv", "t", "sup_norm")
    return EXIT_OK


def cmd_eigen(config: ExperimentConfig, out_dir) -> int:
    kernel = make_kernel(config)
    s = resolve_order(config, kernel)
    if config.interval is not None:
        a, b = (float(v) for v in config.interval)
        problems = [((b - a) / 2.0,
                     eig.DirichletProblem.from_interval(kernel, a, b))]
    else:
        radii = config.R_list or [float(config.box_radius * config.h / 2)]
        problems = [(float(R), eig.DirichletProblem.from_ball(kernel, float(R)))
                    for R in radii]
    rows = []
    results = []
    for R, problem in problems:
        res = eig.solve_dirichlet(problem, seed=config.seed)
        results.append(res)
        rows.append((R, res.lam, res.lam * R ** (2 * s), res.residual))
    write_csv(out_dir / "eigen.csv",
              ["R", "lambda", "lambda_R2s", "residual"], rows)
    last = results[-1]
    shape = eig.eigen_shape_checks(last)
    field_to_csv(last.eigenfunction, out_dir / "eigenfunction.csv")
    payload = {
        "s": s,
        "rows": [{"R": r[0], "lambda": r[1], "lambda_R2s": r[2],
                  "residual": r[3]} for r in rows],
        "simple": last.simple,
        "gap": last.gap,
        "shape": asdict(shape),
    }
    write_report(out_dir / "report.json", config, payload)
    if config.emit_plot_script:
        write_plot_script(out_dir, "eigen", "eigen.csv", "R", "lambda")
    return EXIT_OK


def cmd_symbol(config: ExperimentConfig, out_dir) -> int:
    kernel = make_kernel(config)
    s = resolve_order(config, kernel)
    limit = math.pi / kernel.h
    xi = np.geomspace(limit * 1e-4, limit, config.xi_count)
    sym = symbol(kernel, xi)
    rep = symbol_bounds(sym, s)
    ratios = -sym.values / np.abs(xi) ** (2 * s)
    write_csv(out_dir / "symbol.csv", ["xi", "m", "neg_m_over_xi_2s"],
              zip(xi.tolist(), sym.values.tolist(), ratios.tolist()))
    payload = {
        "s": s,
        "fitted_K_upper": rep.fitted_K_upper,
        "fitted_K_lower": rep.fitted_K_lower,
        "s1_certified": rep.s1_certified,
        "s2_certified": rep.s2_certified,
        "near_zero_limit": rep.near_zero_limit,
        "tail_l1_bound": rep.tail_l1_bound,
    }
    write_report(out_dir / "report.json", config, payload)
    if config.emit_plot_script:
        write_plot_script(out_dir, "symbol", "symbol.csv", "xi",
                          "neg_m_over_xi_2s")
    return EXIT_OK


def fujita_sweep(config: ExperimentConfig):
    """Verdict table over the exponent list with the configured datum."""
    if not config.p_list:
        raise ConfigError("sweep needs p_list")
    kernel = make_kernel(config)
    u0 = make_initial(config)
    rows = []
    for p in config.p_list:
        cfg = evo.SchemeConfig(
            p=float(p), tau=resolve_tau(config, kernel),
            horizon=config.horizon, max_steps=config.max_steps,
            blowup_threshold=config.blowup_threshold,
            global_window=config.global_window)
        try:
            _, report = evo.run_semilinear(kernel, u0, cfg)
            t_est = report.T_estimate if report.T_estimate is not None else math.nan
            rows.append((float(p), report.verdict, t_est, config.horizon))
        except evo.NumericsError as exc:
            rows.append((float(p), f"error: {exc}", math.nan, config.horizon))
    return rows


def cmd_sweep(config: ExperimentConfig, out_dir) -> int:
    rows = fujita_sweep(config)
    write_csv(out_dir / "fujita.csv",
              ["p", "verdict", "T_estimate", "horizon"], rows)
    write_report(out_dir / "report.json", config, {
        "rows": [{"p": r[0], "verdict": r[1],
                  "T_estimate": None if math.isnan(r[2]) else r[2]}
                 for r in rows]})
    if config.emit_plot_script:
        write_plot_script(out_dir, "sweep", "fujita.csv", "p", "T_estimate",
                          x_scale="linear")
    return EXIT_OK


def butimes_study(config: ExperimentConfig):
    """Blow-up times on coarser grids against a refined reference grid.

    With tau='auto[:frac]' the step is rescaled per row by the CFL fraction;
    a numeric tau is shared by all rows (it must satisfy the CFL bound at the
    reference grid, the strictest one) so grid-independent data give
    identical times. Returns (rows, t_ref, slope): rows are
    (h, T_estimate, |T - T_ref|); the slope is the log-log regression of the
    differences (nan for a single row).
    """
    if not config.h_list or config.reference_h is None:
        raise ConfigError("butimes needs h_list and reference_h")
    if not all(config.reference_h < float(h) for h in config.h_list):
        raise ConfigError("reference_h must be finer than every h in h_list")

    extent = config.box_radius * config.h

    def blowup_time(h: float) -> float:
        box = int(round(extent / h))
        kernel = make_kernel(config, h=h, box_radius=box)
        u0 = make_initial(config, h=h, box_radius=box)
        cfg = evo.SchemeConfig(
            p=float(config.p), tau=resolve_tau(config, kernel),
            horizon=config.horizon, max_steps=config.max_steps,
            blowup_threshold=config.blowup_threshold,
            global_window=config.global_window)
        _, report = evo.run_semilinear(kernel, u0, cfg)
        if report.verdict != evo.BLOWN_UP:
            raise InconclusiveError(
                f"run at h={h} did not blow up (verdict {report.verdict})")
        return report.T_estimate

    if isinstance(config.tau, (int, float)):
        strictest = make_kernel(config, h=config.reference_h,
                                box_radius=int(round(extent / config.reference_h)))
        resolve_tau(config, strictest)  # raises if the shared tau is unstable

    t_ref = blowup_time(config.reference_h)
    rows = []
    for h in config.h_list:
        t_h = blowup_time(float(h))
        rows.append((float(h), t_h, abs(t_h - t_ref)))
    diffs = [r[2] for r in rows]
    if len(rows) >= 2 and all(d > 0 for d in diffs):
        slope = float(np.polyfit(np.log([r[0] for r in rows]),
                                 np.log(diffs), 1)[0])
    else:
        slope = math.nan
    return rows, t_ref, slope


def cmd_butimes(config: ExperimentConfig, out_dir) -> int:
    rows, t_ref, slope = butimes_study(config)
    write_csv(out_dir / "butimes.csv", ["h", "T_estimate", "diff_to_ref"], rows)
    write_report(out_dir / "report.json", config, {
        "reference_h": config.reference_h,
        "T_reference": t_ref,
        "loglog_slope": slope,
    })
    if config.emit_plot_script:
        write_plot_script(out_dir, "butimes", "butimes.csv", "h", "diff_to_ref")
    return EXIT_OK


def cmd_rates(config: ExperimentConfig, out_dir) -> int:
    kernel = make_kernel(config)
    u0 = make_initial(config)
    cfg = scheme_config(config, kernel)
    trace, report = evo.run_semilinear(kernel, u0, cfg)
    if report.verdict != evo.BLOWN_UP:
        raise InconclusiveError(f"run did not blow up (verdict {report.verdict})")
    series = evo.rate_series(trace, report, cfg.p)
    write_csv(out_dir / "rates.csv", ["t", "rate"],
              zip(series.t.tolist(), series.values.tolist()))
    write_report(out_dir / "report.json", config, {
        "report": report.to_json_dict(),
        "tail_mean": series.tail_mean,
        "g_tau": series.g_tau,
    })
    if config.emit_plot_script:
        write_plot_script(out_dir, "rates", "rates.csv", "t", "rate",
                          x_scale="linear", y_scale="linear")
    return EXIT_OK


def cmd_decay(config: ExperimentConfig, out_dir) -> int:
    kernel = make_kernel(config)
    phi = make_initial(config)
    if phi.extension.kind != "zero":
        raise ConfigError("decay needs an l1 (zero-extension) datum")
    s = resolve_order(config, kernel)
    tau = resolve_tau(config, kernel)
    steps = config.steps or int(math.ceil(config.horizon / tau))
    t_end = steps * tau
    times = np.geomspace(max(t_end / 100.0, tau), t_end, config.sample_count)
    sample_steps = sorted(set(int(round(t / tau)) for t in times if t > 0))
    trace, samples = evo.run_diffusion(kernel, phi, tau, steps,
                                       sample_steps=sample_steps)
    K = config.K
    if K == "auto":
        K = fit_decay_constant(config, s)
    pairs = [(j * tau, samples[j]) for j in sample_steps]
    profile = evo.decay_profile(pairs, mass(phi), float(K), s)
    write_csv(out_dir / "decay.csv",
              ["t", "rescaled_discrepancy", "rescaled_sup"],
              zip(profile.t.tolist(), profile.rescaled_discrepancy.tolist(),
                  profile.rescaled_sup.tolist()))
    write_report(out_dir / "report.json", config, {
        "s": s,
        "K": float(K),
        "tail_slope": profile.tail_slope,
        "expected_slope": -1.0 / (2 * s),
    })
    if config.emit_plot_script:
        write_plot_script(out_dir, "decay", "decay.csv", "t",
                          "rescaled_discrepancy")
    return EXIT_OK


def fit_decay_constant(config: ExperimentConfig, s: float) -> float:
    """Near-zero symbol fit for the heat-kernel constant K.

    Heavy-tailed kernels need a large dedicated cutoff: the truncated symbol
    flattens to O(|xi|^2) below 1/(cutoff*h), which would corrupt the fit.
    """
    cutoff = config.cutoff_radius
    if _is_heavy_tailed(config.kernel):
        cutoff = max(cutoff or 0, 500_000)
    kernel = build_kernel(config.kernel, config.h, dim=1, cutoff_radius=cutoff)
    limit = math.pi / kernel.h
    xi = np.geomspace(2e-3 * limit, 2e-2 * limit, 8)
    return symbol_bounds(symbol(kernel, xi), s).near_zero_limit


_DISPATCH = {
    "simulate": cmd_simulate,
    "diffuse": cmd_diffuse,
    "eigen": cmd_eigen,
    "symbol": cmd_symbol,
    "sweep": cmd_sweep,
    "butimes": cmd_butimes,
    "rates": cmd_rates,
    "decay": cmd_decay,
}


def run_experiment(config: ExperimentConfig, out_dir=None) -> int:
    """Dispatch one experiment; returns the process exit code."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _DISPATCH[config.command](config, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blowlab",
        description="finite-difference blow-up laboratory for local and "
                    "nonlocal reaction-diffusion problems")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory "
                        "(defaults to the config's output_dir)")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.command)
        code = run_experiment(config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (evo.NumericsError, eig.ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return code


if __name__ == "__main__":
    sys.exit(main())
