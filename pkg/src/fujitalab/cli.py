"""Command-line entry point: fujitalab <command> [--config FILE] [--key value ...]."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import shutil
import sys
import tempfile

import numpy as np

from . import __version__
from .config import COMMANDS, KEYS, ConfigError, ExperimentConfig, format_value, parse_config
from .data import shape_by_name
from .exponents import ProblemParams, Verdict, derive_exponents, identity_residuals, picard_constants
from .grid import WeightSpec, build_grid
from .mild import SolverControls, fixed_step_controls, picard_local, solve
from .regimes import (SweepSpec, classify, fujita_curve, lower_bound_check, necessary_condition,
                      smallness_search, sweep)
from .semigroup import ProbeConfig, SolverFailure, assemble_operator, kernel_probe

log = logging.getLogger("fujitalab")


def _csv(rows, header=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in rows:
        w.writerow([format_value(x) if not isinstance(x, str) else x for x in row])
    return buf.getvalue()


class RunDir:
    """Collects output files and publishes them atomically on success."""

    def __init__(self, path: str):
        self.path = os.path.abspath(path)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def commit(self):
        parent = os.path.dirname(self.path)
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(prefix=".fujitalab-", dir=parent)
        try:
            for name, text in sorted(self.files.items()):
                dest = os.path.join(tmp, name)
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                with open(dest, "w") as fh:
                    fh.write(text)
            if os.path.exists(self.path):
                old = tempfile.mkdtemp(prefix=".fujitalab-old-", dir=parent)
                os.rename(self.path, os.path.join(old, "prev"))
                os.rename(tmp, self.path)
                shutil.rmtree(old)
            else:
                os.rename(tmp, self.path)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise


def _controls(cfg: ExperimentConfig, keep_snapshots: bool = False) -> SolverControls:
    v = cfg.values
    return SolverControls(T_max=v["T_max"], M_blow=v["M_blow"], blow_factor=v["blow_factor"],
                          dt0=v["dt0"], dt_max=v["dt_max"], dt_min=v["dt_min"],
                          adaptive=v["adaptive"], sample_start=v["sample_start"],
                          samples_per_decade=v["samples_per_decade"], keep_snapshots=keep_snapshots)


def _setup(cfg: ExperimentConfig, params: ProblemParams | None = None):
    v = cfg.values
    grid = build_grid(v["N"], v["L"], v["cells"])
    op = assemble_operator(grid, WeightSpec(v["case"], v["alpha"]))
    if params is None:
        return grid, op, None, None
    shape = v["shape"]
    if shape == "auto":
        shape = "critical" if derive_exponents(params).verdict is Verdict.GLOBAL_POSSIBLE else "gaussian"
    u0 = shape_by_name(shape, grid, params, "u", width=v["width"], op=op) * v["scale"]
    vs = v["v_scale"] if v["v_scale"] is not None else v["scale"]
    v0 = shape_by_name(shape, grid, params, "v", width=v["width"], op=op) * vs
    return grid, op, u0, v0


def cmd_exponent(cfg: ExperimentConfig, out: RunDir) -> str:
    params = cfg.params()
    rep = derive_exponents(params)
    res = identity_residuals(params)
    consts = picard_constants(params, 3)
    rows = list(rep.as_dict().items()) + [
        ("identity_residual_u", res.u_identity), ("identity_residual_v", res.v_identity),
        ("p_r1_gt_r2", res.p_r1_gt_r2), ("q_r2_gt_r1", res.q_r2_gt_r1),
    ] + [(f"C_{k}", float(c)) for k, c in enumerate(consts.c_list)]
    out.add("exponents.csv", _csv(rows, ("quantity", "value")))
    ps = np.linspace(0.05, 10, 400)
    curve = fujita_curve(params.r, params.s, params.alpha, params.N, ps)
    out.add("fujita_curve.csv", _csv(curve.tolist(), ("p", "q_critical")))
    return "\n".join(f"{k:>18} = {format_value(val)}" for k, val in rows)


def cmd_kernel_probe(cfg: ExperimentConfig, out: RunDir) -> str:
    v = cfg.values
    _, op, _, _ = _setup(cfg)
    times = tuple(np.geomspace(v["probe_t_min"], v["probe_t_max"], v["probe_points"]))
    rep = kernel_probe(op, ProbeConfig(times=times, steps=v["probe_steps"]))
    out.add("kernel_report.csv", _csv(rep.rows(), ("quantity", "value")))
    t0, s0 = rep.times[0], rep.sup_norms[0]
    line = s0 * (rep.times / t0) ** rep.predicted_exponent
    out.add("kernel_plot.csv", _csv(zip(rep.times, rep.sup_norms, line),
                                    ("t", "sup_norm", "predicted_slope_line")))
    return "\n".join(f"{k:>26} = {format_value(val)}" for k, val in rep.rows())


def cmd_simulate(cfg: ExperimentConfig, out: RunDir) -> str:
    params = cfg.params()
    grid, op, u0, v0 = _setup(cfg, params)
    traj = solve(params, op, u0, v0, _controls(cfg, keep_snapshots=True))
    verdict = classify(traj, params, op)
    out.add("trajectory.csv", traj.to_csv())
    rows = [("termination", str(traj.termination)), ("verdict", verdict.kind.value),
            ("blowup_time", verdict.blowup_time),
            ("decay_fit_u", verdict.decay_fit[0] if verdict.decay_fit else None),
            ("decay_fit_v", verdict.decay_fit_v[0] if verdict.decay_fit_v else None),
            ("predicted_u", verdict.predicted_exponent[0]),
            ("predicted_v", verdict.predicted_exponent[1]),
            ("agreement", verdict.agreement), ("reason", verdict.reason),
            ("steps", traj.steps_taken), ("rejected_steps", traj.rejected_steps)]
    if traj.snapshots:
        ns = necessary_condition(traj, params, op)
        out.add("necessary_condition.csv", _csv(
            zip(ns.t, ns.u_series, ns.v_series, ns.u_running_sup, ns.v_running_sup,
                ns.flagged.astype(int)),
            ("t", "u_series", "v_series", "u_running_sup", "v_running_sup", "flagged")))
        rows += [("necessary_slope_u", ns.u_slope), ("necessary_slope_v", ns.v_slope)]
        for lb in lower_bound_check(params, op, u0, traj):
            rows.append((f"lower_bound_defect_k{lb.k}", lb.min_defect))
        last = traj.snapshots[-1]
        bnd = max(abs(last.u[0]), abs(last.u[-1]))
        rows.append(("boundary_ratio_u", bnd / max(np.abs(last.u).max(), 1e-300)))
    out.add("verdict.csv", _csv(rows, ("quantity", "value")))
    out.add("plot_norms.csv", _csv(
        ((t, su, sv) for t, su, sv in zip(traj.t, traj.column("sup_u"), traj.column("sup_v"))),
        ("t", "sup_u", "sup_v")))
    if cfg["dump_snapshots"]:
        for i, snap in enumerate(traj.snapshots):
            coords = grid.cell_centers
            body = _csv(((*c, a, b) for c, a, b in zip(coords, snap.u, snap.v)),
                        tuple(f"x{j + 1}" for j in range(grid.dim)) + ("u", "v"))
            out.add(f"snapshots/t{i:04d}.csv", f"# t={snap.t!r}\n" + body)
    return "\n".join(f"{k:>22} = {format_value(val)}" for k, val in rows)


def cmd_picard(cfg: ExperimentConfig, out: RunDir) -> str:
    v = cfg.values
    params = cfg.params()
    grid, op, u0, v0 = _setup(cfg, params)
    n = int(v["approx_n"]) if v["approx_n"] is not None else None
    res = picard_local(params, op, u0, v0, v["T"], v["n_max"], levels=v["levels"],
                       tol=v["tol"], approx_n=n)
    rows = [(i + 1, su, sv, res.gaps[i - 1] if i > 0 else None)
            for i, (su, sv) in enumerate(res.sup_at_T)]
    out.add("picard.csv", _csv(rows, ("iterate", "sup_u_T", "sup_v_T", "gap")))
    summary = [("status", res.status), ("iterations", res.iterations),
               ("monotone", res.monotone), ("min_increment", res.min_increment)]
    cols = [grid.cell_centers[:, 0], res.u[-1], res.v[-1]]
    header = ["x1", "u_picard", "v_picard"]
    if n is None:
        traj = solve(params, op, u0, v0, fixed_step_controls(v["T"], v["T"] / v["levels"]))
        fu, fv = traj.final.u.values, traj.final.v.values
        summary.append(("sup_diff_vs_solve", float(max(np.abs(fu - res.u[-1]).max(),
                                                       np.abs(fv - res.v[-1]).max()))))
        cols += [fu, fv]
        header += ["u_solve", "v_solve"]
    out.add("picard_summary.csv", _csv(summary, ("quantity", "value")))
    out.add("picard_profile.csv", _csv(zip(*cols), header))
    return "\n".join(f"{k:>18} = {format_value(val)}" for k, val in summary)


def cmd_sweep(cfg: ExperimentConfig, out: RunDir) -> str:
    v = cfg.values
    spec = SweepSpec(p_values=v["p_values"], q_values=v["q_values"], scales=v["scales"],
                     r=v["r"], s=v["s"], alpha=v["alpha"], N=v["N"], weight_case=v["case"],
                     L=v["L"], cells=v["cells"], shape=v["shape"], controls=_controls(cfg),
                     critical_margin=v["critical_margin"], workers=v["workers"])
    res = sweep(spec)
    out.add("sweep.csv", res.to_csv())
    out.add("sweep_summary.csv", _csv(res.summary.items(), ("quantity", "value")))
    scatter = []
    for row in res.rows:
        if row.get("scale") == min(spec.scales):
            pred = row.get("notes", "").split(";")[0].replace("predicted=", "")
            scatter.append((row["p"], row["q"], row["verdict"], pred))
    out.add("sweep_plot.csv", _csv(scatter, ("p", "q", "verdict_smallest_scale", "predicted")))
    pmax = max(v["p_values"], default=5.0) * 1.5
    curve = fujita_curve(v["r"], v["s"], v["alpha"], v["N"], np.linspace(0.05, pmax, 400))
    out.add("fujita_curve.csv", _csv(curve.tolist(), ("p", "q_critical")))
    return "\n".join(f"{k:>18} = {val}" for k, val in res.summary.items())


def cmd_smallness(cfg: ExperimentConfig, out: RunDir) -> str:
    v = cfg.values
    params = cfg.params()
    _, op, u0, v0 = _setup(cfg, params)
    # shapes at unit amplitude; the search scales them
    base_u = u0 * (1 / v["scale"]) if v["scale"] else u0
    vs = v["v_scale"] if v["v_scale"] is not None else v["scale"]
    base_v = v0 * (1 / vs) if vs else v0
    res = smallness_search(params, op, base_u, base_v, _controls(cfg), c_start=v["c_start"],
                           max_expand=v["max_expand"], bisections=v["bisections"])
    out.add("smallness_history.csv", _csv(res.history, ("scale", "verdict")))
    rows = [("ok", res.ok), ("c_global", res.c_global), ("c_blowup", res.c_blowup),
            ("delta_lower_weak_norm", res.delta_lower), ("delta_upper_weak_norm", res.delta_upper),
            ("monotone", res.monotone), ("message", res.message)]
    out.add("smallness.csv", _csv(rows, ("quantity", "value")))
    if not res.ok:
        raise RuntimeError(res.message)
    return "\n".join(f"{k:>22} = {format_value(val)}" for k, val in rows)


HANDLERS = {
    "exponent": cmd_exponent,
    "kernel-probe": cmd_kernel_probe,
    "simulate": cmd_simulate,
    "picard": cmd_picard,
    "sweep": cmd_sweep,
    "smallness": cmd_smallness,
}

SUMMARIES = {
    "exponent": "derived exponents, predicted regime and the critical curve",
    "kernel-probe": "heat-kernel smoothing rate and Gaussian/semigroup checks",
    "simulate": "solve the system and classify the run",
    "picard": "monotone Picard iteration on a short window",
    "sweep": "classify a (p, q) grid against the predicted dichotomy",
    "smallness": "bracket the data scale separating Global from Blowup",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fujitalab",
        description="Numerical experiments for a degenerate parabolic system with time-weighted sources.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=SUMMARIES[name])
        sp.add_argument("--config", help="key=value configuration file")
        for key, (_, default, text) in KEYS.items():
            if key == "command":
                continue
            sp.add_argument(f"--{key}", dest=f"opt_{key}", metavar="VALUE",
                            help=f"{text} (default {format_value(default)})")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {k[4:]: val for k, val in vars(args).items() if k.startswith("opt_") and val is not None}
    try:
        cfg = parse_config(args.config, args.command, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = RunDir(cfg["out"])
    out.add("manifest.cfg", cfg.manifest())
    try:
        text = HANDLERS[args.command](cfg, out)
    except (RuntimeError, SolverFailure, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out.commit()
    print(text)
    print(f"results written to {out.path}")
    return 0


def main() -> None:
    sys.exit(run_cli())
