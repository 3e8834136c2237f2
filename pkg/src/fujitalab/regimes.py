"""Run classification, necessary-condition and lower-bound checks, smallness search, sweeps."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .data import shape_by_name
from .exponents import ProblemParams, Verdict, WeightCase, derive_exponents, picard_constants
from .grid import Field, NormKind, WeightSpec, build_grid, norm
from .mild import SolverControls, TerminationKind, Trajectory, solve
from .semigroup import DiffusionOperator, apply_semigroup, assemble_operator, fit_loglog

DECAY_TOL = 0.15
SERIES_SLOPE_MAX = 0.05
MIN_TAIL_SAMPLES = 10


class RegimeKind(str, Enum):
    BLOWUP = "Blowup"
    GLOBAL = "Global"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class RegimeVerdict:
    kind: RegimeKind
    blowup_time: float | None = None
    decay_fit: tuple[float, float] | None = None
    decay_fit_v: tuple[float, float] | None = None
    predicted_exponent: tuple[float, float] = (math.nan, math.nan)
    agreement: bool = False
    reason: str = ""

    def __post_init__(self):
        if self.kind is RegimeKind.BLOWUP and self.blowup_time is None:
            raise ValueError("Blowup verdict needs a blow-up time")
        if self.kind is RegimeKind.GLOBAL and self.decay_fit is None:
            raise ValueError("Global verdict needs a decay fit")


def _tail(traj: Trajectory, decades: float = 1.0) -> np.ndarray:
    t = traj.t
    return t >= t[-1] * 10.0 ** (-decades)


def classify(traj: Trajectory, params: ProblemParams, op: DiffusionOperator | None = None,
             tol: float = DECAY_TOL) -> RegimeVerdict:
    """Blowup / Global / Inconclusive verdict for one finished run.

    Global needs a strictly decreasing sup-norm over the last decade of
    samples; the fitted slope is compared with -gamma1 (u) and -gamma2 (v).
    With `op` and stored snapshots the necessary-condition series must not
    grow either (last-decade log-log slope <= 0.05).
    """
    rep = derive_exponents(params)
    pred = (-rep.gamma1, -rep.gamma2)
    term = traj.termination
    if term.kind in (TerminationKind.BLOWUP_THRESHOLD, TerminationKind.STEP_UNDERFLOW):
        return RegimeVerdict(RegimeKind.BLOWUP, blowup_time=term.t, predicted_exponent=pred,
                             reason=str(term))
    if term.kind is not TerminationKind.REACHED_TMAX:
        return RegimeVerdict(RegimeKind.INCONCLUSIVE, predicted_exponent=pred,
                             reason=f"run ended with {term}: {term.message}")
    su, sv = traj.column("sup_u"), traj.column("sup_v")
    if np.all(su == 0) and np.all(sv == 0):
        return RegimeVerdict(RegimeKind.GLOBAL, decay_fit=(math.nan, math.nan),
                             decay_fit_v=(math.nan, math.nan), predicted_exponent=pred,
                             agreement=True, reason="zero solution")
    tail = _tail(traj)
    if tail.sum() < MIN_TAIL_SAMPLES:
        return RegimeVerdict(RegimeKind.INCONCLUSIVE, predicted_exponent=pred,
                             reason=f"only {int(tail.sum())} tail samples (< {MIN_TAIL_SAMPLES})")
    t = traj.t[tail]
    for name, s in (("u", su[tail]), ("v", sv[tail])):
        if np.any(s <= 0) or np.any(np.diff(s) >= 0):
            return RegimeVerdict(RegimeKind.INCONCLUSIVE, predicted_exponent=pred,
                                 reason=f"sup-norm of {name} not decreasing over the last decade")
    fit_u = fit_loglog(t, su[tail])
    fit_v = fit_loglog(t, sv[tail])
    agree = abs(fit_u[0] - pred[0]) <= tol * rep.gamma1
    reason = "decaying tail"
    if op is not None and traj.snapshots:
        series = necessary_condition(traj, params, op)
        if series.max_slope > SERIES_SLOPE_MAX:
            return RegimeVerdict(RegimeKind.INCONCLUSIVE, predicted_exponent=pred,
                                 reason=f"necessary-condition series grows (slope {series.max_slope:.3g})")
        reason += f"; necessary-condition slope {series.max_slope:.3g}"
    return RegimeVerdict(RegimeKind.GLOBAL, decay_fit=fit_u, decay_fit_v=fit_v,
                         predicted_exponent=pred, agreement=bool(agree), reason=reason)


@dataclass
class NecessarySeries:
    t: np.ndarray
    u_series: np.ndarray
    v_series: np.ndarray
    u_branch: str
    v_branch: str
    u_running_sup: np.ndarray
    v_running_sup: np.ndarray
    u_slope: float
    v_slope: float
    flagged: np.ndarray

    @property
    def max_slope(self) -> float:
        return max(self.u_slope, self.v_slope)


def _series_slope(t: np.ndarray, y: np.ndarray) -> float:
    keep = t >= t[-1] / 10 if len(t) else t
    tt, yy = t[keep], y[keep]
    if len(tt) < 3 or np.all(yy == 0):
        return 0.0
    if np.any(yy <= 0):
        return math.inf
    return fit_loglog(tt, yy)[0]


def necessary_condition(traj: Trajectory, params: ProblemParams, op: DiffusionOperator,
                        steps: int = 20) -> NecessarySeries:
    """Series whose boundedness every global solution must satisfy.

    u branch:  t^gamma1 ||S(t) u(t)||_inf          (q >= 1)
               t^(q gamma1) ||S(t) u(t)^q||_inf     (q < 1)
    v branch:  t^gamma2 ||S(t) v(t)||_inf          (p >= 1)
               t^(p gamma2) ||S(t) v(t)^p||_inf     (p < 1)

    Needs snapshots (SolverControls.keep_snapshots).  Points whose
    self-similar radius t^(1/(2-alpha)) leaves the box are flagged.
    """
    if not traj.snapshots:
        raise ValueError("trajectory has no field snapshots (set keep_snapshots)")
    g1, g2 = params.gamma1, params.gamma2
    p, q = params.p, params.q
    ts, us, vs, flags = [], [], [], []
    for snap in traj.snapshots:
        t = snap.t
        if q >= 1:
            su = t ** g1 * apply_semigroup(op, snap.u, t, steps).sup()
        else:
            su = t ** (q * g1) * apply_semigroup(op, np.maximum(snap.u, 0) ** q, t, steps).sup()
        if p >= 1:
            sv = t ** g2 * apply_semigroup(op, snap.v, t, steps).sup()
        else:
            sv = t ** (p * g2) * apply_semigroup(op, np.maximum(snap.v, 0) ** p, t, steps).sup()
        ts.append(t)
        us.append(su)
        vs.append(sv)
        flags.append(t ** (1 / (2 - params.alpha)) > op.grid.L)
    t = np.asarray(ts)
    us, vs = np.asarray(us), np.asarray(vs)
    return NecessarySeries(
        t=t, u_series=us, v_series=vs,
        u_branch="t^g1 |S(t)u|" if q >= 1 else "t^(q g1) |S(t)u^q|",
        v_branch="t^g2 |S(t)v|" if p >= 1 else "t^(p g2) |S(t)v^p|",
        u_running_sup=np.maximum.accumulate(us), v_running_sup=np.maximum.accumulate(vs),
        u_slope=_series_slope(t, us), v_slope=_series_slope(t, vs),
        flagged=np.asarray(flags, dtype=bool),
    )


@dataclass
class LowerBoundReport:
    k: int
    c_k: float
    min_defect: float
    scale: float
    t_worst: float
    ok: bool


def lower_bound_check(params: ProblemParams, op: DiffusionOperator, u0: Field,
                      traj: Trajectory, ks=(0, 1, 2), steps: int = 200) -> list[LowerBoundReport]:
    """Check u(t) >= C_k t^((beta^k - 1) gamma1) [S(t) u0]^(beta^k) at every snapshot.

    S(t)u0 is taken from the run's own homogeneous evolution when the
    snapshot carries it, so both sides share one time discretization.
    """
    if not traj.snapshots:
        raise ValueError("trajectory has no field snapshots (set keep_snapshots)")
    ks = tuple(ks)
    if max(ks) > 3:
        raise ValueError("k <= 3 (higher iterates vanish below the floating-point floor)")
    consts = picard_constants(params, max(max(ks), 1))
    beta, g1 = params.beta, params.gamma1
    scale = max(u0.sup(), 1e-300)
    out = []
    for k in ks:
        worst, t_worst = math.inf, math.nan
        bk = beta ** k
        for snap in traj.snapshots:
            su0 = snap.free_u if snap.free_u is not None else apply_semigroup(op, u0, snap.t, steps).values
            su0 = np.maximum(su0, 0.0)
            with np.errstate(divide="ignore", under="ignore", over="ignore"):
                log_rhs = consts.log_c[k] + (bk - 1) * g1 * math.log(snap.t) + bk * np.log(su0)
                rhs = np.exp(log_rhs)
            d = float(np.min(snap.u - rhs))
            if d < worst:
                worst, t_worst = d, snap.t
        out.append(LowerBoundReport(k, float(consts.c_list[k]), worst, scale, t_worst,
                                    worst >= -1e-9 * scale))
    return out


@dataclass
class SmallnessResult:
    c_global: float | None
    c_blowup: float | None
    delta_lower: float | None
    delta_upper: float | None
    history: list[tuple[float, str]]
    monotone: bool
    ok: bool
    message: str = ""


def _weak_size(params: ProblemParams, u0: Field, v0: Field) -> float:
    rep = derive_exponents(params)
    return max(norm(u0, rep.r1_star, NormKind.WEAK), norm(v0, rep.r2_star, NormKind.WEAK))


def smallness_search(params: ProblemParams, op: DiffusionOperator, u_shape: Field, v_shape: Field,
                     controls: SolverControls, c_start: float = 1.0, max_expand: int = 8,
                     bisections: int = 6) -> SmallnessResult:
    """Bracket the data-size threshold for global existence by bisection on a scale factor.

    The bracket [c_global, c_blowup] is also reported in weak-norm units,
    max{||c u||_{r1*,inf}, ||c v||_{r2*,inf}}.
    """
    if derive_exponents(params).verdict is not Verdict.GLOBAL_POSSIBLE:
        raise ValueError("smallness search needs parameters with a GlobalPossible verdict")
    cache: dict[float, RegimeKind] = {}
    history: list[tuple[float, str]] = []

    def kind_at(c: float) -> RegimeKind:
        if c not in cache:
            traj = solve(params, op, u_shape * c, v_shape * c, controls)
            cache[c] = classify(traj, params).kind
            history.append((c, cache[c].value))
        return cache[c]

    c_lo = c_hi = None
    c = c_start
    if kind_at(c) is RegimeKind.GLOBAL:
        c_lo = c
        for _ in range(max_expand):
            c *= 2
            if kind_at(c) is not RegimeKind.GLOBAL:
                c_hi = c
                break
            c_lo = c
    else:
        c_hi = c
        for _ in range(max_expand):
            c /= 2
            if kind_at(c) is RegimeKind.GLOBAL:
                c_lo = c
                break
            c_hi = c
    if c_lo is None:
        return SmallnessResult(None, c_hi, None, None, history, True, False,
                               f"no Global verdict down to scale {c:g}; "
                               "T_max or the box may be too small for the decay to show")
    if c_hi is not None:
        for _ in range(bisections):
            mid = math.sqrt(c_lo * c_hi)
            if kind_at(mid) is RegimeKind.GLOBAL:
                c_lo = mid
            else:
                c_hi = mid
    glob = sorted(c for c, k in cache.items() if k is RegimeKind.GLOBAL)
    other = sorted(c for c, k in cache.items() if k is not RegimeKind.GLOBAL)
    monotone = not glob or not other or max(glob) < min(other)
    d_lo = _weak_size(params, u_shape * c_lo, v_shape * c_lo)
    d_hi = _weak_size(params, u_shape * c_hi, v_shape * c_hi) if c_hi is not None else None
    msg = "" if c_hi is not None else f"Global up to scale {c_lo:g}; no upper bracket found"
    return SmallnessResult(c_lo, c_hi, d_lo, d_hi, history, monotone, True, msg)


# ---------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("p", "q", "r", "s", "alpha", "N", "scale", "verdict", "t_blowup",
                 "decay_fit_u", "decay_fit_v", "predicted_u", "predicted_v", "agreement", "notes")


@dataclass
class SweepSpec:
    p_values: tuple[float, ...]
    q_values: tuple[float, ...]
    scales: tuple[float, ...]
    r: float = 0.0
    s: float = 0.0
    alpha: float = 0.0
    N: int = 1
    weight_case: WeightCase = WeightCase.A
    L: float = 1000.0
    cells: int = 4001
    shape: str = "auto"
    controls: SolverControls = field(default_factory=lambda: SolverControls(T_max=1000.0))
    critical_margin: float = 0.02
    workers: int = 1

    def points(self) -> list[tuple[float, float]]:
        return [(p, q) for p in self.p_values for q in self.q_values]


def on_critical_curve(params: ProblemParams, margin: float) -> bool:
    rep = derive_exponents(params)
    return abs(rep.gamma - rep.scaling_dim) <= margin * rep.scaling_dim


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _run_point(spec: SweepSpec, p: float, q: float) -> list[dict]:
    rows = []
    try:
        params = ProblemParams(p, q, spec.r, spec.s, spec.alpha, spec.N, spec.weight_case)
    except ValueError as exc:
        return [dict(p=p, q=q, r=spec.r, s=spec.s, alpha=spec.alpha, N=spec.N, scale=c,
                     verdict="Invalid", notes=str(exc)) for c in spec.scales]
    rep = derive_exponents(params)
    grid = build_grid(spec.N, spec.L, spec.cells)
    op = assemble_operator(grid, WeightSpec(spec.weight_case, spec.alpha))
    shape = spec.shape
    if shape == "auto":
        shape = "critical" if rep.verdict is Verdict.GLOBAL_POSSIBLE else "gaussian"
    u_shape = shape_by_name(shape, grid, params, "u", op=op)
    v_shape = shape_by_name(shape, grid, params, "v", op=op)
    curve = on_critical_curve(params, spec.critical_margin)
    controls = replace(spec.controls, keep_snapshots=True)
    for c in spec.scales:
        base = dict(p=p, q=q, r=spec.r, s=spec.s, alpha=spec.alpha, N=spec.N, scale=c,
                    predicted_u=-rep.gamma1, predicted_v=-rep.gamma2)
        notes = [f"predicted={rep.verdict.value}", f"shape={shape}"]
        if curve:
            notes.append("on_critical_curve")
        try:
            traj = solve(params, op, u_shape * c, v_shape * c, controls)
            v = classify(traj, params, op)
        except Exception as exc:  # one failed run must not stop the sweep
            rows.append(dict(base, verdict="Failed", notes="; ".join(notes + [repr(exc)])))
            continue
        if v.kind is RegimeKind.BLOWUP:
            agree = rep.verdict is Verdict.NO_GLOBAL or None
        elif v.kind is RegimeKind.GLOBAL:
            agree = rep.verdict is Verdict.GLOBAL_POSSIBLE and v.agreement
        else:
            agree = None
        if v.reason and v.kind is not RegimeKind.GLOBAL:
            notes.append(v.reason)
        rows.append(dict(base, verdict=v.kind.value, t_blowup=v.blowup_time,
                         decay_fit_u=v.decay_fit[0] if v.decay_fit else None,
                         decay_fit_v=v.decay_fit_v[0] if v.decay_fit_v else None,
                         agreement=agree, notes="; ".join(notes)))
    return rows


@dataclass
class SweepResult:
    rows: list[dict]
    summary: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in SWEEP_COLUMNS])
        return buf.getvalue()


def _point_agrees(rows: list[dict]) -> bool:
    """NoGlobal: some scale blows up and none looks global.
    GlobalPossible: the smallest scale is Global with the predicted decay."""
    pred = rows[0]["notes"].split(";")[0].split("=")[1]
    rows = sorted(rows, key=lambda r: r["scale"])
    verdicts = [r["verdict"] for r in rows]
    if pred == Verdict.NO_GLOBAL.value:
        return RegimeKind.BLOWUP.value in verdicts and RegimeKind.GLOBAL.value not in verdicts
    return verdicts[0] == RegimeKind.GLOBAL.value and bool(rows[0].get("agreement"))


def sweep(spec: SweepSpec) -> SweepResult:
    """Solve and classify every (p, q, scale) combination; rows come back in grid order."""
    pts = spec.points()
    if spec.workers > 1 and len(pts) > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            chunks = list(ex.map(_run_point, [spec] * len(pts), [p for p, _ in pts], [q for _, q in pts]))
    else:
        chunks = [_run_point(spec, p, q) for p, q in pts]
    rows = [r for ch in chunks for r in ch]
    counted = agreed = excluded = failed = 0
    for ch in chunks:
        if not ch or ch[0]["verdict"] == "Invalid":
            failed += 1
            continue
        if "on_critical_curve" in ch[0]["notes"]:
            excluded += 1
            continue
        if any(r["verdict"] == "Failed" for r in ch):
            failed += 1
        counted += 1
        agreed += bool(_point_agrees(ch))
    summary = dict(points=len(pts), counted=counted, agreed=agreed,
                   excluded_on_curve=excluded, failed=failed)
    return SweepResult(rows, summary)


def fujita_curve(r: float, s: float, alpha: float, N: int, p_values) -> np.ndarray:
    """Points (p, q) on max(gamma1, gamma2) = N/(2 - alpha)."""
    dim = N / (2 - alpha)
    out = []
    for p in p_values:
        q1 = ((r + 1) + (s + 1) * p + dim) / (dim * p)
        den = dim * p - (r + 1)
        q2 = ((s + 1) + dim) / den if den > 0 else math.inf
        out.append((p, max(q1, q2)))
    return np.asarray(out)
