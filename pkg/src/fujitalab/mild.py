"""Time integration of the coupled system and the Picard construction of mild solutions."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exponents import ProblemParams, derive_exponents
from .grid import Field, NormKind, norm
from .semigroup import DiffusionOperator, SolverFailure

NEG_TOL = 1e-12


def time_weight_integral(r: float, t0: float, t1: float) -> float:
    """Exact integral of sigma^r over [t0, t1]."""
    if not r > -1:
        raise ValueError(f"r must exceed -1, got {r}")
    if not (0 <= t0 <= t1):
        raise ValueError(f"need 0 <= t0 <= t1, got [{t0}, {t1}]")
    if r == 0:
        return t1 - t0
    return (t1 ** (r + 1) - t0 ** (r + 1)) / (r + 1)


def _ramp_weights(r: float, t0: float, t1: float) -> tuple[float, float]:
    """Product-integration weights for sigma^r against the linear interpolant on [t0, t1].

    Returns (a, b) with  int sigma^r g(sigma) ~ a g(t0) + b g(t1).
    """
    d = t1 - t0
    m0 = time_weight_integral(r, t0, t1)
    m1 = (t1 ** (r + 2) - t0 ** (r + 2)) / (r + 2)  # int sigma^(r+1)
    b = (m1 - t0 * m0) / d
    return m0 - b, b


@dataclass(frozen=True)
class SourceApprox:
    """Globally Lipschitz, nondecreasing stand-in f_n for y -> y^p (p < 1).

    f_n(y) = y^p for y > 1/(2n), linear from (0, 0) to (1/(2n), (1/(2n))^p) below.
    """

    n: int
    p: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("approximation index n must be >= 1")
        if not self.p > 0:
            raise ValueError("exponent must be positive")

    @property
    def knot(self) -> float:
        return 1.0 / (2 * self.n)

    @property
    def lipschitz(self) -> float:
        return self.knot ** (self.p - 1) if self.p < 1 else math.inf

    def __call__(self, y):
        return source_value(self, y)


def source_value(approx: SourceApprox, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("source_value expects nonnegative input")
    e = approx.knot
    out = np.where(y > e, np.maximum(y, e) ** approx.p, y * e ** (approx.p - 1))
    return float(out) if out.ndim == 0 else out


def _power(x: np.ndarray, e: float) -> np.ndarray:
    return np.maximum(x, 0.0) ** e


class TerminationKind(str, Enum):
    REACHED_TMAX = "ReachedTmax"
    BLOWUP_THRESHOLD = "BlowupThreshold"
    STEP_UNDERFLOW = "StepUnderflow"
    SOLVER_FAILURE = "SolverFailure"


@dataclass(frozen=True)
class Termination:
    kind: TerminationKind
    t: float
    message: str = ""

    def __str__(self):
        if self.kind in (TerminationKind.BLOWUP_THRESHOLD, TerminationKind.STEP_UNDERFLOW):
            return f"{self.kind.value}({float(self.t)!r})"
        return self.kind.value


@dataclass
class SystemState:
    t: float
    u: Field
    v: Field
    dt: float
    step_count: int = 0


@dataclass
class SolverControls:
    T_max: float = 100.0
    M_blow: float | None = None
    blow_factor: float = 1e8
    dt0: float = 1e-3
    dt_max: float = math.inf
    dt_min: float | None = None
    adaptive: bool = True
    shrink_above: float = 0.10
    grow_below: float = 0.01
    grow_factor: float = 1.2
    sample_start: float = 1e-2
    samples_per_decade: int = 12
    keep_snapshots: bool = False
    source_coefficient: float = 1.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.T_max > 0:
            raise ValueError("T_max must be positive")
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if self.samples_per_decade < 1:
            raise ValueError("samples_per_decade must be >= 1")
        if not 0 < self.sample_start <= self.T_max:
            raise ValueError("sample_start must lie in (0, T_max]")

    @property
    def dt_floor(self) -> float:
        return self.dt_min if self.dt_min is not None else 1e-12 * self.T_max

    def ladder(self) -> np.ndarray:
        """Geometric sample times from sample_start up to T_max (inclusive)."""
        decades = math.log10(self.T_max / self.sample_start)
        n = max(int(math.ceil(decades * self.samples_per_decade - 1e-9)), 0)
        ts = self.sample_start * 10.0 ** (np.arange(n + 1) / self.samples_per_decade)
        ts = ts[ts < self.T_max * (1 - 1e-12)]
        return np.append(ts, self.T_max)


@dataclass
class Snapshot:
    t: float
    u: np.ndarray
    v: np.ndarray
    free_u: np.ndarray
    free_v: np.ndarray


SAMPLE_COLUMNS = ("t", "sup_u", "sup_v", "weak_u", "weak_v", "mass_u", "mass_v")


@dataclass
class Trajectory:
    params: ProblemParams
    samples: np.ndarray  # shape (n, 7), columns SAMPLE_COLUMNS
    termination: Termination
    final: SystemState
    snapshots: list[Snapshot] = field(default_factory=list)
    steps_taken: int = 0
    rejected_steps: int = 0

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, SAMPLE_COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS + ("status",))
        last = len(self.samples) - 1
        for i, row in enumerate(self.samples):
            w.writerow([repr(float(x)) for x in row] + [str(self.termination) if i == last else "running"])
        if len(self.samples) == 0:
            w.writerow(["" for _ in SAMPLE_COLUMNS] + [str(self.termination)])
        return buf.getvalue()


def _sources(params: ProblemParams, u: np.ndarray, v: np.ndarray,
             approx: SourceApprox | None, approx_q: SourceApprox | None):
    fv = source_value(approx, np.maximum(v, 0.0)) if approx is not None else _power(v, params.p)
    gu = source_value(approx_q, np.maximum(u, 0.0)) if approx_q is not None else _power(u, params.q)
    return fv, gu


def step_imex(state: SystemState, op: DiffusionOperator, params: ProblemParams,
              approx: SourceApprox | None = None, *, dt: float | None = None,
              approx_q: SourceApprox | None = None, source_coefficient: float = 1.0,
              extra: np.ndarray | None = None) -> SystemState | tuple[SystemState, np.ndarray]:
    """One IMEX step: explicit product-integrated sources, then an implicit diffusion solve.

        u+ = (I - dt A)^-1 (u + W_r f(v)),   W_r = int_t^{t+dt} sigma^r dsigma
        v+ = (I - dt A)^-1 (v + W_s g(u))

    `approx` replaces v^p by f_n(v), `approx_q` replaces u^q.  Columns of
    `extra` are carried through the same diffusion solve without sources.
    """
    dt = state.dt if dt is None else dt
    t0, t1 = state.t, state.t + dt
    u, v = state.u.values, state.v.values
    fv, gu = _sources(params, u, v, approx, approx_q)
    wr = source_coefficient * time_weight_integral(params.r, t0, t1)
    ws = source_coefficient * time_weight_integral(params.s, t0, t1)
    cols = [u + wr * fv, v + ws * gu]
    if extra is not None:
        cols += [extra[:, i] for i in range(extra.shape[1])]
    out = op.implicit_step(np.column_stack(cols), dt)
    if out[:, :2].min(initial=0.0) < -NEG_TOL * max(1.0, np.abs(out[:, :2]).max(initial=0.0)):
        raise SolverFailure("nonnegativity lost in the implicit solve")
    new = SystemState(t1, Field(op.grid, out[:, 0]), Field(op.grid, out[:, 1]), dt, state.step_count + 1)
    if extra is not None:
        return new, out[:, 2:]
    return new


def _sample_row(u: Field, v: Field, t: float, r1: float, r2: float) -> list[float]:
    wu = norm(u, r1, NormKind.WEAK) if r1 > 1 else math.nan
    wv = norm(v, r2, NormKind.WEAK) if r2 > 1 else math.nan
    return [t, u.sup(), v.sup(), wu, wv, u.mass(), v.mass()]


def solve(params: ProblemParams, op: DiffusionOperator, u0: Field, v0: Field,
          controls: SolverControls | None = None, approx: SourceApprox | None = None,
          approx_q: SourceApprox | None = None) -> Trajectory:
    """Integrate the system from (u0, v0) until T_max, blow-up or step collapse.

    Adaptive policy: a step whose relative change of ||u||_inf + ||v||_inf exceeds
    `shrink_above` is rejected and retried at half the step; an accepted step
    with change below `grow_below` grows the next step by `grow_factor`.
    Steps are shortened to land exactly on the geometric sample ladder.
    """
    c = controls or SolverControls()
    if u0.values.min(initial=0) < 0 or v0.values.min(initial=0) < 0:
        raise ValueError("initial data must be nonnegative")
    rep = derive_exponents(params)
    r1, r2 = rep.r1_star, rep.r2_star
    size0 = u0.sup() + v0.sup()
    if c.M_blow is not None:
        m_blow = c.M_blow
    else:
        m_blow = c.blow_factor * size0 if size0 > 0 else math.inf

    ladder = c.ladder()
    state = SystemState(0.0, u0.copy(), v0.copy(), min(c.dt0, c.dt_max))
    free = np.column_stack([u0.values, v0.values]) if c.keep_snapshots else None
    rows, snaps = [], []
    k = 0
    steps = rejected = 0
    norm_old = size0
    term = None
    while term is None:
        target = ladder[k]
        dt_try = min(state.dt, target - state.t, c.dt_max)
        landing = dt_try < state.dt
        try:
            res = step_imex(state, op, params, approx, dt=dt_try, approx_q=approx_q,
                            source_coefficient=c.source_coefficient, extra=free)
        except SolverFailure as exc:
            term = Termination(TerminationKind.SOLVER_FAILURE, state.t, str(exc))
            break
        new, new_free = res if free is not None else (res, None)
        norm_new = new.u.sup() + new.v.sup()
        change = abs(norm_new - norm_old) / norm_old if norm_old > 0 else 0.0
        if not math.isfinite(norm_new):
            change = math.inf
        if c.adaptive and change > c.shrink_above:
            rejected += 1
            state.dt = dt_try / 2
            if state.dt < c.dt_floor:
                term = Termination(TerminationKind.STEP_UNDERFLOW, state.t,
                                   f"dt fell below {c.dt_floor:g}")
            continue
        steps += 1
        next_dt = state.dt
        if c.adaptive and change < c.grow_below and not landing:
            next_dt = dt_try * c.grow_factor
        state = new
        state.dt = next_dt
        free = new_free
        norm_old = norm_new
        if norm_new >= m_blow:
            rows.append(_sample_row(state.u, state.v, state.t, r1, r2))
            term = Termination(TerminationKind.BLOWUP_THRESHOLD, state.t,
                               f"||u||+||v|| = {norm_new:.6g} >= {m_blow:.6g}")
            break
        if state.t >= target * (1 - 1e-13):
            state.t = float(target)
            rows.append(_sample_row(state.u, state.v, state.t, r1, r2))
            if c.keep_snapshots:
                snaps.append(Snapshot(state.t, state.u.values.copy(), state.v.values.copy(),
                                      free[:, 0].copy(), free[:, 1].copy()))
            k += 1
            if k == len(ladder):
                term = Termination(TerminationKind.REACHED_TMAX, state.t)
        if steps + rejected > c.max_steps and term is None:
            term = Termination(TerminationKind.SOLVER_FAILURE, state.t, "max_steps exhausted")
    samples = np.asarray(rows, dtype=float).reshape(-1, len(SAMPLE_COLUMNS))
    return Trajectory(params, samples, term, state, snaps, steps, rejected)


@dataclass
class PicardResult:
    times: np.ndarray
    u: np.ndarray  # (levels, cells) final iterate
    v: np.ndarray
    gaps: list[float]
    sup_at_T: list[tuple[float, float]]
    monotone: bool
    min_increment: float
    converged: bool
    iterations: int

    @property
    def status(self) -> str:
        return "Converged" if self.converged else "NonConverged"

    def field_u(self, op: DiffusionOperator, level: int = -1) -> Field:
        return Field(op.grid, self.u[level])

    def field_v(self, op: DiffusionOperator, level: int = -1) -> Field:
        return Field(op.grid, self.v[level])


def _duhamel(op: DiffusionOperator, g: np.ndarray, ts: np.ndarray, r: float) -> np.ndarray:
    """D(t_m) = int_0^{t_m} S(t_m - sigma) sigma^r g(sigma) dsigma on a uniform level set.

    Trapezoidal product integration in sigma with S applied as implicit Euler
    per level: D_m = S D_{m-1} + a S g_{m-1} + b g_m.
    """
    out = np.zeros_like(g)
    dt = ts[1] - ts[0]
    for m in range(1, len(ts)):
        a, b = _ramp_weights(r, ts[m - 1], ts[m])
        out[m] = op.implicit_step(out[m - 1] + a * g[m - 1], dt) + b * g[m]
    return out


def picard_local(params: ProblemParams, op: DiffusionOperator, u0: Field, v0: Field,
                 T: float, n_max: int = 200, *, levels: int = 50, tol: float = 1e-12,
                 approx_n: int | None = None) -> PicardResult:
    """Monotone Picard iteration of the Duhamel system on [0, T].

    u^1 = S(t) u0, v^1 = S(t) v0 and
        u^{n+1}(t) = u^1(t) + int_0^t S(t - s) s^r f(v^n(s)) ds
        v^{n+1}(t) = v^1(t) + int_0^t S(t - s) s^s g(u^n(s)) ds.

    With an exponent below one, `approx_n` is required: that source is replaced
    by f_n and the opposite component's datum is shifted by 1/n.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    approx = approx_q = None
    uu0, vv0 = u0.values.astype(float), v0.values.astype(float)
    if params.p < 1 or params.q < 1:
        if approx_n is None:
            raise ValueError("an exponent below 1 needs approx_n (f_n source approximation)")
        if params.p < 1:
            approx = SourceApprox(approx_n, params.p)
            vv0 = vv0 + 1.0 / approx_n
        if params.q < 1:
            approx_q = SourceApprox(approx_n, params.q)
            uu0 = uu0 + 1.0 / approx_n
    ts = np.linspace(0.0, T, levels + 1)
    dt = ts[1]
    free = np.empty((levels + 1, op.grid.size, 2))
    free[0] = np.column_stack([uu0, vv0])
    for m in range(1, levels + 1):
        free[m] = op.implicit_step(free[m - 1], dt)
    u1, v1 = free[:, :, 0], free[:, :, 1]
    u, v = u1.copy(), v1.copy()
    gaps, sups = [], [(float(u[-1].max()), float(v[-1].max()))]
    monotone, min_inc, converged = True, math.inf, False
    it = 1
    while it < n_max:
        fv, gu = _sources(params, u, v, approx, approx_q)
        un = u1 + _duhamel(op, fv, ts, params.r)
        vn = v1 + _duhamel(op, gu, ts, params.s)
        if not (np.all(np.isfinite(un)) and np.all(np.isfinite(vn))):
            break
        scale = max(1.0, np.abs(un).max(), np.abs(vn).max())
        inc = min((un - u).min(), (vn - v).min())
        min_inc = min(min_inc, inc / scale)
        if inc < -1e-10 * scale:
            monotone = False
        gap = max(np.abs(un[-1] - u[-1]).max(), np.abs(vn[-1] - v[-1]).max())
        u, v = un, vn
        it += 1
        gaps.append(float(gap))
        sups.append((float(u[-1].max()), float(v[-1].max())))
        if gap <= tol * scale:
            converged = True
            break
    return PicardResult(ts, u, v, gaps, sups, monotone, min_inc, converged, it)


def fixed_step_controls(T: float, dt: float, **kw) -> SolverControls:
    """Controls for a non-adaptive run whose only sample is T."""
    return SolverControls(T_max=T, dt0=dt, adaptive=False, sample_start=T, **kw)
