"""Explicit integration of the capillary inverse curvature flow on radial graphs.

The scalar equation is ``d phi / dt = (v / e^phi) * S`` with speed

    S = (1 - cos(theta) <nu, e_{n+1}>) / F - u,     F = H_k / H_{k-1},

and the oblique wall condition supplied by the ghost fills of ``geometry``.
``convexify`` runs mean curvature flow ``d phi / dt = -(v / e^phi) H`` with
the same fills.

Time stepping is the explicit midpoint rule with

    dt = cfl * dbeta^2 / D_max,
    D_max = max (1 - cos(theta) <nu, e_{n+1}>) sum_i dF/dkappa_i / (F^2 e^{2 phi} v),

rejecting and halving on any cone exit or non-finite value.  The stepper is
well balanced: the (scale-invariant, O(dbeta^2)) residual of the unit cap is
subtracted from the tendency, so caps are exact discrete equilibria instead of
drifting slowly along the scaling mode.  On sphere2d the
tendency is low-passed in azimuth on rows near the pole (each Fourier mode is
damped to the rate the beta spacing allows).  The filter is invertible, so
steady states are untouched.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from math import comb
from typing import Callable

import numpy as np

from . import _kernels
from .caps import cap_radial, fit_cap, predicted_limit_radius
from .functionals import QuermassReport, quermass_report
from .geometry import (
    AXISYM,
    SPHERE2D,
    CurvatureData,
    HalfSphereGrid,
    RadialField,
    build_grid,
    check_theta,
    surface_curvature,
)

CHECKPOINT_FORMAT = "capflow-checkpoint"
CHECKPOINT_VERSION = 1


class NumericFailure(RuntimeError):
    """Cone exit, non-finite values or loss of the graph property."""

    def __init__(self, message: str, t: float = float("nan"), location=None):
        super().__init__(message)
        self.t = t
        self.location = location


@dataclass(frozen=True)
class FlowConfig:
    n: int
    k: int
    theta: float
    backend: str = AXISYM
    n_beta: int = 400
    n_alpha: int = 0
    cfl_factor: float = 0.2
    t_max: float = 50.0
    steady_tol: float = 1e-7
    steady_window: int = 50
    monitor_slack: float = 1e-8
    conservation_slack: float = 1e-3
    monotonicity_slack: float = 1e-8
    emit_every: int = 2000
    warmup_steps: int = 10
    max_halvings: int = 20
    polar_filter: bool = True
    well_balanced: bool = True
    abort_on_violation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "theta", check_theta(self.theta))
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"flow index k must lie in 1..{self.n}, got {self.k}")
        if not 0 < self.cfl_factor <= 0.5:
            raise ValueError(f"cfl_factor must lie in (0, 0.5], got {self.cfl_factor}")
        for name in ("steady_tol", "monitor_slack", "conservation_slack", "monotonicity_slack", "t_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.steady_window < 1 or self.emit_every < 1:
            raise ValueError("steady_window and emit_every must be >= 1")
        if self.backend == SPHERE2D and self.n != 2:
            raise ValueError("sphere2d backend requires n = 2")

    def grid(self) -> HalfSphereGrid:
        return build_grid(self.n, self.backend, self.n_beta, self.n_alpha)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# speed and tendency (array route, used as the reference for the kernels)


def _cone_check(curv: CurvatureData, k: int):
    H = curv.H[..., 1 : k + 1]
    ok = np.all(H > 0, axis=-1)
    if not np.all(ok):
        loc = tuple(int(i) for i in np.argwhere(~ok)[0])
        raise NumericFailure(f"curvature left the Garding cone at node {loc}", location=loc)


def speed(curv: CurvatureData, k: int, theta: float) -> np.ndarray:
    """(1 - cos(theta) <nu, e_{n+1}>) / F - u at every node."""
    _cone_check(curv, k)
    w = 1 - np.cos(theta) * curv.tilt
    return w / curv.F(k) - curv.u


def rhs(field: RadialField, config: FlowConfig) -> np.ndarray:
    """d phi / dt from the array pipeline (no polar filter)."""
    curv = surface_curvature(field, config.theta)
    return curv.jet.v * np.exp(-field.phi) * speed(curv, config.k, config.theta)


def mcf_rhs(field: RadialField, theta: float) -> np.ndarray:
    curv = surface_curvature(field, theta)
    return -curv.jet.v * np.exp(-field.phi) * field.grid.n * curv.H[..., 1]


# --------------------------------------------------------------------------
# compiled integrator


class _Integrator:
    """Holds grid constants and dispatches to the compiled kernels.

    ``k = 0`` selects mean curvature flow.
    """

    def __init__(self, grid: HalfSphereGrid, k: int, theta: float, polar_filter: bool = True, balanced: bool = True):
        self.grid = grid
        self.k = k
        self.cos_t = float(np.cos(theta))
        self.sin_t = float(np.sin(theta))
        self.sinb = np.sin(grid.beta)
        self.cosb = np.cos(grid.beta)
        n = grid.n
        self.binom_n = np.array([comb(n, j) for j in range(n + 1)], dtype=float)
        self.binom_nm1 = np.array([comb(n - 1, j) for j in range(n)], dtype=float)
        self._sig = np.empty(n + 1)
        self.filter = None
        if grid.backend == SPHERE2D and polar_filter:
            m = np.arange(grid.n_alpha // 2 + 1)
            da = grid.delta_alpha
            with np.errstate(divide="ignore"):
                ratio = (self.sinb[:, None] * da / (grid.delta_beta * np.sin(m[None, :] * da / 2))) ** 2
            self.filter = np.minimum(1.0, ratio)
            self.filter[:, 0] = 1.0
        self.bal = np.zeros(grid.shape)
        if balanced and k >= 1:
            # truncation residual of the unit cap; rhs is scale invariant, so
            # subtracting it makes every cap an exact discrete steady state
            cap = np.broadcast_to(np.log(cap_radial(1.0, theta, grid.beta_nodes)), grid.shape).copy()
            res = np.empty(grid.shape)
            bad, _ = self.tendency(cap, res)
            if bad >= 0:
                raise NumericFailure("reference cap outside the Garding cone")
            self.bal = res

    def tendency(self, phi: np.ndarray, out: np.ndarray):
        g = self.grid
        if g.backend == AXISYM:
            return _kernels.axisym_rhs(
                phi, self.sinb, self.cosb, g.delta_beta, g.n, self.k, self.cos_t, self.sin_t,
                self.binom_n, self.binom_nm1, self.bal, self._sig, out,
            )
        return _kernels.sphere2d_rhs(
            phi, self.sinb, self.cosb, g.delta_beta, g.delta_alpha, self.k, self.cos_t, self.sin_t, self.bal, out
        )

    def filtered(self, r: np.ndarray) -> np.ndarray:
        if self.filter is None:
            return r
        return np.fft.irfft(np.fft.rfft(r, axis=1) * self.filter, n=r.shape[1], axis=1)

    def location(self, bad: int):
        if self.grid.backend == AXISYM:
            return (int(bad),)
        return tuple(int(i) for i in np.unravel_index(bad, self.grid.shape))

    def advance(self, phi, t, t_max, cfl, warm_left, steady_tol, window, count, nsteps, max_halvings):
        """Same contract as ``_kernels.axisym_advance`` (phi updated in place)."""
        g = self.grid
        if g.backend == AXISYM:
            return _kernels.axisym_advance(
                phi, self.sinb, self.cosb, g.delta_beta, g.n, self.k, self.cos_t, self.sin_t,
                self.binom_n, self.binom_nm1, self.bal, t, t_max, cfl, warm_left, steady_tol, window, count,
                nsteps, max_halvings,
            )
        return self._advance_python(phi, t, t_max, cfl, warm_left, steady_tol, window, count, nsteps, max_halvings)

    def _advance_python(self, phi, t, t_max, cfl, warm_left, steady_tol, window, count, nsteps, max_halvings):
        h2 = self.grid.delta_beta**2
        r1 = np.empty_like(phi)
        r2 = np.empty_like(phi)
        r3 = np.empty_like(phi)
        bad, D = self.tendency(phi, r1)
        m = float(np.max(np.abs(r1)))
        if bad >= 0 or not np.isfinite(m):
            return 3, 0, t, 0.0, count, m, bad
        dt_last = 0.0
        for s in range(nsteps):
            if count >= window:
                return 1, s, t, dt_last, count, m, -1
            if t >= t_max:
                return 2, s, t, dt_last, count, m, -1
            dt = cfl * h2 / D
            if warm_left > s:
                dt *= 0.1
            clipped = False
            if t + dt >= t_max:
                dt = t_max - t
                clipped = True
            ok = False
            f1 = self.filtered(r1)
            for _ in range(max_halvings + 1):
                b2, _ = self.tendency(phi + 0.5 * dt * f1, r2)
                if b2 < 0 and np.all(np.isfinite(r2)):
                    new = phi + dt * self.filtered(r2)
                    b3, D3 = self.tendency(new, r3)
                    if b3 < 0 and np.all(np.isfinite(r3)):
                        ok = True
                        break
                    bad = b3
                else:
                    bad = b2
                dt *= 0.5
                clipped = False
            if not ok:
                return 4, s, t, dt_last, count, m, bad
            phi[...] = new
            r1, r3 = r3, r1
            D = D3
            t = t_max if clipped else t + dt
            dt_last = dt
            m = float(np.max(np.abs(r1)))
            count = count + 1 if m < steady_tol else 0
        return 0, nsteps, t, dt_last, count, m, -1


_STATUS = {0: "running", 1: "converged", 2: "t_max", 3: "numeric_failure", 4: "numeric_failure"}


# --------------------------------------------------------------------------
# state, diagnostics, monitors


@dataclass
class Diagnostics:
    report: QuermassReport
    min_F: float
    max_F: float
    min_kappa: float
    max_kappa: float
    min_ubar: float
    min_ubarF: float
    min_rho: float
    max_rho: float


def diagnostics(field: RadialField, config: FlowConfig, t: float = 0.0, af_pairs=(), curv=None) -> Diagnostics:
    if curv is None:
        curv = surface_curvature(field, config.theta)
    k = config.k
    F = curv.F(k)
    ubar = curv.u / (1 - np.cos(config.theta) * curv.tilt)
    rep = quermass_report(field, config.theta, t=t, af_pairs=af_pairs, minkowski_ks=(k,), curv=curv)
    rho = field.rho
    return Diagnostics(
        report=rep,
        min_F=float(F.min()),
        max_F=float(F.max()),
        min_kappa=float(curv.kappa.min()),
        max_kappa=float(curv.kappa.max()),
        min_ubar=float(ubar.min()),
        min_ubarF=float((ubar * F).min()),
        min_rho=float(rho.min()),
        max_rho=float(rho.max()),
    )


@dataclass
class MonitorStatus:
    name: str
    worst: float = float("inf")  # smallest margin seen; negative beyond tolerance is a violation
    tolerance: float = 0.0
    location: tuple | None = None
    t_worst: float | None = None
    first_violation: float | None = None

    @property
    def ok(self) -> bool:
        return self.first_violation is None

    def record(self, margin: float, location, t: float):
        if margin < self.worst:
            self.worst = float(margin)
            self.location = location
            self.t_worst = float(t)
        if margin < -self.tolerance and self.first_violation is None:
            self.first_violation = float(t)


@dataclass
class MonitorBaseline:
    """Initial-data constants the monitors compare against."""

    eps: float
    max_F: float
    min_ubarF: float
    min_ubar: float
    r_inner: float
    r_outer: float
    V: np.ndarray


@dataclass
class MonitorReport:
    baseline: MonitorBaseline
    entries: dict = field(default_factory=dict)
    last_V: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries.values())

    def violations(self) -> list:
        return [e for e in self.entries.values() if not e.ok]

    def summary(self) -> dict:
        return {
            name: {
                "worst_margin": e.worst,
                "tolerance": e.tolerance,
                "location": list(e.location) if e.location is not None else None,
                "t_worst": e.t_worst,
                "first_violation": e.first_violation,
            }
            for name, e in self.entries.items()
        }


def _argmin(a: np.ndarray):
    idx = np.unravel_index(int(np.argmin(a)), a.shape)
    return float(a[idx]), tuple(int(i) for i in idx)


def monitor_baseline(field: RadialField, config: FlowConfig) -> MonitorBaseline:
    curv = surface_curvature(field, config.theta)
    F = curv.F(config.k)
    ubar = curv.u / (1 - np.cos(config.theta) * curv.tilt)
    q = cap_radial(1.0, config.theta, field.grid.beta_nodes)
    ratio = field.rho / q
    rep = quermass_report(field, config.theta, curv=curv, minkowski_ks=())
    return MonitorBaseline(
        eps=float(np.min(curv.kappa[..., 0] / F)),
        max_F=float(F.max()),
        min_ubarF=float((ubar * F).min()),
        min_ubar=float(ubar.min()),
        r_inner=float(ratio.min()),
        r_outer=float(ratio.max()),
        V=rep.V.copy(),
    )


def monitors(state: "FlowState", config: FlowConfig, initial_state: "FlowState", report: MonitorReport | None = None):
    """Evaluate every monitor on ``state``; accumulates into ``report`` when given."""
    if report is None:
        report = MonitorReport(monitor_baseline(initial_state.field, config))
    b = report.baseline
    s = config.monitor_slack
    field_ = state.field
    curv = surface_curvature(field_, config.theta)
    F = curv.F(config.k)
    ubar = curv.u / (1 - np.cos(config.theta) * curv.tilt)
    q = cap_radial(1.0, config.theta, field_.grid.beta_nodes)
    rho = field_.rho
    t = state.t

    def entry(name, tol):
        if name not in report.entries:
            report.entries[name] = MonitorStatus(name, tolerance=tol)
        return report.entries[name]

    entry("convexity", s * b.max_F).record(*_argmin(curv.kappa[..., 0] - b.eps * F), t)
    worst, loc = _argmin(-F)
    entry("max_F", s * b.max_F).record(b.max_F + worst, loc, t)
    worst, loc = _argmin(ubar * F)
    entry("min_ubarF", s * b.min_ubarF).record(worst - b.min_ubarF, loc, t)
    worst, loc = _argmin(ubar)
    entry("min_ubar", s * b.min_ubar).record(worst - b.min_ubar, loc, t)
    entry("barrier_inner", s * b.r_inner).record(*_argmin(rho - b.r_inner * q), t)
    entry("barrier_outer", s * b.r_outer).record(*_argmin(b.r_outer * q - rho), t)

    rep = state.diagnostics.report if state.diagnostics is not None else quermass_report(
        field_, config.theta, curv=curv, minkowski_ks=()
    )
    V = rep.V
    k = config.k
    entry(f"conservation_V{k}", config.conservation_slack * abs(b.V[k])).record(-abs(V[k] - b.V[k]), None, t)
    if report.last_V is not None:
        for l in range(k):
            prev = report.last_V[l]
            entry(f"monotone_V{l}", config.monotonicity_slack * abs(prev)).record(V[l] - prev, None, t)
    report.last_V = V.copy()
    return report


@dataclass
class FlowState:
    t: float
    field: RadialField
    dt_last: float = 0.0
    step_count: int = 0
    steady_count: int = 0
    max_rhs: float = float("nan")
    diagnostics: Diagnostics | None = None
    monitors: MonitorReport | None = None

    def copy(self) -> "FlowState":
        return FlowState(self.t, self.field.copy(), self.dt_last, self.step_count, self.steady_count, self.max_rhs)


def initial_state(field: RadialField, config: FlowConfig) -> FlowState:
    _check_grid(field, config)
    state = FlowState(0.0, field.copy())
    integ = _integrator(field.grid, config.k, config)
    r = np.empty(field.grid.shape)
    bad, _ = integ.tendency(state.field.phi, r)
    if bad >= 0:
        raise NumericFailure("initial data outside the Garding cone", t=0.0, location=integ.location(bad))
    state.max_rhs = float(np.max(np.abs(r)))
    state.steady_count = 1 if state.max_rhs < config.steady_tol else 0
    return state


def _check_grid(field: RadialField, config: FlowConfig):
    g = field.grid
    if (g.n, g.backend, g.n_beta) != (config.n, config.backend, config.n_beta) or (
        g.backend == SPHERE2D and g.n_alpha != config.n_alpha
    ):
        raise ValueError(f"field grid {g.spec()} does not match the flow configuration")


_integrators: dict = {}


def _integrator(grid: HalfSphereGrid, k: int, config: FlowConfig) -> _Integrator:
    key = (grid.n, grid.backend, grid.n_beta, grid.n_alpha, k, config.theta, config.polar_filter, config.well_balanced)
    if key not in _integrators:
        _integrators[key] = _Integrator(grid, k, config.theta, config.polar_filter, config.well_balanced)
    return _integrators[key]


def _advance(state: FlowState, config: FlowConfig, nsteps: int, t_max: float | None = None, k=None) -> tuple:
    """Run up to ``nsteps`` steps; returns (new state, kernel status)."""
    k = config.k if k is None else k
    integ = _integrator(state.field.grid, k, config)
    phi = state.field.phi.copy()
    status, steps, t, dt_last, count, m, bad = integ.advance(
        phi,
        float(state.t),
        float(config.t_max if t_max is None else t_max),
        float(config.cfl_factor),
        int(config.warmup_steps - state.step_count),
        float(config.steady_tol) if k else -1.0,
        int(config.steady_window),
        int(state.steady_count),
        int(nsteps),
        int(config.max_halvings),
    )
    if status in (3, 4):
        loc = integ.location(bad) if bad >= 0 else None
        what = "cone exit or non-finite tendency" if status == 3 else f"{config.max_halvings} consecutive step rejections"
        raise NumericFailure(f"{what} at t={t:.6g}, node {loc}", t=t, location=loc)
    new = FlowState(
        t=float(t),
        field=RadialField(state.field.grid, phi),
        dt_last=float(dt_last) if steps else state.dt_last,
        step_count=state.step_count + int(steps),
        steady_count=int(count),
        max_rhs=float(m),
    )
    return new, status


def step(state: FlowState, config: FlowConfig) -> FlowState:
    """One accepted midpoint step."""
    _check_grid(state.field, config)
    new, _ = _advance(state, replace(config, steady_window=1 << 30), 1, t_max=np.inf)
    return new


# --------------------------------------------------------------------------
# driver


@dataclass
class CapFit:
    r_fit: float
    sup_error: float
    r_predicted: float
    V_k0: float


@dataclass
class RunResult:
    state: FlowState
    monitors: MonitorReport
    fit: CapFit | None
    status: str  # converged | t_max | numeric_failure | monitor_violation
    failure: str | None = None

    def __iter__(self):
        return iter((self.state, self.monitors, self.fit))


def run_to_steady(
    initial: RadialField | FlowState,
    config: FlowConfig,
    on_emit: Callable[[FlowState], None] | None = None,
    af_pairs=(),
    baseline_field: RadialField | None = None,
    max_steps: int | None = None,
) -> RunResult:
    """Step until max|d phi/dt| < steady_tol for steady_window steps or t >= t_max.

    ``initial`` may be a checkpointed ``FlowState``; pass the original field as
    ``baseline_field`` so the monitors keep their time-zero references.
    """
    if isinstance(initial, FlowState):
        state = initial
        _check_grid(state.field, config)
        base = baseline_field if baseline_field is not None else state.field
    else:
        state = initial_state(initial, config)
        base = initial
    report = MonitorReport(monitor_baseline(base, config))
    budget = np.inf if max_steps is None else max_steps

    def emit(st):
        st.diagnostics = diagnostics(st.field, config, st.t, af_pairs)
        monitors(st, config, None, report)
        st.monitors = report
        if on_emit is not None:
            on_emit(st)

    emit(state)
    status = "running"
    failure = None
    while status == "running":
        if report.violations() and config.abort_on_violation:
            status = "monitor_violation"
            v = report.violations()[0]
            failure = f"monitor {v.name} violated at t={v.first_violation:.6g}"
            break
        nsteps = int(min(config.emit_every, budget - state.step_count))
        if nsteps <= 0:
            status = "t_max"
            break
        try:
            state, code = _advance(state, config, nsteps)
        except NumericFailure as exc:
            status = "numeric_failure"
            failure = str(exc)
            break
        status = _STATUS[code]
        emit(state)
    if status == "running":
        status = "t_max"
    if status == "converged" and not report.ok and config.abort_on_violation:
        status = "monitor_violation"
    fit = None
    if status != "numeric_failure":
        r_fit, sup = fit_cap(state.field, config.theta)
        Vk0 = float(report.baseline.V[config.k])
        fit = CapFit(r_fit, sup, predicted_limit_radius(Vk0, config.k, config.n, config.theta), Vk0)
    return RunResult(state, report, fit, status, failure)


def convexify(initial: RadialField, config: FlowConfig, t_stop: float) -> RadialField:
    """Mean curvature flow with the capillary fills until ``t_stop``."""
    if not t_stop >= 0:
        raise ValueError("t_stop must be nonnegative")
    _check_grid(initial, config)
    state = FlowState(0.0, initial.copy())
    while state.t < t_stop:
        state, _ = _advance(state, config, 100000, t_max=t_stop, k=0)
        curv = surface_curvature(state.field, config.theta)
        if np.any(curv.u <= 0):
            raise NumericFailure("support function became nonpositive", t=state.t)
    return state.field


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: FlowState, config: FlowConfig, path) -> None:
    """Self-describing JSON record; floats are written with round-trip precision."""
    rec = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "grid": state.field.grid.spec(),
        "config": config.to_dict(),
        "t": state.t,
        "dt_last": state.dt_last,
        "step_count": state.step_count,
        "steady_count": state.steady_count,
        "max_rhs": state.max_rhs,
        "phi": state.field.phi.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(rec, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple:
    with open(path) as fh:
        rec = json.load(fh)
    if rec.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    if rec.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {rec.get('version')}")
    g = rec["grid"]
    grid = build_grid(g["n"], g["backend"], g["n_beta"], g["n_alpha"])
    config = FlowConfig(**rec["config"])
    state = FlowState(
        t=rec["t"],
        field=RadialField(grid, np.array(rec["phi"], dtype=float)),
        dt_last=rec["dt_last"],
        step_count=rec["step_count"],
        steady_count=rec["steady_count"],
        max_rhs=rec["max_rhs"],
    )
    return state, config
