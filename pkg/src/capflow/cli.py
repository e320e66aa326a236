"""Command line runner: flows, cap tables, AF audits, Minkowski ladders, meshes.

Exit codes: 0 success, 2 configuration error, 3 violation, 4 not converged,
5 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from math import pi
from pathlib import Path

import numpy as np

from . import __version__
from .caps import SphericalCap, cap_field, cap_quermass, perturbation
from .flow import (
    FlowConfig,
    FlowState,
    NumericFailure,
    convexify,
    load_checkpoint,
    run_to_steady,
    save_checkpoint,
)
from .functionals import minkowski_inequality_gap, minkowski_residual, quermass_report
from .geometry import AXISYM, SPHERE2D, RadialField, build_grid, surface_curvature, wall_value

log = logging.getLogger("capflow")

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_NOT_CONVERGED, EXIT_NUMERIC = 0, 2, 3, 4, 5
SERIES_SCHEMA = "capflow-series/1"
AUDIT_SCHEMA = "capflow-af-audit/1"
TABLE_SCHEMA = "capflow-cap-table/1"
LADDER_SCHEMA = "capflow-minkowski-ladder/1"
REPORT_SCHEMA = 1
MONITOR_FLAGS = ("convexity", "max_F", "min_ubarF", "min_ubar", "barrier", "conservation", "monotone")

_THETAS = {"pi/2": pi / 2, "pi/3": pi / 3, "pi/4": pi / 4, "pi/6": pi / 6}
_FLOW_KEYS = set(FlowConfig.__dataclass_fields__) - {"theta"}
_RUN_KEYS = _FLOW_KEYS | {"theta", "initial", "seed", "out", "export_mesh", "af_pairs", "t_stop", "mesh_n_alpha"}


class ConfigError(ValueError):
    pass


def parse_theta(value) -> float:
    if isinstance(value, str):
        key = value.strip().replace(" ", "")
        if key in _THETAS:
            return _THETAS[key]
        try:
            return float(key)
        except ValueError:
            raise ConfigError(f"cannot parse contact angle {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"cannot parse contact angle {value!r}")
    return float(value)


def fmt(x) -> str:
    """17 significant digits in scientific notation."""
    return f"{float(x):.16e}"


def _dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


# --------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def flow_config(cfg: dict) -> FlowConfig:
    unknown = set(cfg) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("n", "k", "theta"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    kwargs = {key: cfg[key] for key in _FLOW_KEYS if key in cfg}
    try:
        return FlowConfig(theta=parse_theta(cfg["theta"]), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _seed(cfg: dict, override) -> int:
    seed = override if override is not None else cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return seed


def initial_field(cfg: dict, fc: FlowConfig, seed: int) -> RadialField:
    grid = fc.grid()
    spec = cfg.get("initial", {"type": "cap", "r": 1.0})
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("initial must be an object with a 'type'")
    kind = spec["type"]
    try:
        if kind == "cap":
            return cap_field(grid, float(spec.get("r", 1.0)), fc.theta)
        if kind == "perturbed_cap":
            modes = [(int(f), float(a)) for f, a in spec.get("modes", [])]
            base = cap_field(grid, float(spec.get("r", 1.0)), fc.theta)
            return RadialField(grid, base.phi + perturbation(grid, modes, seed))
        if kind == "file":
            state, _ = load_checkpoint(spec["path"])
            if state.field.grid.spec() != grid.spec():
                raise ConfigError("checkpoint grid does not match the configuration")
            return state.field
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"bad initial data: {exc}") from None
    raise ConfigError(f"unknown initial type {kind!r}")


def _af_pairs(cfg: dict, n: int):
    pairs = cfg.get("af_pairs")
    if pairs is None:
        return [(k, l) for k in range(1, n + 1) for l in range(k)]
    try:
        out = [(int(k), int(l)) for k, l in pairs]
    except (TypeError, ValueError):
        raise ConfigError("af_pairs must be a list of [k, l] pairs") from None
    for k, l in out:
        if not 0 <= l < k <= n:
            raise ConfigError(f"af pair ({k}, {l}) needs 0 <= l < k <= {n}")
    return out


def _min_kappa(field: RadialField, theta: float) -> float:
    return float(surface_curvature(field, theta).kappa.min())


# --------------------------------------------------------------------------
# run


def series_columns(n: int, k: int, pairs) -> list:
    cols = ["t", "dt"] + [f"V_{m}" for m in range(n + 2)]
    cols += ["minF", "maxF", "min_kappa", "max_kappa", "min_ubar", f"minkowski_residual_{k}"]
    cols += [f"af_gap_{a}_{b}" for a, b in pairs]
    cols += ["max_rhs"] + [f"flag_{name}" for name in MONITOR_FLAGS]
    return cols


def _flags(report) -> dict:
    out = dict.fromkeys(MONITOR_FLAGS, 0)
    for name, entry in report.entries.items():
        if entry.ok:
            continue
        for flag in MONITOR_FLAGS:
            if name == flag or name.startswith(flag + "_"):
                out[flag] = 1
    return out


def series_row(state, k: int, pairs) -> list:
    d = state.diagnostics
    rep = d.report
    vals = [state.t, state.dt_last, *rep.V, d.min_F, d.max_F, d.min_kappa, d.max_kappa, d.min_ubar]
    vals.append(rep.minkowski_residual[k])
    vals += [rep.af_gap[p] for p in pairs]
    vals.append(state.max_rhs)
    row = [fmt(v) for v in vals]
    flags = _flags(state.monitors)
    return row + [str(flags[f]) for f in MONITOR_FLAGS]


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    fc = flow_config(cfg)
    seed = _seed(cfg, args.seed)
    pairs = _af_pairs(cfg, fc.n)
    field0 = initial_field(cfg, fc, seed)
    mk = _min_kappa(field0, fc.theta)
    if not mk > 0:
        raise ConfigError(f"initial data not strictly convex (min kappa {mk:.3e}); reduce the perturbation")
    export = bool(cfg.get("export_mesh", False))
    if export and fc.n != 2:
        raise ConfigError("export_mesh requires n = 2")
    out = Path(args.out or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "series.csv", "w", newline="") as fh:
        fh.write(f"# schema={SERIES_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(series_columns(fc.n, fc.k, pairs))

        def on_emit(state):
            writer.writerow(series_row(state, fc.k, pairs))
            if not args.quiet:
                log.info("t=%.6g steps=%d max_rhs=%.3e", state.t, state.step_count, state.max_rhs)

        result = run_to_steady(field0, fc, on_emit=on_emit, af_pairs=pairs)

    state = result.state
    save_checkpoint(state, fc, out / "final_state.json")
    code = {
        "converged": EXIT_OK,
        "t_max": EXIT_NOT_CONVERGED,
        "numeric_failure": EXIT_NUMERIC,
        "monitor_violation": EXIT_VIOLATION,
    }[result.status]
    record = {
        "type": "report",
        "schema_version": REPORT_SCHEMA,
        "capflow_version": __version__,
        "status": result.status,
        "seed": seed,
        "config": fc.to_dict(),
        "t": state.t,
        "steps": state.step_count,
        "max_rhs": state.max_rhs,
        "monitors": result.monitors.summary(),
        "monitors_ok": result.monitors.ok,
    }
    if state.diagnostics is not None:
        rep = state.diagnostics.report
        record["V"] = rep.V.tolist()
        record["af_gaps"] = {f"{a}_{b}": g for (a, b), g in rep.af_gap.items()}
    if result.fit is not None:
        record["fitted_cap"] = {"r_fit": result.fit.r_fit, "sup_error": result.fit.sup_error}
        record["r_infinity"] = result.fit.r_predicted
        record["r_error"] = abs(result.fit.r_fit - result.fit.r_predicted)
        record["V_k_initial"] = result.fit.V_k0
    lines = [_dump_line(record)]
    if code != EXIT_OK:
        msg = result.failure or f"run ended with status {result.status}"
        lines.append(_dump_line({"type": "failure", "exit_code": code, "status": result.status, "message": msg}))
        log.error(msg)
    (out / "report.json").write_text("\n".join(lines) + "\n")
    if export and code == EXIT_OK:
        write_obj(state.field, fc.theta, out / "mesh.obj", int(cfg.get("mesh_n_alpha", 64)))
    return code


# --------------------------------------------------------------------------
# cap table


def cmd_cap_table(args) -> int:
    if not args.theta or not args.r:
        raise ConfigError("theta and r lists must be non-empty")
    thetas = [parse_theta(t) for t in args.theta]
    rs = [float(r) for r in args.r]
    if any(not r > 0 for r in rs):
        raise ConfigError("radii must be positive")
    try:
        grid = build_grid(args.n, AXISYM, args.n_beta)
        caps = [SphericalCap(r, th) for th in thetas for r in rs]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = []
    for cap in caps:
        V = quermass_report(cap_field(grid, cap.r, cap.theta), cap.theta, minkowski_ks=()).V
        for m in range(args.n + 2):
            exact = cap_quermass(cap, args.n, m)
            rows.append([str(args.n), fmt(cap.theta), fmt(cap.r), str(m), fmt(V[m]), fmt(exact), fmt(V[m] / exact - 1)])
    out = _open_out(args, "cap_table.csv")
    try:
        out.write(f"# schema={TABLE_SCHEMA}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "theta", "r", "m", "numeric", "exact", "rel_error"])
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _open_out(args, name):
    if args.out is None:
        return sys.stdout
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return open(d / name, "w", newline="")


# --------------------------------------------------------------------------
# AF audit

AF_DEFAULTS = {
    "n": 2,
    "thetas": ["pi/2", "pi/3"],
    "samples": 100,
    "n_beta": 800,
    "max_amplitude": 0.22,
    "max_frequency": 3,
    "r_range": [0.8, 1.25],
    "force_caps": False,
    "violation_tol": 1e-8,
    "equality_tol": 1e-6,
    "convexify_t": 0.01,
    "seed": 0,
    "af_pairs": None,
}


def _sample_field(grid, theta, rng, opts):
    r = float(rng.uniform(*opts["r_range"]))
    if opts["force_caps"]:
        return r, cap_field(grid, r, theta), []
    count = int(rng.integers(1, 4))
    modes = []
    for _ in range(count):
        # amplitude envelope ~ 1/m^2 keeps phi'' bounded across frequencies
        m = int(rng.integers(1, opts["max_frequency"] + 1))
        # bounded away from zero so every sample is a resolvable distance from the caps
        modes.append((m, float(rng.uniform(0.3, 1.0) * opts["max_amplitude"] / (count * m**2))))
    sub = int(rng.integers(0, 2**63))
    base = cap_field(grid, r, theta)
    return r, RadialField(grid, base.phi + perturbation(grid, modes, sub)), modes


def cmd_af_check(args) -> int:
    opts = dict(AF_DEFAULTS)
    if args.config:
        cfg = load_config(args.config)
        unknown = set(cfg) - set(AF_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown af-check keys: {sorted(unknown)}")
        opts.update(cfg)
    if args.seed is not None:
        opts["seed"] = args.seed
    seed = _seed(opts, None)
    n = int(opts["n"])
    if opts["samples"] < 1:
        raise ConfigError("samples must be >= 1")
    pairs = _af_pairs(opts, n)
    thetas = [parse_theta(t) for t in opts["thetas"]]
    try:
        grid = build_grid(n, AXISYM, int(opts["n_beta"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rng = np.random.default_rng(seed)
    rows = []
    worst, best = np.inf, -np.inf
    for theta in thetas:
        fc = FlowConfig(n=n, k=1, theta=theta, n_beta=grid.n_beta, cfl_factor=0.4)
        for i in range(int(opts["samples"])):
            r, field, modes = _sample_field(grid, theta, rng, opts)
            convexified = 0
            while _min_kappa(field, theta) <= 0:
                if convexified >= 20:
                    raise NumericFailure(f"sample {i} did not become strictly convex")
                field = convexify(field, fc, float(opts["convexify_t"]))
                convexified += 1
            rep = quermass_report(field, theta, af_pairs=pairs, minkowski_ks=())
            gaps = [rep.af_gap[p] for p in pairs] + [minkowski_inequality_gap(rep)]
            worst = min(worst, min(gaps))
            best = max(best, max(gaps))
            rows.append([str(i), fmt(theta), fmt(r), str(len(modes)), str(convexified), fmt(_min_kappa(field, theta))] + [fmt(g) for g in gaps])
    out = _open_out(args, "af_audit.csv")
    try:
        out.write(f"# schema={AUDIT_SCHEMA}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["sample", "theta", "r", "modes", "convexify_passes", "min_kappa"] + [f"af_gap_{a}_{b}" for a, b in pairs] + ["minkowski_gap"])
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    if opts["force_caps"]:
        # equality case: the gaps vanish up to truncation error
        if max(abs(worst), abs(best)) > opts["equality_tol"]:
            log.error("cap gaps exceed %.1e: range [%.3e, %.3e]", opts["equality_tol"], worst, best)
            return EXIT_VIOLATION
    elif worst < -opts["violation_tol"]:
        log.error("AF audit violation: min gap %.3e", worst)
        return EXIT_VIOLATION
    if not args.quiet:
        log.info("AF audit: %d samples, min gap %.3e", len(rows), worst)
    return EXIT_OK


# --------------------------------------------------------------------------
# Minkowski ladder

LADDER_DEFAULTS = {
    "n": 2,
    "theta": "pi/3",
    "backend": AXISYM,
    "ladder": [100, 200, 400, 800],
    "alpha_ratio": 2,
    "r": 1.0,
    "modes": [[1, 0.03], [2, 0.01]],
    "seed": 0,
    "min_order": 1.7,
}


def minkowski_ladder(opts: dict):
    """Residuals (one row per resolution, one column per k) and the observed orders."""
    n = int(opts["n"])
    theta = parse_theta(opts["theta"])
    res = []
    for nb in opts["ladder"]:
        na = int(opts["alpha_ratio"] * nb // 2) * 2 if opts["backend"] == SPHERE2D else 0
        grid = build_grid(n, opts["backend"], int(nb), na)
        modes = [(int(f), float(a)) for f, a in opts["modes"]]
        base = cap_field(grid, float(opts["r"]), theta)
        field = RadialField(grid, base.phi + perturbation(grid, modes, int(opts["seed"])))
        curv = surface_curvature(field, theta)
        res.append([minkowski_residual(curv, field, theta, k) for k in range(1, n + 1)])
    res = np.array(res)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(np.abs(res[:-1]) / np.abs(res[1:]))
    return res, orders


def cmd_minkowski_check(args) -> int:
    opts = dict(LADDER_DEFAULTS)
    if args.config:
        cfg = load_config(args.config)
        unknown = set(cfg) - set(LADDER_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown minkowski-check keys: {sorted(unknown)}")
        opts.update(cfg)
    if args.seed is not None:
        opts["seed"] = args.seed
    ladder = [int(x) for x in opts["ladder"]]
    if len(ladder) < 2 or any(b != 2 * a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("ladder must be at least two doubling resolutions")
    try:
        res, orders = minkowski_ladder(opts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n = res.shape[1]
    out = _open_out(args, "minkowski.csv")
    try:
        out.write(f"# schema={LADDER_SCHEMA}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n_beta"] + [f"residual_{k}" for k in range(1, n + 1)] + [f"order_{k}" for k in range(1, n + 1)])
        for i, nb in enumerate(ladder):
            ords = orders[i - 1] if i else [np.nan] * n
            w.writerow([str(nb)] + [fmt(x) for x in res[i]] + [fmt(x) for x in ords])
    finally:
        if out is not sys.stdout:
            out.close()
    # residuals already at round-off (hemispheres) carry no order information
    floor = np.max(np.abs(res[-1])) < 1e-12
    if floor:
        log.info("residuals at round-off floor; order test skipped")
        return EXIT_OK
    if np.any(~(orders[-1] >= opts["min_order"])):
        log.error("Minkowski residual order %s below %.2f", orders[-1], opts["min_order"])
        return EXIT_VIOLATION
    return EXIT_OK


# --------------------------------------------------------------------------
# mesh export


def mesh_arrays(field: RadialField, theta: float, n_alpha: int = 64):
    """Vertices (pole, rings by beta, wall ring) and 0-based triangles."""
    grid = field.grid
    if grid.n != 2:
        raise ConfigError("mesh export needs n = 2")
    if grid.backend == AXISYM:
        alpha = np.arange(n_alpha) * (2 * pi / n_alpha)
        phi = np.repeat(field.phi[:, None], n_alpha, axis=1)
        wall = np.full(n_alpha, float(wall_value(field, theta)))
    else:
        alpha = grid.alpha
        n_alpha = grid.n_alpha
        phi = field.phi
        wall = wall_value(field, theta)
    # phi is even through the pole: fit a + b beta^2 to the first two rows
    pole = float(np.mean((9 * phi[0] - phi[1]) / 8))
    betas = np.concatenate([grid.beta, [pi / 2]])
    rings = np.vstack([phi, wall[None, :]])
    rho = np.exp(rings)
    sb, cb = np.sin(betas)[:, None], np.cos(betas)[:, None]
    ring_xyz = np.stack([rho * sb * np.cos(alpha)[None, :], rho * sb * np.sin(alpha)[None, :], rho * cb], axis=-1)
    verts = np.vstack([[[0.0, 0.0, np.exp(pole)]], ring_xyz.reshape(-1, 3)])
    faces = []
    idx = lambda i, j: 1 + i * n_alpha + (j % n_alpha)  # noqa: E731
    for j in range(n_alpha):
        faces.append((0, idx(0, j), idx(0, j + 1)))
    for i in range(len(betas) - 1):
        for j in range(n_alpha):
            a, b, c, d = idx(i, j), idx(i, j + 1), idx(i + 1, j), idx(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    return verts, np.array(faces, dtype=int)


def write_obj(field: RadialField, theta: float, path, n_alpha: int = 64) -> None:
    verts, faces = mesh_arrays(field, theta, n_alpha)
    with open(path, "w") as fh:
        fh.write(f"# capflow {__version__} mesh, theta={fmt(theta)}\n")
        for x, y, z in verts:
            fh.write(f"v {fmt(x)} {fmt(y)} {fmt(z)}\n")
        for a, b, c in faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def cmd_export_mesh(args) -> int:
    try:
        state, fc = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}") from None
    if fc.n != 2:
        raise ConfigError(f"mesh export needs n = 2, checkpoint has n = {fc.n}")
    write_obj(state.field, fc.theta, args.path, args.n_alpha)
    return EXIT_OK


# --------------------------------------------------------------------------
# convexify


def cmd_convexify(args) -> int:
    cfg = load_config(args.config)
    t_stop = cfg.get("t_stop", 0.01)
    cfg = {key: val for key, val in cfg.items() if key != "t_stop"}
    cfg.setdefault("k", 1)
    fc = flow_config(cfg)
    seed = _seed(cfg, args.seed)
    field0 = initial_field(cfg, fc, seed)
    if not isinstance(t_stop, (int, float)) or not t_stop >= 0:
        raise ConfigError("t_stop must be a nonnegative number")
    out = Path(args.out or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    before = _min_kappa(field0, fc.theta)
    record = {"type": "convexify", "schema_version": REPORT_SCHEMA, "t_stop": t_stop, "min_kappa_initial": before}
    try:
        field = convexify(field0, fc, float(t_stop))
    except NumericFailure as exc:
        lines = [_dump_line(record), _dump_line({"type": "failure", "exit_code": EXIT_NUMERIC, "message": str(exc)})]
        (out / "report.json").write_text("\n".join(lines) + "\n")
        log.error("%s", exc)
        return EXIT_NUMERIC
    save_checkpoint(FlowState(float(t_stop), field), fc, out / "convexified_state.json")
    record["min_kappa_final"] = _min_kappa(field, fc.theta)
    (out / "report.json").write_text(_dump_line(record) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="capflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="integrate a flow to steady state")
    ct = sub.add_parser("cap-table", parents=[common], help="numeric vs exact cap quermassintegrals")
    ct.add_argument("--n", type=int, default=2)
    ct.add_argument("--theta", nargs="*", default=["pi/2", "pi/3", "pi/4"])
    ct.add_argument("--r", nargs="*", default=["0.5", "1", "2"])
    ct.add_argument("--n-beta", type=int, default=400)
    sub.add_parser("af-check", parents=[common], help="Alexandrov-Fenchel audit on random convex samples")
    sub.add_parser("minkowski-check", parents=[common], help="Minkowski residual refinement ladder")
    em = sub.add_parser("export-mesh", parents=[common], help="OBJ mesh from an n = 2 checkpoint")
    em.add_argument("checkpoint")
    em.add_argument("path")
    em.add_argument("--n-alpha", type=int, default=64)
    sub.add_parser("convexify", parents=[common], help="short mean curvature flow")
    return p


_COMMANDS = {
    "run": cmd_run,
    "cap-table": cmd_cap_table,
    "af-check": cmd_af_check,
    "minkowski-check": cmd_minkowski_check,
    "export-mesh": cmd_export_mesh,
    "convexify": cmd_convexify,
}


def _apply_threads():
    raw = os.environ.get("CAPFLOW_THREADS")
    if raw is None:
        return
    try:
        width = int(raw)
        if width < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"CAPFLOW_THREADS must be a positive integer, got {raw!r}") from None
    import warnings

    import numba

    with warnings.catch_warnings():
        # the threading-layer probe complains about old TBB builds and falls back on its own
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(width, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.command in ("run", "convexify") and not args.config:
        log.error("%s needs --config", args.command)
        return EXIT_CONFIG
    try:
        _apply_threads()
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericFailure as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
