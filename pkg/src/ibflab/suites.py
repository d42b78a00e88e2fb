"""Suite orchestration: dispatch a validated config to module operations.

Every suite writes into ``outputs.dir``:

* ``report.json``   deterministic summary (sorted keys)
* ``samples.jsonl`` per-replica sample stream, merged by replica index
* plot CSVs and PNG figures
* ``run_record.json`` digest, code version, seeds, wall time, outcome

Only ``run_record.json`` carries timing, so two runs with the same config
and seed produce byte-identical copies of everything else.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .acceptance import (
    Criterion, ShapeSettings, _jsonable, boundaries_for_plots, check_bridge,
    check_eigenvalues, check_lyapunov_function, check_nospeed, check_radial_oracle,
    check_sweep, pooled_estimate, run_battery,
)
from .config import ExperimentConfig
from .control import build_square, nospeed_certificate, straight_test_curve, sweep_certificate
from .covariance import eval_correlations, lyapunov_exponents, taylor_radius, validate_family
from .flow import CurveState, diameter, simulate_curve
from .plotdata import PlotData, emit_plot_data, fmt, render_figures, survival_rows
from .radial import build_lyapunov_f, eval_g, submartingale_check, verification_grid
from .seeds import derive_seed, make_rng
from .shape import (
    FrontOptions, HittingSample, canonical_curve, collect_hitting, concentration_check,
    direction_fan, displacement_bound, fit_stable_norm, limit_shape_check, swept_boundary,
    tail_exponent,
)
from .stats import mean_se, within_combined_se

SUITES = ("analyze", "radial", "lyapunov-fn", "sweep", "simulate", "shape", "verify")


@dataclass
class RunRecord:
    suite: str
    digest: str
    code_version: str
    master_seed: int
    seeds: list
    wall_time: float
    passed: bool
    outcomes: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "suite": self.suite, "config_digest": self.digest, "code_version": self.code_version,
            "master_seed": self.master_seed, "seeds": self.seeds, "wall_time": self.wall_time,
            "passed": self.passed, "outcomes": _jsonable(self.outcomes),
        }


def _dump(path, obj) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return str(path)


def _jsonl(path, rows) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(_jsonable(r), sort_keys=True) + "\n")
    return str(path)


def _csv(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return str(path)


def curve_from_config(cfg: ExperimentConfig) -> CurveState:
    cur = cfg["curve"]
    geo = cur["geometry"]
    kw = dict(refine_threshold=cur["refine_threshold"], max_points=cur["max_points"])
    if cur["kind"] == "segment":
        return CurveState.segment(geo["a"], geo["b"], **kw)
    if cur["kind"] == "circle":
        return CurveState.circle(geo["center"], geo["radius"], **kw)
    return CurveState.polyline(geo["points"], closed=geo.get("closed", False), **kw)


def front_options(cfg: ExperimentConfig) -> FrontOptions:
    fr = dict(cfg["front"])
    return FrontOptions(
        dt=cfg["scheme"]["dt"], cell_size=cfg["grid"]["cell_size"],
        grid_extent=cfg["grid"]["extent"], **fr,
    )


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------


def suite_analyze(cfg, out, workers):
    fam = cfg.family
    lyap = lyapunov_exponents(fam)
    eig = check_eigenvalues(fam, seed=derive_seed(cfg.master_seed, 0))
    rng = make_rng(derive_seed(cfg.master_seed, 1))
    sets = [rng.uniform(-2, 2, size=(8, fam.dimension)) for _ in range(16)]
    val = validate_family(fam, sets)
    r = np.linspace(0, 4 * fam.length_scale, 401)
    bl, _, _, bn, _, _ = eval_correlations(fam, r)
    _csv(os.path.join(out, "correlations.csv"), ["r", "B_L", "B_N"], zip(r, bl, bn))
    _plot_lines(os.path.join(out, "correlations.png"), r, {"B_L": bl, "B_N": bn}, "r", "correlation")
    report = {
        "family": fam.to_record(), "lyapunov": {"mu": lyap.mu, "beta_L": lyap.beta_L, "beta_N": lyap.beta_N},
        "eigen_check": _strip_time(eig.to_record()), "psd_check": {"passed": val.passed, "min_eigenvalues": val.min_eigenvalues},
        "taylor_radius_eps_0.01": taylor_radius(fam, 0.01),
    }
    return eig.passed and val.passed, report, [], []


def suite_radial(cfg, out, workers):
    rad = cfg["radial"]
    crit = check_radial_oracle(
        seed=derive_seed(cfg.master_seed, 0), n=cfg.replicas, dt=rad["dt"], r0=rad["r0"],
        family=cfg.family, horizon=rad["horizon"],
    )
    report = {"oracle": _strip_time(crit.to_record())}
    return crit.passed, report, [], []


def suite_lyapunov_fn(cfg, out, workers):
    rad = cfg["radial"]
    f = build_lyapunov_f(cfg.family)
    r = verification_grid(f.c9, 2000)
    _csv(os.path.join(out, "lyapunov_f.csv"), ["r", "f", "f_prime", "f_second", "g"],
         zip(r, f.value(r), f.d1(r), f.d2(r), eval_g(f, r)))
    _plot_lines(os.path.join(out, "lyapunov_f.png"), r, {"f": f.value(r)}, "r", "f", logx=True)
    checks = [check_lyapunov_function(cfg.family), check_bridge(cfg.family)]
    sub = submartingale_check(f, rad["r0_grid"], rad["horizon"], rad["dt"], cfg.replicas,
                              derive_seed(cfg.master_seed, 0))
    ok = all(c.passed for c in checks) and sub.passed is not False
    report = {"constants": f.to_record(), "checks": [_strip_time(c.to_record()) for c in checks],
              "submartingale": sub.to_record()}
    return ok, report, [], []


def suite_sweep(cfg, out, workers):
    ctl = cfg["control"]
    chart = build_square(cfg.family, Q=ctl["Q"], n=ctl["n"])
    ns = nospeed_certificate(chart)
    sw = sweep_certificate(chart, straight_test_curve(chart))
    cells = sw.swept_cells if sw.swept_cells is not None else np.empty((0, 2))
    _csv(os.path.join(out, "swept_cells.csv"), ["i", "j"], np.asarray(cells).reshape(-1, 2))
    report = {"chart": chart.to_record(), "nospeed": ns.to_record(), "sweep": sw.to_record()}
    return ns.passed and bool(sw.passed), report, [], []


def suite_simulate(cfg, out, workers):
    fam, scheme = cfg.family, cfg.scheme
    curve = curve_from_config(cfg)
    trajs, seeds, rows, warns = [], [], [], []
    for i in range(cfg.replicas):
        s = derive_seed(cfg.master_seed, i)
        traj = simulate_curve(fam, curve, cfg["horizon"], scheme, s)
        trajs.append(traj)
        seeds.append(s)
        warns.extend(f"replica {i}: {w}" for w in traj.warnings)
        for snap in traj.snapshots:
            rows.append({"replica": i, "time": snap.time, "points": len(snap.points),
                         "diameter": diameter(snap.points)})
    _jsonl(os.path.join(out, "samples.jsonl"), rows)
    times = trajs[0].times
    diam = np.array([[r["diameter"] for r in rows if r["replica"] == i] for i in range(cfg.replicas)])
    m = diam.mean(0)
    se = diam.std(0, ddof=1) / math.sqrt(cfg.replicas) if cfg.replicas > 1 else np.zeros_like(m)
    plot = PlotData(diameter=np.column_stack([times, m, se, np.full(len(m), cfg.replicas)]))
    disp = displacement_bound(trajs, cfg["horizon"])
    report = {"displacement": disp.to_record(), "warnings": warns,
              "final_mean_diameter": float(m[-1]), "initial_diameter": float(m[0])}
    return True, report, seeds, [plot]


def suite_shape(cfg, out, workers):
    fam = cfg.family
    tg = cfg["targets"]
    R, t_grid, eps = tg["R"], [float(t) for t in tg["t_grid"]], tg["eps"]
    opt = front_options(cfg)
    fan = direction_fan(tg["directions"])
    shape_t = t_grid[len(t_grid) // 2]
    horizon = cfg["horizon"]
    n = cfg.replicas
    grids = {}
    per_dir, samples, seeds = [], [], []

    def keep(idx, grid):
        grids[idx] = grid

    for k, v in enumerate(fan):
        targets = [(t * v, R) for t in t_grid]
        table = collect_hitting(
            fam, lambda i: canonical_curve(R, opt), lambda i: targets, n, cfg.master_seed,
            horizon, opt, replica_offset=k * n, min_time=shape_t, grid_callback=keep, workers=workers,
        )
        per_dir.append(table)
        seeds.extend(int(s) for s in table.seeds)
        for smp in table.samples():
            rec = smp.to_record()
            rec["replica"] = k * n + smp.replica
            rec["direction"] = k
            samples.append(rec)
    _jsonl(os.path.join(out, "samples.jsonl"), samples)
    tau = np.stack([t.tau for t in per_dir])  # (dirs, n, len(t_grid))
    fit = fit_stable_norm(t_grid, tau.reshape(-1, len(t_grid)), R, (1.0, 0.0), horizon)
    per_fit = []
    for k, v in enumerate(fan):
        try:
            per_fit.append(fit_stable_norm(t_grid, tau[k], R, v, horizon).to_record())
        except ValueError as exc:
            per_fit.append({"error": str(exc)})
    k_iso = len(t_grid) // 2
    col = np.where(np.isfinite(tau[:, :, k_iso]), tau[:, :, k_iso], horizon)
    stats = [mean_se(c) for c in col]
    iso_ok, worst = within_combined_se([m for m, _ in stats], [e for _, e in stats], 3.0)
    flat = tau.reshape(-1, len(t_grid))
    conc = concentration_check([flat[:, j] for j in range(len(t_grid))], t_grid, fit.slope) \
        if fit.slope > 0 else None
    shapes = {j: limit_shape_check(g, shape_t, fit.ball_radius, eps) for j, g in sorted(grids.items())}
    frac = float(np.mean([s.both for s in shapes.values()])) if shapes else 0.0
    try:
        tail = tail_exponent(flat[:, k_iso], t_grid[k_iso])
        tail_rec, tail_ok = tail.to_record(), tail.passed
        surv = survival_rows(flat[:, k_iso][np.isfinite(flat[:, k_iso])] / t_grid[k_iso])
    except ValueError as exc:
        tail_rec, tail_ok, surv = {"skipped": str(exc)}, None, None
    plot = PlotData(
        boundaries={j: swept_boundary(g, shape_t) for j, g in sorted(grids.items())},
        disk=(shape_t, fit.ball_radius, eps), survival=surv,
    )
    checks = {
        "isotropy": iso_ok, "concentration": bool(conc.passed) if conc else False,
        "limit_shape": frac >= 0.8, "tail": tail_ok,
    }
    report = {
        "stable_norm": fit.to_record(), "per_direction": per_fit,
        "isotropy": {"t": t_grid[k_iso], "means": [m for m, _ in stats],
                     "std_errors": [e for _, e in stats], "worst_ratio": worst},
        "concentration": conc.to_record() if conc else None,
        "limit_shape": {"t": shape_t, "fraction": frac,
                        "replicas": [s.to_record() for s in shapes.values()]},
        "tail": tail_rec, "checks": checks, "front_options": opt.to_record(),
    }
    ok = all(v is not False for v in checks.values())
    return ok, report, seeds, [plot]


def suite_verify(cfg, out, workers):
    lines = []

    def progress(msg):
        lines.append(msg)
        print(msg, flush=True)

    res = run_battery(cfg.master_seed, workers, ShapeSettings(), progress=progress)
    for c in res.criteria:
        print(c.line(), flush=True)
    ens = res.ensemble
    est = pooled_estimate(ens)
    s = ens.settings
    k = s.t_grid.index(s.tail_t)
    col = ens.tau[:, :, k].ravel()
    plot = PlotData(
        boundaries=boundaries_for_plots(ens, s.shape_t),
        disk=(s.shape_t, est.ball_radius, s.eps),
        survival=survival_rows(col[np.isfinite(col)] / s.tail_t),
    )
    report = {"criteria": [_strip_time(c.to_record()) for c in res.criteria],
              "summary": [c.line() for c in res.criteria]}
    timing = {f"#{c.number}": round(c.seconds, 2) for c in res.criteria} | {
        f"ensemble_{k}": round(v, 1) for k, v in ens.seconds.items()}
    return res.passed, report, [], [plot], timing


def _strip_time(rec: dict) -> dict:
    rec = dict(rec)
    rec.pop("seconds", None)
    return rec


def _plot_lines(path, x, ys: dict, xlabel, ylabel, logx=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, y in ys.items():
        ax.plot(x, y, lw=1, label=name)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


DISPATCH = {
    "analyze": suite_analyze,
    "radial": suite_radial,
    "lyapunov-fn": suite_lyapunov_fn,
    "sweep": suite_sweep,
    "simulate": suite_simulate,
    "shape": suite_shape,
    "verify": suite_verify,
}


def run_suite(cfg: ExperimentConfig, suite: str, workers: int = 1) -> RunRecord:
    """Run ``suite`` and persist its artifacts; returns the run record."""
    if suite not in DISPATCH:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    out = cfg["outputs"]["dir"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    result = DISPATCH[suite](cfg, out, workers)
    passed, report, seeds, plots = result[:4]
    timing = result[4] if len(result) > 4 else {}
    _dump(os.path.join(out, "report.json"), {"suite": suite, "passed": bool(passed), **report})
    for plot in plots:
        emit_plot_data(plot, out)
        render_figures(plot, out)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())
    rec = RunRecord(
        suite=suite, digest=cfg.digest(), code_version=__version__, master_seed=cfg.master_seed,
        seeds=[int(s) for s in seeds], wall_time=round(time.perf_counter() - t0, 3),
        passed=bool(passed), outcomes={"timing": timing},
    )
    _dump(os.path.join(out, "run_record.json"), rec.to_record())
    return rec


def failure_record(cfg: ExperimentConfig, suite: str, exc: BaseException) -> str:
    out = cfg["outputs"]["dir"]
    os.makedirs(out, exist_ok=True)
    return _dump(os.path.join(out, "failure.json"), {
        "suite": suite, "error": type(exc).__name__, "message": str(exc),
        "config_digest": cfg.digest(), "code_version": __version__,
    })
