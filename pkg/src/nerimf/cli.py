"""Batch experiment runner.

    nerimf run CONFIG [--out DIR] [--seed N] [--resolution N] [--jobs N] [--resume]
    nerimf validate CONFIG [--resolution N]

Exit codes: 0 success, 2 an asserted check failed, 1 error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import io as nio
from .config import ExperimentConfig, load_config
from .diagnostics import Thresholds, detect_blowup, minimal_mass_screen
from .errors import ConfigError, NeriError
from .families import bubble_family
from .functional import value
from .geometry import build_geometry, first_eigenvalue
from .inequalities import (brezis_merle_probe, calibrate_K, improved_mt_probe, random_unit_source,
                           sharp_mt_probe, two_bubble_field)
from .measure import check_assumptions, moment
from .minimax import far_endpoint, monotonicity_probe, mountain_pass, small_ball_bound
from .solvers import EIGHT_PI, continue_branch, minimize_subcritical

log = logging.getLogger("nerimf")

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


class Run:
    """Output directory bookkeeping: every file written goes through here."""

    def __init__(self, out, cfg: ExperimentConfig):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.files = []
        self.timings = {}

    def path(self, name):
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if p not in self.files:
            self.files.append(p)
        return p

    def add(self, paths):
        for p in paths:
            if Path(p) not in self.files:
                self.files.append(Path(p))

    @contextmanager
    def timed(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - t


# scenarios ------------------------------------------------------------------------------

def _lambda_list(params):
    if "lambdas" in params:
        return list(params["lambdas"])
    if "lambda" in params:
        return [params["lambda"]]
    return []


def scenario_minimize(run, geo, P, cfg):
    lam = cfg.params["lambda"]
    res = minimize_subcritical(geo, P, lam, config=cfg.solve_config())
    nio.write_csv(run.path("history.csv"), ["iteration", "J_lambda"], enumerate(res.J_history))
    out = {"lambda": lam, "status": res.status, "J_lambda": res.J, "residual": res.residual,
           "iterations": res.iterations, "reason": res.reason}
    if res.u is not None:
        out["max_u"] = float(np.max(res.u))
        nio.write_field_csv(run.path("u.csv"), geo, res.u)
        nio.write_field_bin(run.path("u.bin"), geo, res.u)
    return out, True


def _branch(run, geo, P, cfg, resume):
    jl_path = run.path("branch.jsonl")
    start = None
    if resume and jl_path.exists():
        start = nio.load_branch(jl_path, geo, run.out / "fields")
        log.info("resuming from %d stored branch points", len(start.points))
    writer = nio.JsonlWriter(jl_path, geo, run.out / "fields", mode="a" if start else "w")
    with writer:
        br = continue_branch(geo, P, cfg.solve_config(), on_point=lambda p: writer.write(p.record(), p.u),
                             resume=start)
    run.add(sorted((run.out / "fields").glob("branch_*.bin")))
    return br


def _branch_tables(run, geo, P, br, thresholds):
    rows, reports = [], []
    for i, p in enumerate(br.points):
        rep = detect_blowup(geo, P, p, thresholds=thresholds)
        reports.append(rep)
        rows.append([p.lam, p.max_u, len(rep.peaks), ";".join(f"{pk.local_mass:.6g}" for pk in rep.peaks),
                     ";".join(pk.verdict for pk in rep.peaks), rep.total_mass])
    nio.write_csv(run.path("branch_summary.csv"),
                  ["lambda", "max_u", "n_peaks", "masses", "verdicts", "total_mass"], rows)
    return reports


def _thresholds(params):
    return Thresholds(**params.get("thresholds", {}))


def scenario_continuation(run, geo, P, cfg, resume=False):
    br = _branch(run, geo, P, cfg, resume)
    reports = _branch_tables(run, geo, P, br, _thresholds(cfg.params))
    last = br.points[-1]
    nio.write_json(run.path("diagnostics.json"), reports[-1].to_dict())
    return {"n_points": len(br.points), "stop_reason": br.stop_reason, "turning_points":
            [br.points[i].lam for i in br.turning_points], "final": last.record()}, True


def scenario_quantization(run, geo, P, cfg, resume=False):
    prof = check_assumptions(P)
    br = _branch(run, geo, P, cfg, resume)
    th = _thresholds(cfg.params)
    reports = _branch_tables(run, geo, P, br, th)
    last, rep = br.points[-1], reports[-1]
    # the screen runs wherever the loosest level sees a peak
    screens = []
    for p, r in zip(br.points, reports):
        if r.peaks:
            s = minimal_mass_screen(geo, P, p.lam, p.u)
            screens.append({"lambda": p.lam, "max_u": p.max_u, "passed": s["passed"], "levels": s["levels"]})
    with open(run.path("minimal_mass_screen.jsonl"), "w") as fh:
        for s in screens:
            fh.write(nio.dumps(s) + "\n")
    masses = [pk.to_dict() for pk in rep.peaks]
    nio.write_csv(run.path("masses.csv"), ["x", "y", "max_u", "local_mass", "radius", "verdict", "k"],
                  [[*pk.location, pk.max_u, pk.local_mass, pk.radius, pk.verdict, pk.k] for pk in rep.peaks])
    nio.write_json(run.path("diagnostics.json"), rep.to_dict())
    # peaks must stay away from the boundary; the mass ball itself may touch it
    interior = all(geo.distance_to_boundary(pk.location) > th.min_cells * geo.local_spacing(pk.location)
                   for pk in rep.peaks)
    checks = {
        "max_u_reached": last.max_u >= cfg.params["max_u_target"],
        "single_peak": len(rep.peaks) == 1,
        "near_quantized": bool(rep.peaks) and all(pk.verdict == "near_quantized" and pk.k == 1 for pk in rep.peaks),
        "interior": interior,
        "minimal_mass_screen": all(s["passed"] for s in screens),
    }
    out = {"calH": prof.calH, "n_points": len(br.points), "stop_reason": br.stop_reason,
           "final": last.record(), "masses": masses, "target_mass": EIGHT_PI, "checks": checks}
    if not prof.calH:
        out["warning"] = "calH violated; quantization not guaranteed"
    return out, all(checks.values())


def scenario_mountain_pass(run, geo, P, cfg, jobs=1):
    prm = cfg.params
    lams = sorted(prm["lambdas"])
    lam_end = prm["endpoint_lambda"] if prm["endpoint_lambda"] is not None else lams[0]
    # one endpoint for the whole grid: J is decreasing in lambda, so J < 0 at the
    # smallest lambda carries over, and the path class is the same for every run
    far, J_far = far_endpoint(geo, P, lam_end, center=prm["center"])
    nio.write_field_bin(run.path("endpoint_far.bin"), geo, far)
    sc = cfg.solve_config()
    results, rows = [], []
    for lam in lams:
        with run.timed(f"mountain_pass_{lam:.6g}"):
            r = mountain_pass(geo, P, lam, far, sc, jobs=jobs)
        sb = small_ball_bound(geo, P, lam, rho=prm["small_ball_rho"])
        path_sup = max(value(geo, P, lam, t * far) for t in np.linspace(0.0, 1.0, sc.path_points))
        tag = f"{lam:.6g}".replace(".", "p")
        with nio.JsonlWriter(run.path(f"minimax_{tag}.jsonl")) as w:
            for h in r.history:
                w.write({"lambda": lam, "path_max": h[0], "max_move": h[1], "eps": h[2], "respline_rise": h[3]})
        if r.critical_point is not None:
            nio.write_field_bin(run.path(f"critical_{tag}.bin"), geo, r.critical_point)
            nio.write_field_csv(run.path(f"critical_{tag}.csv"), geo, r.critical_point)
        rec = r.record()
        rec.update({"small_ball": {"rho": sb.rho, "quadratic": sb.quadratic, "sphere_min": sb.sphere_min},
                    "straight_path_sup": path_sup,
                    "small_ball_ok": sb.check(r.c_lambda, path_sup),
                    "residual_ok": r.residual <= prm["residual_tol"],
                    "positive": r.c_lambda > 0, "nontrivial": r.status == "converged"})
        results.append(r)
        rows.append(rec)
    table = monotonicity_probe(results)
    nio.write_csv(run.path("monotonicity.csv"), ["lambda", "c_lambda", "c_over_lambda", "dc_dlambda", "non_increasing"],
                  [[t.lam, t.c_lambda, t.ratio, t.dc_dlambda, t.non_increasing] for t in table])
    mono = all(t.non_increasing for t in table)
    ok = mono and all(r["residual_ok"] and r["positive"] and r["nontrivial"] and r["small_ball_ok"] for r in rows)
    return {"endpoint_lambda": lam_end, "endpoint_J": J_far, "runs": rows, "monotone": mono,
            "monotonicity": [t.__dict__ for t in table]}, ok


def scenario_mt_probe(run, geo, P, cfg):
    prm = cfg.params
    pts = [bubble_family(geo, prm["center"], prm["r0"], e) for e in prm["eps"]]
    out, ok = [], True
    for lam in prm["lambdas"]:
        v = sharp_mt_probe(geo, P, lam, pts, delta=prm["delta"], slope_tol=prm["slope_tol"])
        tag = f"{lam:.6g}".replace(".", "p")
        nio.write_family_csv(run.path(f"family_{tag}.csv"), pts, lam, geo, P,
                             parameter=lambda p: p.parameters["eps"])
        verdict = "bounded" if v.status == "satisfied" else "unbounded"
        rec = {"lambda": lam, "verdict": verdict, **v.to_dict()}
        exp = _expected(prm["expect"], lam)
        if exp is not None:
            rec["expected"] = exp
            rec["verdict_ok"] = verdict == exp
            if exp == "unbounded":
                rec["rate_ok"] = v.details["rel_err_J_vs_predicted"] <= prm["rate_tol"]
                ok &= rec["rate_ok"]
            ok &= rec["verdict_ok"]
        out.append(rec)
    return {"probes": out}, ok


def _expected(expect, lam):
    for k, v in expect.items():
        if abs(float(k) - lam) <= 1e-9 * max(1.0, abs(lam)):
            return v
    return None


def _region(geo, r):
    if "center" in r:
        return geo.distances(np.asarray(r["center"], dtype=float)) < float(r["radius"])
    (k, v), = r.items()
    axis = 0 if k[0] == "x" else 1
    return geo.nodes[:, axis] < v if k.endswith("below") else geo.nodes[:, axis] > v


def scenario_improved_mt(run, geo, P, cfg):
    prm = cfg.params
    C = prm["centers"]
    m1, m2 = (_region(geo, r) for r in prm["regions"])
    train = [np.zeros(geo.n)] + [two_bubble_field(geo, C, prm["r0"], e) for e in prm["eps_train"]]
    K, logs = calibrate_K(geo, P, train, prm["eps"])
    rows, verdicts = [], []
    for e in prm["eps_test"]:
        v = improved_mt_probe(geo, P, two_bubble_field(geo, C, prm["r0"], e), m1, m2,
                              a0=prm["a0"], d0=prm["d0"], eps=prm["eps"], K=K)
        verdicts.append(v.to_dict())
        rows.append([e, v.lhs, v.rhs, v.status, *v.inputs["fractions"]])
    nio.write_csv(run.path("improved_mt.csv"), ["bubble_eps", "log_lhs", "log_rhs", "status", "fraction_1",
                                                  "fraction_2"], rows)
    ok = all(v["status"] == "satisfied" for v in verdicts)
    return {"K": K, "log_K_training": logs, "verdicts": verdicts,
            "n_satisfied": sum(v["status"] == "satisfied" for v in verdicts)}, ok


def scenario_bm_probe(run, geo, P, cfg):
    rng = np.random.default_rng(cfg.seed)
    rows, worst = [], 0.0
    n_ok = 0
    for t in range(cfg.params["trials"]):
        v = brezis_merle_probe(geo, random_unit_source(geo, rng), cfg.params["eta"])
        rows.append([t, v.lhs, v.rhs, v.status, v.details["max_u"]])
        worst = max(worst, v.lhs / v.rhs)
        n_ok += v.satisfied
    nio.write_csv(run.path("brezis_merle.csv"), ["trial", "lhs", "rhs", "status", "max_u"], rows)
    return {"trials": cfg.params["trials"], "eta": cfg.params["eta"], "n_satisfied": n_ok,
            "worst_ratio": worst}, n_ok == cfg.params["trials"]


# validate --------------------------------------------------------------------------------

def validation_report(cfg: ExperimentConfig, geo=None):
    P = cfg.measure_object()
    prof = check_assumptions(P)
    geo = geo or _geometry(cfg)
    m2 = moment(P, 2)
    mu1 = first_eigenvalue(geo)
    upper = math.inf if m2 == 0 else mu1 * geo.total_volume / m2
    warnings = []
    if not prof.supp_touches_pm1:
        warnings.append("support of P does not reach -1 or 1; rescaling in alpha is required and is rejected")
    if not prof.calH and cfg.scenario == "quantization_suite":
        warnings.append("calH violated; quantization not guaranteed")
    lams = []
    for lam in _lambda_list(cfg.params):
        if geo.is_torus:
            status = "inside" if EIGHT_PI < lam < upper else ("below window" if lam <= EIGHT_PI else "above window")
            if status != "inside":
                warnings.append(f"lambda={lam:.6g} is {status} ({EIGHT_PI:.4f}, {upper:.4f})")
        else:
            status = "subcritical" if lam < EIGHT_PI else ("critical" if lam == EIGHT_PI else "supercritical")
        lams.append({"lambda": lam, "status": status, "above_16pi": lam > 16 * math.pi})
    return {
        "scenario": cfg.scenario,
        "geometry": {"kind": geo.kind, "resolution": geo.resolution, "n_nodes": geo.n, "volume": geo.total_volume},
        "assumptions": {"supp_touches_pm1": prof.supp_touches_pm1, "calH": prof.calH,
                        "mass_at_one": prof.mass_at_one},
        "thresholds": {"8pi": EIGHT_PI, "16pi": 16 * math.pi, "mu1": mu1, "second_moment": m2,
                       "mu1_volume_over_m2": upper},
        "window": [EIGHT_PI, upper] if geo.is_torus else None,
        "lambdas": lams,
        "warnings": warnings,
    }


# plumbing ----------------------------------------------------------------------------------

def _geometry(cfg):
    g = cfg.geometry
    return build_geometry(g["kind"], g["resolution"], g["params"], solver=g["solver"])


def _versions():
    out = {"nerimf": __version__, "python": platform.python_version(), "backend": kernels.BACKEND}
    for pkg in ("numpy", "scipy", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _apply_overrides(cfg, args):
    if getattr(args, "resolution", None) is not None:
        cfg.geometry["resolution"] = args.resolution
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    return cfg


def run_experiment(cfg: ExperimentConfig, out, resume=False):
    """Run one scenario; returns (exit code, result dict)."""
    run = Run(out, cfg)
    t0 = time.perf_counter()
    with run.timed("setup"):
        geo = _geometry(cfg)
        P = cfg.measure_object()
    prof = check_assumptions(P)
    if not prof.supp_touches_pm1:
        raise ConfigError("support of P must reach -1 or 1; rescale alpha explicitly", field="measure")
    dispatch = {
        "minimize": lambda: scenario_minimize(run, geo, P, cfg),
        "continuation": lambda: scenario_continuation(run, geo, P, cfg, resume),
        "quantization_suite": lambda: scenario_quantization(run, geo, P, cfg, resume),
        "mountain_pass": lambda: scenario_mountain_pass(run, geo, P, cfg, cfg.jobs),
        "mt_probe": lambda: scenario_mt_probe(run, geo, P, cfg),
        "improved_mt_probe": lambda: scenario_improved_mt(run, geo, P, cfg),
        "bm_probe": lambda: scenario_bm_probe(run, geo, P, cfg),
    }
    with run.timed("scenario"):
        body, ok = dispatch[cfg.scenario]()
    result = {"scenario": cfg.scenario, "passed": bool(ok), "seed": cfg.seed,
              "geometry": {"kind": geo.kind, "resolution": geo.resolution, "n_nodes": geo.n},
              "measure": P.to_dict(), "assumptions": prof.__dict__, "result": body}
    nio.write_json(run.path("result.json"), result)
    run.timings["total"] = time.perf_counter() - t0
    manifest_path = run.out / "manifest.json"
    manifest = {
        "config": cfg.echo(),
        "config_file": cfg.source,
        "versions": _versions(),
        "timings_seconds": run.timings,
        "files": [{"path": str(p.relative_to(run.out)), "bytes": p.stat().st_size, "sha256": _sha256(p)}
                  for p in run.files if p.exists()] + [{"path": "manifest.json"}],
    }
    nio.write_json(manifest_path, manifest)
    return (EXIT_OK if ok else EXIT_VERDICT), result


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap = argparse.ArgumentParser(prog="nerimf", description="Mean-field equation experiments.", parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the scenario of a config file", parents=[common])
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: config 'output' or ./nerimf_out)")
    r.add_argument("--seed", type=int)
    r.add_argument("--resolution", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--resume", action="store_true", help="continue a branch from its JSON-lines stream")
    v = sub.add_parser("validate", help="check a config and report the parameter regime", parents=[common])
    v.add_argument("config")
    v.add_argument("--resolution", type=int)
    v.add_argument("--out", help="also write validation.json here")
    v.add_argument("--seed", type=int)
    v.add_argument("--jobs", type=int)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 is reserved for failed checks
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "validate":
            rep = validation_report(cfg)
            text = json.dumps(nio._clean(rep), indent=2)
            print(text)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                nio.write_json(Path(args.out) / "validation.json", rep)
            for w in rep["warnings"]:
                print(f"warning: {w}", file=sys.stderr)
            return EXIT_OK
        out = args.out or cfg.output or "nerimf_out"
        code, result = run_experiment(cfg, out, resume=args.resume)
        print(f"{cfg.scenario}: {'passed' if result['passed'] else 'FAILED'} -> {out}")
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (NeriError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
