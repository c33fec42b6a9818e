"""Config-driven experiment runner.

A run directory holds ``trajectories.csv``, ``reports.csv``, optional SVG
plots and ``manifest.json``.  The manifest is written last, so a directory
without one is an incomplete run.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import subprocess
import time
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, geometry, plotting, samplers
from .config import ExperimentConfig, load_config
from .errors import ConfigError, SGPPError
from .guidance import GuidanceParams
from .score_field import DiscreteSupportScore, from_manifold

__all__ = [
    "EXIT_OK", "EXIT_FAILED", "EXIT_INVALID", "EXIT_ASSERT",
    "build_testbed", "Ensemble", "run_ensembles", "write_trajectories",
    "write_reports", "run_experiment", "run_verification_suite", "resolve_out_dir",
    "version_string",
]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_ASSERT = 0, 1, 2, 3

REPORT_HEADER = ["experiment_id", "method", "parameter", "value", "count", "ok", "diverged",
                 "mean_terminal_normal_distance", "max_terminal_normal_distance",
                 "mean_distance_to_ref", "off_manifold_fraction"]

OFF_MANIFOLD = 0.05


def _g(x):
    return "%.17g" % x


def build_testbed(cfg: ExperimentConfig):
    """``(manifold or None, field)`` from the manifold section."""
    s = cfg["manifold"]
    if s["kind"] == "atoms":
        return None, DiscreteSupportScore(s["atoms"], s["weights"])
    if s["density"] == "vonmises":
        dens = geometry.VonMises(s["concentration"], s["mode"])
    else:
        dens = geometry.Uniform()
    if s["kind"] == "circle":
        m = geometry.circle(s["center"], s["radius"], dens)
    elif s["kind"] == "segment":
        m = geometry.segment(s["start"], s["end"], dens)
    else:
        m = geometry.two_moons(s["radius"], s["offset"], densities=(dens, dens))
    return m, from_manifold(m, s["atom_count"])


@dataclass
class Ensemble:
    experiment_id: str
    method: str
    parameter: str
    value: float
    trajectories: list
    x_ref: np.ndarray


def run_ensembles(cfg: ExperimentConfig, jobs=1):
    """Run every ensemble the config asks for, in sweep order."""
    m, field = build_testbed(cfg)
    g, s, b = cfg["guidance"], cfg["sampler"], cfg["baseline"]
    seed = cfg["seed"]["master_seed"]
    count = s["ensemble_count"]
    grid = samplers.make_time_grid(s["t_start"], s["t_end"], s["steps"], s["spacing"])
    x_ref = np.array(g["x_ref"])
    method = s["method"]
    out = []

    def add(param, value, gen):
        eid = f"{cfg.name}:{param}={value!r}"
        trajs = samplers.run_ensemble(gen, count, seed, jobs)
        out.append(Ensemble(eid, trajs[0].method.value, param, value, trajs, x_ref))

    if method in ("sgpp_descent", "posterior_ode", "sgpp_sde"):
        for sig in g["sigma_p"]:
            p = GuidanceParams(sig, x_ref, g["eta"], g["t_stop"])
            if method == "sgpp_descent":
                gen = partial(samplers.run_sgpp_descent, field, m, grid, p, s["steps_per_t"],
                              samplers.StepRule.parse(s["step_rule"]), record_every=s["record_every"])
            elif method == "posterior_ode":
                gen = partial(samplers.integrate_posterior_ode, field, grid, p, m=m,
                              record_every=s["record_every"])
            else:
                gen = partial(samplers.integrate_sgpp_sde, field, grid, p, g["use_mixture"], None,
                              m=m, likelihood=g["likelihood"], record_every=s["record_every"])
            add("sigma_p", sig, gen)
    elif method == "dps":
        for so in b["dps_sigma_list"]:
            gen = partial(samplers.run_dps, field, grid, x_ref, so, b["dps_step_scale"], m=m,
                          record_every=s["record_every"])
            add("sigma_obs", so, gen)
    else:
        gen = partial(samplers.run_rf_inversion, field, grid, x_ref, g["eta"], b["rf_inv_gamma"],
                      g["t_stop"], m=m, record_every=s["record_every"])
        add("gamma", b["rf_inv_gamma"], gen)
    return m, out


def write_trajectories(path, ensembles, dim):
    """One row per record; 17 significant digits, LF line endings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(plotting.csv_header(dim))
        for ens in ensembles:
            for tid, tr in enumerate(ens.trajectories):
                sig = "" if tr.params is None else _g(tr.params.sigma_p)
                if tr.params is not None:
                    eta = _g(tr.params.eta)
                elif "eta" in tr.meta:
                    eta = _g(tr.meta["eta"])
                else:
                    eta = ""
                nd = tr.normal_distance
                for k in range(len(tr)):
                    w.writerow([ens.experiment_id, ens.method, tid, k, _g(tr.times[k]),
                                *(_g(v) for v in tr.points[k]),
                                "" if nd is None else _g(nd[k]), sig, eta,
                                tr.seed[0], tr.seed[1]])


def ensemble_summary(ens: Ensemble):
    trs = ens.trajectories
    ok = [tr for tr in trs if not tr.diverged]
    nd = np.array([tr.normal_distance[-1] for tr in ok if tr.normal_distance is not None])
    dist = np.array([np.linalg.norm(tr.terminal - ens.x_ref) for tr in ok])
    off = sum(tr.diverged or (tr.normal_distance is not None and tr.normal_distance[-1] > OFF_MANIFOLD)
              for tr in trs)
    nan = float("nan")
    return {
        "count": len(trs), "ok": len(ok), "diverged": len(trs) - len(ok),
        "mean_terminal_normal_distance": float(nd.mean()) if len(nd) else nan,
        "max_terminal_normal_distance": float(nd.max()) if len(nd) else nan,
        "mean_distance_to_ref": float(dist.mean()) if len(dist) else nan,
        "off_manifold_fraction": off / len(trs),
    }


def write_reports(path, ensembles):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for ens in ensembles:
            s = ensemble_summary(ens)
            w.writerow([ens.experiment_id, ens.method, ens.parameter, _g(ens.value),
                        s["count"], s["ok"], s["diverged"],
                        *(_g(s[k]) for k in REPORT_HEADER[7:])])


def check_assertions(cfg: ExperimentConfig, ensembles):
    """``[(experiment_id, key, limit, observed, passed)]`` for every configured assertion."""
    a = cfg["assert"]
    out = []
    for ens in ensembles:
        s = ensemble_summary(ens)
        observed = {
            "max_terminal_normal_distance": s["max_terminal_normal_distance"],
            "max_diverged_fraction": s["diverged"] / s["count"],
            "min_off_manifold_fraction": s["off_manifold_fraction"],
            "max_mean_distance_to_ref": s["mean_distance_to_ref"],
            "min_mean_distance_to_ref": s["mean_distance_to_ref"],
        }
        for key, limit in a.items():
            if limit is None:
                continue
            val = observed[key]
            ok = val <= limit if key.startswith("max_") else val >= limit
            out.append((ens.experiment_id, key, limit, val, bool(ok)))
    return out


def version_string():
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}+g{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def resolve_out_dir(cfg: ExperimentConfig, out=None):
    """``--out`` wins, then ``output.directory``, then ``$SGPP_LAB_OUT/<name>``,
    then ``./sgpp_runs/<name>``."""
    if out:
        return Path(out)
    if cfg["output"]["directory"]:
        return Path(cfg["output"]["directory"])
    root = os.environ.get("SGPP_LAB_OUT") or "sgpp_runs"
    return Path(root) / cfg.name


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, cfg, artifacts, started, extra):
    manifest = {
        "version": version_string(),
        "config_text": cfg.to_ini(),
        "config_source": cfg.source,
        "artifacts": [{"path": Path(a).name, "bytes": Path(a).stat().st_size, "sha256": _sha256(a)}
                      for a in artifacts],
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
        **extra,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def run_experiment(config, out=None, seed=None, jobs=1):
    """Run a config end to end and return the exit code.

    ``config`` is a path or an :class:`ExperimentConfig`.  Exit 0 on
    success, 2 on a validation error (nothing written), 3 when a configured
    assertion fails (artifacts kept, failures listed in the manifest).
    """
    started = time.perf_counter()
    try:
        cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
        if seed is not None:
            if not 0 <= int(seed) < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = copy.deepcopy(cfg)
            cfg["seed"]["master_seed"] = int(seed)
            cfg.present = cfg.present | {"seed"}
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except SGPPError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    out_dir = resolve_out_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stale = out_dir / "manifest.json"
    if stale.exists():
        stale.unlink()
    m, ensembles = run_ensembles(cfg, jobs)
    dim = ensembles[0].trajectories[0].points.shape[1]
    artifacts = [out_dir / "trajectories.csv", out_dir / "reports.csv"]
    write_trajectories(artifacts[0], ensembles, dim)
    write_reports(artifacts[1], ensembles)
    if cfg["output"]["emit_svg"]:
        outline = m.outline() if m is not None else []
        artifacts += plotting.render_plot(artifacts[0], out_dir, outline)
    asserts = check_assertions(cfg, ensembles)
    failed = [a for a in asserts if not a[4]]
    code = EXIT_ASSERT if failed else EXIT_OK
    status = {e.experiment_id: [tr.status for tr in e.trajectories] for e in ensembles}
    write_manifest(out_dir, cfg, artifacts, started, {
        "kind": "run",
        "trajectory_status": status,
        "assertions": [dict(zip(("experiment_id", "key", "limit", "observed", "passed"), a))
                       for a in asserts],
        "exit_code": code,
    })
    for a in failed:
        log.error("assertion failed: %s %s limit=%g observed=%g", a[0], a[1], a[2], a[3])
    return code


def _verify_plan(cfg: ExperimentConfig, jobs=1):
    from . import verification as V

    v = cfg["verify"]
    names = v["checks"] or tuple(V.CHECKS)
    unknown = [n for n in names if n not in V.CHECKS]
    if unknown:
        raise ConfigError(f"unknown check(s): {', '.join(unknown)}")
    sig = v["contraction_sigma_p"]
    if "normal_contraction" in names:
        missing = [n for n in V.CONTRACTION_SIGMA_P if (n, sig) not in V.FROZEN_C_N]
        if missing:
            raise ConfigError(f"no calibrated forcing constant for sigma_p={sig} on {', '.join(missing)}")
    plan = []
    for n in names:
        if n == "normal_contraction":
            plan.append(partial(V.check_contraction, fraction=v["step_fraction"], sigma_p=sig))
        elif n == "posterior_frequencies":
            for lik in v["posterior_likelihood"]:
                plan.append(partial(V.check_posterior_frequencies, lik, v["posterior_count"], jobs=jobs))
        else:
            plan.append(V.CHECKS[n])
    return plan


def run_verification_suite(config, out=None, jobs=1):
    """Run the property checks selected by the ``[verify]`` section.

    Writes ``verify.csv`` (one pass/fail row per check), ``verify.json``
    (diagnostics) and the manifest.  Exit 0 iff every check passes, 1
    otherwise, 2 on a validation error.
    """
    started = time.perf_counter()
    try:
        cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
        plan = _verify_plan(cfg, jobs)
    except SGPPError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    out_dir = resolve_out_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for check in plan:
        res = check()
        print(res.line(), flush=True)
        results.append(res)
    table = out_dir / "verify.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "passed", "metric", "threshold", "seconds"])
        for r in results:
            w.writerow([r.name, "pass" if r.passed else "fail", _g(r.metric), _g(r.threshold),
                        "%.3f" % r.seconds])
    detail = out_dir / "verify.json"
    detail.write_text(json.dumps({r.name: r.detail for r in results}, indent=2, sort_keys=True,
                                 default=_jsonable) + "\n")
    code = EXIT_OK if all(r.passed for r in results) else EXIT_FAILED
    write_manifest(out_dir, cfg, [table, detail], started, {
        "kind": "verify",
        "checks": {r.name: r.passed for r in results},
        "exit_code": code,
    })
    return code


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)
