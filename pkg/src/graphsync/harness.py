"""Experiment orchestration: resolved configs, seeded sweeps, CSV/manifest
output, resumability, and the `verify` invariant suite."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable

import numpy as np

from . import __version__
from ._rng import derive_key, make_rng
from . import graphs as G
from . import inference as I
from . import estimators as E
from . import metrics as M
from . import thresholds as T
from . import tree_recursion as R
from .model import Instance, Kernel, channel_mutual_information, kernel_zq, read_kernel, sample_instance

FLOAT_FMT = "%.17g"
DEFAULT_BUDGET = 50_000_000  # row count x trials refusal threshold


class ConfigError(ValueError):
    pass


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("GRAPHSYNC_JOBS", "1")))
    except ValueError:
        return 1


_DEFAULTS: dict[str, Any] = {
    "kind": "simulate",
    "graph": {"family": "torus", "d": 2, "L": 4, "n": 12, "k": 4, "depth": 3, "seed": 1, "path": None},
    "model": {"q": 2, "p": 0.5, "kernel_path": None, "eps": 0.1, "eps_list": None},
    "estimator": {"l_list": [0, 1], "f": "default"},
    "metric": "second_moment",
    "grid": {},          # sweep: name -> list of values (p, eps, l, k, q, L)
    "trials": 200,
    "seed": 1,
    "jobs": None,
    "out": "results.csv",
    "force": False,
    "recursion": {"k": 3, "q": 2, "p": 0.4, "eps": 0.02, "l_max": 6, "tree": "ary"},
    "thresholds": {"p_list": [0.2, 0.5, 0.8], "q_list": [2, 3], "k_list": [3, 4, 5],
                   "s_star": False},
}


def resolve_config(overrides: dict | None = None, path: str | None = None) -> dict:
    """Merge defaults <- config file <- CLI overrides and validate."""
    import yaml

    cfg = json.loads(json.dumps(_DEFAULTS))  # deep copy
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            file_cfg = yaml.safe_load(fh) or {}
        _merge(cfg, file_cfg)
    if overrides:
        _merge(cfg, overrides)
    if cfg["jobs"] is None:
        cfg["jobs"] = default_jobs()
    _validate(cfg)
    return cfg


def _merge(base: dict, extra: dict) -> None:
    for key, val in extra.items():
        if val is None and key in base and isinstance(base[key], dict):
            continue
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val)
        else:
            base[key] = val


def _validate(cfg: dict) -> None:
    if cfg["kind"] not in {"gen", "simulate", "sweep", "thresholds", "recursion", "verify"}:
        raise ConfigError(f"unknown experiment kind {cfg['kind']!r}")
    if cfg["trials"] < 1:
        raise ConfigError("trials must be >= 1")
    mp = cfg["model"]
    if mp.get("kernel_path") and not os.path.exists(mp["kernel_path"]):
        raise ConfigError(f"kernel file not found: {mp['kernel_path']}")
    if mp.get("kernel_path") is None:
        if not (isinstance(mp["q"], int) and mp["q"] >= 2):
            raise ConfigError("model.q must be an integer >= 2")
        if not 0.0 <= float(mp["p"]) <= 1.0:
            raise ConfigError("model.p must lie in [0,1]")
    eps = mp.get("eps")
    if eps is not None and not 0.0 <= float(eps) <= 1.0:
        raise ConfigError("model.eps must lie in [0,1]")


def build_graph(spec: dict) -> G.Graph:
    fam = spec["family"]
    if fam == "torus":
        return G.gen_torus(spec["d"], spec["L"])
    if fam == "box":
        return G.gen_box(spec["d"], spec["L"])
    if fam == "random_regular":
        return G.gen_random_regular(spec["n"], spec["k"], seed=spec.get("seed", 1))
    if fam == "tree":
        return G.gen_tree(spec["k"], spec["depth"])
    if fam == "ary_tree":
        return G.gen_ary_tree(spec["k"] - 1, spec["depth"])
    if fam == "cycle":
        return G.gen_torus(1, spec["L"])
    if fam == "file":
        return G.read_graph(spec["path"])
    raise ConfigError(f"unknown graph family {fam!r}")


def build_kernel(spec: dict) -> Kernel:
    if spec.get("kernel_path"):
        return read_kernel(spec["kernel_path"])
    return kernel_zq(spec["q"], float(spec["p"]))


# ----------------------------------------------------------------------
# per-trial functionals (module level so process pools can pickle them)
# ----------------------------------------------------------------------

def _trial_metrics(ctx: dict, seed: int) -> np.ndarray:
    g: G.Graph = ctx["graph"]
    kernel: Kernel = ctx["kernel"]
    eps = ctx["eps"]
    l_list = ctx["l_list"]
    metric = ctx["metric"]
    inst = sample_instance(g, kernel, eps, seed)
    f = E.default_f(kernel.q)
    out = []
    if metric == "second_moment":
        for l in l_list:
            mu = I.local_marginal(g, 0, l, kernel, inst)
            out.append(float((mu**2).sum()))
    elif metric == "tv":
        full = I.exact_posterior_marginals(g, kernel, inst)
        for l in l_list:
            mu = I.local_marginal(g, 0, l, kernel, inst)
            out.append(M.tv_distance(mu, full[0]))
    elif metric == "risk":
        for l in l_list:
            est = E.matrix_local(g, kernel, inst, l, f)
            out.append(M.risk(est, inst.theta0, f))
        out.append(M.risk(E.matrix_decoupled(g, kernel, inst, f), inst.theta0, f))
    elif metric == "overlap":
        for l in l_list:
            marg = np.stack([I.local_marginal(g, u, l, kernel, inst) for u in range(g.n)])
            labels = E.sample_labels(marg, seed)
            out.append(M.overlap(labels, inst.theta0, q=kernel.q))
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    return np.asarray(out)


def _metric_columns(metric: str, l_list: list[int], l_in_grid: bool = False) -> list[str]:
    # when l is a grid dimension it already appears as a parameter column,
    # so the metric column name must not depend on it
    cols = [metric] if l_in_grid else [f"{metric}_l{l}" for l in l_list]
    if metric == "risk":
        cols.append("risk_dec")
    return cols


# ----------------------------------------------------------------------
# runners
# ----------------------------------------------------------------------

@dataclass
class RunResult:
    out_path: str
    rows: list[dict]
    manifest_path: str


def _write_rows(path: str, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return v


def _write_manifest(out_path: str, cfg: dict, wall: float) -> str:
    man = {
        "config": cfg,
        "version": __version__,
        "rng": "philox4x64, keys derived by splitmix64 over (seed, experiment id, trial)",
        "wall_time_s": wall,
    }
    mpath = out_path + ".manifest.json"
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
    return mpath


def _experiment_id(params: dict) -> int:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    words = [int.from_bytes(blob[i:i + 8], "little") for i in range(0, len(blob), 8)]
    return derive_key(*words, len(blob)) & ((1 << 62) - 1)


def run(cfg: dict) -> RunResult:
    """Execute one experiment described by a resolved config."""
    t0 = time.time()
    kind = cfg["kind"]
    out = cfg["out"]
    if kind == "gen":
        g = build_graph(cfg["graph"])
        G.write_graph(g, out)
        man = _write_manifest(out, cfg, time.time() - t0)
        return RunResult(out_path=out, rows=[], manifest_path=man)
    if kind == "verify":
        failures = run_verify(jobs=cfg["jobs"], verbose=True)
        if failures:
            raise RuntimeError(f"{failures} verify check(s) failed")
        return RunResult(out_path="", rows=[], manifest_path="")
    if kind == "thresholds":
        rows = _run_thresholds(cfg)
    elif kind == "recursion":
        rows = _run_recursion(cfg)
    elif kind == "simulate":
        rows = _run_points(cfg, [dict()])
    elif kind == "sweep":
        rows = _run_sweep(cfg)
    else:  # pragma: no cover
        raise ConfigError(kind)
    fieldnames = list(rows[0].keys()) if rows else ["empty"]
    _write_rows(out, rows, fieldnames)
    man = _write_manifest(out, cfg, time.time() - t0)
    return RunResult(out_path=out, rows=rows, manifest_path=man)


def _run_thresholds(cfg: dict) -> list[dict]:
    tp = cfg["thresholds"]
    rows = []
    for q in tp["q_list"]:
        for p in tp["p_list"]:
            kernel = kernel_zq(q, p)
            mi = channel_mutual_information(kernel)
            for k in tp["k_list"]:
                cond = T.weak_recovery_condition(kernel, k)
                row = {
                    "q": q, "p": p, "k": k,
                    "kappa_KS": T.kesten_stigum(k, p),
                    "k_star": T.k_star(p, q) if 0.0 < p < 1.0 else math.nan,
                    "I": mi,
                    "weak_recovery_satisfied": int(cond["satisfied"]),
                }
                if tp.get("s_star"):
                    res = T.s_star(T.uniform_overlap(q), k, kernel, seed=cfg["seed"])
                    row["s_star_lower"] = res.value
                    row["s_star_upper_bound"] = res.upper_bound
                rows.append(row)
    return rows


def _run_recursion(cfg: dict) -> list[dict]:
    rp = cfg["recursion"]
    trace = R.simulate_root_statistic(
        rp["k"], rp["q"], rp["p"], rp["eps"], rp["l_max"],
        cfg["trials"], cfg["seed"], tree=rp.get("tree", "ary"),
    )
    rep = R.recursion_residual(trace)
    rows = []
    for l in range(trace.levels + 1):
        rows.append({
            "k": rp["k"], "q": rp["q"], "p": rp["p"], "eps": rp["eps"], "l": l,
            "z_hat_mean": trace.z_mean[l], "z_hat_se": trace.z_se[l],
            "dtv2_mean": trace.dtv2_mean[l], "dtv2_se": trace.dtv2_se[l],
            "kappa": trace.kappa,
            "residual": rep.residuals[l] if l < trace.levels else math.nan,
            "residual_se": rep.residual_se[l] if l < trace.levels else math.nan,
        })
    return rows


def _grid_points(grid: dict) -> list[dict]:
    if not grid:
        return [dict()]
    keys = sorted(grid.keys())
    for key in keys:
        if not isinstance(grid[key], (list, tuple)) or len(grid[key]) == 0:
            raise ConfigError(f"grid dimension {key!r} must be a non-empty list")
    points = [dict()]
    for key in keys:
        points = [dict(pt, **{key: v}) for pt in points for v in grid[key]]
    return points


def _apply_point(cfg: dict, point: dict) -> dict:
    sub = json.loads(json.dumps({k: v for k, v in cfg.items() if k != "force"}))
    for key, val in point.items():
        if key in ("p", "q", "eps"):
            sub["model"][key] = val
        elif key in ("L", "d", "n", "k", "depth"):
            sub["graph"][key] = val
        elif key == "l":
            sub["estimator"]["l_list"] = [val]
        else:
            raise ConfigError(f"unknown grid dimension {key!r}")
    return sub


def _run_points(cfg: dict, points: list[dict], existing: dict | None = None) -> list[dict]:
    rows = []
    for point in points:
        sub = _apply_point(cfg, point)
        params = {
            **{f"grid_{k}": v for k, v in point.items()},
            "kind": sub["kind"],
            "family": sub["graph"]["family"],
            "metric": sub["metric"],
            "trials": sub["trials"],
            "seed": sub["seed"],
        }
        key = json.dumps(params, sort_keys=True, default=str)
        if existing is not None and key in existing:
            rows.append(existing[key])
            continue
        g = build_graph(sub["graph"])
        kernel = build_kernel(sub["model"])
        ctx = {
            "graph": g,
            "kernel": kernel,
            "eps": float(sub["model"]["eps"]),
            "l_list": list(sub["estimator"]["l_list"]),
            "metric": sub["metric"],
        }
        est = M.mc_average(
            partial(_trial_metrics, ctx),
            trials=sub["trials"],
            seed_base=sub["seed"],
            jobs=cfg["jobs"],
            experiment_id=_experiment_id(params),
        )
        cols = _metric_columns(sub["metric"], ctx["l_list"], l_in_grid="l" in point)
        row = {**params}
        mean = np.atleast_1d(est.mean)
        se = np.atleast_1d(est.std_error)
        for i, col in enumerate(cols):
            row[f"{col}_mean"] = float(mean[i])
            row[f"{col}_se"] = float(se[i])
        rows.append(row)
    return rows


def _run_sweep(cfg: dict) -> list[dict]:
    points = _grid_points(cfg["grid"])
    budget = len(points) * cfg["trials"]
    print(f"sweep: {len(points)} grid points x {cfg['trials']} trials = {budget} trials total")
    if budget > DEFAULT_BUDGET and not cfg["force"]:
        raise ConfigError(
            f"sweep budget {budget} above {DEFAULT_BUDGET}; pass --force to run anyway"
        )
    existing: dict = {}
    out = cfg["out"]
    if os.path.exists(out):
        with open(out, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                params = {k: _parse_cell(v) for k, v in row.items()
                          if not (k.endswith("_mean") or k.endswith("_se"))}
                key = json.dumps(params, sort_keys=True, default=str)
                existing[key] = {k: _parse_cell(v) for k, v in row.items()}
    return _run_points(cfg, points, existing=existing)


def _parse_cell(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except (TypeError, ValueError):
            continue
    return v


# ----------------------------------------------------------------------
# verify suite
# ----------------------------------------------------------------------

def _close(a, b, tol):
    return abs(a - b) <= tol


def _check_torus():
    g = G.gen_torus(2, 5)
    assert g.n == 25 and g.num_edges == 50
    assert np.all(g.degrees() == 4)
    g.validate()
    box = {i * 5 + j for i in range(3) for j in range(3)}
    bnd = G.boundary(g, box)
    assert len(bnd) == 8 and bnd <= box
    return "torus(2,5): counts, degrees, boundary"


def _check_random_regular():
    g = G.gen_random_regular(16, 3, seed=7)
    assert g.is_simple() and np.all(g.degrees() == 3)
    g2 = G.gen_random_regular(16, 3, seed=7)
    assert np.array_equal(g.edges, g2.edges)
    return "configuration model: simple, 3-regular, seed-deterministic"


def _check_kernel():
    kern = kernel_zq(3, 0.3)
    assert _close(kern.table[1, 1, 0], 0.8, 1e-12)
    last = math.inf
    for p in np.linspace(0.0, 1.0, 11):
        mi = channel_mutual_information(kernel_zq(3, float(p)))
        assert mi <= last + 1e-12
        last = mi
    return "Z_q kernel table and MI monotone in p"


def _check_instance():
    g = G.gen_torus(2, 4)
    kern = kernel_zq(2, 0.0)
    inst = sample_instance(g, kern, 0.3, seed=3)
    inst.validate(g, kern)
    assert np.all(inst.y == (inst.theta0[g.edges[:, 0]] - inst.theta0[g.edges[:, 1]]) % 2)
    return "instances: side-channel consistency, noiseless parity"


def _check_tree_bp():
    rng = make_rng(11)
    for _ in range(10):
        g = G.gen_tree(3, 2)
        kern = kernel_zq(2, 0.25)
        inst = sample_instance(g, kern, 0.3, seed=int(rng.integers(1 << 30)))
        bp = I.bp_tree_marginals(g, kern, inst)
        ex = I.exact_posterior_marginals(g, kern, inst)
        assert np.abs(bp - ex).max() < 1e-10
    return "tree BP == brute force on 10 random instances"


def _check_locality():
    g = G.gen_torus(2, 5)
    kern = kernel_zq(2, 0.3)
    inst = sample_instance(g, kern, 0.2, seed=5)
    mu = I.local_marginal(g, 0, 1, kern, inst)
    mutated = Instance(theta0=inst.theta0, y=inst.y.copy(), xi=inst.xi.copy())
    b = G.ball(g, 0, 1)
    outside = np.setdiff1d(np.arange(g.num_edges), b.edge_ids)
    mutated.y[outside] = (mutated.y[outside] + 1) % 2
    mu2 = I.local_marginal(g, 0, 1, kern, mutated)
    assert np.array_equal(mu, mu2)
    return "local marginal ignores observations outside the ball"


def _check_thresholds():
    for q in (2, 3):
        for p in (0.2, 0.6):
            kern = kernel_zq(q, p)
            lhs = T.k_star(p, q)
            rhs = 2.0 * math.log(q) / channel_mutual_information(kern)
            assert _close(lhs, rhs, 1e-9)
    kern = kernel_zq(2, 1.0)
    res = T.s_star(T.uniform_overlap(2), 3, kern, restarts=2)
    assert _close(res.value, math.log(2), 1e-6)
    return "k_star identity; s_star(p=1) = log q"


def _check_recursion_zero():
    trace = R.simulate_root_statistic(3, 2, 0.4, 0.0, 3, 200, seed=2)
    assert np.all(trace.z_mean == 0.0) and np.all(trace.dtv2_mean == 0.0)
    return "eps=0: root marginals exactly uniform at q=2"


def _check_mc_determinism():
    exp = partial(_coin_trial, 2)
    a = M.mc_average(exp, trials=60, seed_base=4, jobs=1)
    b = M.mc_average(exp, trials=60, seed_base=4, jobs=2)
    assert float(a.mean) == float(b.mean) and float(a.std_error) == float(b.std_error)
    return "mc_average bit-identical across jobs"


def _coin_trial(q: int, seed: int) -> float:
    return float(make_rng(seed).random() < 0.5)


def _check_cmi():
    g = G.gen_torus(1, 3)
    kern = kernel_zq(2, 1.0)
    assert _close(I.conditional_mutual_information(g, kern, 0.0, 0, [1]), 0.0, 1e-12)
    table = I.cmi_table(G.gen_torus(1, 3), kernel_zq(2, 0.2))
    h = table.conditional_entropy(0.0, [0])
    i_self = table.cmi(0.0, 0, [0])
    assert _close(h, i_self, 1e-12)
    return "conditional MI: independence and self-information identities"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("graphs.torus", _check_torus),
    ("graphs.random_regular", _check_random_regular),
    ("model.kernel", _check_kernel),
    ("model.instance", _check_instance),
    ("inference.tree_bp", _check_tree_bp),
    ("inference.locality", _check_locality),
    ("thresholds.identities", _check_thresholds),
    ("tree_recursion.symmetry", _check_recursion_zero),
    ("metrics.determinism", _check_mc_determinism),
    ("inference.cmi", _check_cmi),
]


def run_verify(jobs: int = 1, verbose: bool = True) -> int:
    """Run the invariant suite; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            detail = fn()
            if verbose:
                print(f"PASS {name}: {detail}")
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures += 1
            if verbose:
                print(f"FAIL {name}: {exc}")
    return failures
