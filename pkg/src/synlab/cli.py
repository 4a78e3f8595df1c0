"""Command-line harness.

    synlab gen-data --config cfg.json --out runs/x
    synlab quality  --config cfg.json --out runs/x
    synlab run      --config cfg.json --out runs/x --jobs 2
    synlab sweep    --config cfg.json --out runs/x
    synlab verify   [--instances bad.json]
    synlab report   --out runs/x

Exit codes: 0 ok, 1 config/input error, 2 verification failure,
3 some strategy runs failed (the rest completed).
"""

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, _kernels, baselines, bayes
from .config import load_config
from .errors import ConfigError, ContractError
from .experiment import (RunData, build_data, model_config_for, quality_report, run_strategy,
                         sweep_point, value_label, with_seed)
from .quality import pearson, write_histogram_csv
from .syncheck import filtered_dataset
from .testbed import Dataset

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_PARTIAL = 0, 1, 2, 3
SWEEP_COLUMNS = ("axis", "value", "strategy", "n_seeds", "n_failed", "mean_accuracy",
                 "std_accuracy", "mean_js_tr", "mean_js_ts")
POINT_COLUMNS = ("axis", "value", "seed", "strategy", "accuracy", "js_tr", "js_ts", "status")
# (metric, accuracy source) correlated along each quality-knob axis
AXIS_PAIRS = {"noise": ("js_tr", "mixture"), "volume": ("js_ts", "tstr"),
              "coverage": ("js_ts", "tstr")}


def _clean(v):
    """JSON-safe: NaN/inf -> None, numpy scalars -> python."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if v != v else repr(v)
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


class Run:
    """Output bookkeeping for one verb: paths, wall times, manifest."""

    def __init__(self, verb, cfg):
        self.verb = verb
        self.cfg = cfg
        self.root = cfg.out
        self.outputs = []
        self.wall = {}
        self.t0 = time.perf_counter()
        os.makedirs(self.root, exist_ok=True)

    def path(self, *parts):
        p = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def record(self, path):
        rel = os.path.relpath(path, self.root)
        if rel not in self.outputs:
            self.outputs.append(rel)

    def finish(self, status="ok", extra=None):
        self.wall["total"] = time.perf_counter() - self.t0
        missing = [p for p in self.outputs if not os.path.exists(os.path.join(self.root, p))]
        if missing:
            raise ContractError(f"outputs missing on completion: {missing}")
        manifest = {
            "command": self.verb,
            "version": __version__,
            "config_hash": self.cfg.config_hash(),
            "config": self.cfg.to_dict(),
            "seeds": list(self.cfg.seeds),
            "outputs": sorted(self.outputs),
            "wall_times": self.wall,
            "numba": _kernels.USE_NUMBA,
            "status": status,
        }
        if extra:
            manifest.update(extra)
        _write_json(os.path.join(self.root, f"manifest_{self.verb}.json"), manifest)
        return manifest


def _data_dir(root, seed):
    return os.path.join(root, "data", f"seed_{seed}")


def _load_data(root, seed, feature_dim):
    d = _data_dir(root, seed)
    parts = {}
    for name in ("real_train", "real_test", "synthetic"):
        p = os.path.join(d, f"{name}.jsonl")
        if not os.path.exists(p):
            raise ConfigError(f"missing dataset {p}; run gen-data first")
        split = "test" if name == "real_test" else "train"
        parts[name] = Dataset.from_jsonl(p, split, feature_dim)
    return RunData(parts["real_train"], parts["real_test"], parts["synthetic"])


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(cfg):
    run = Run("gen-data", cfg)
    for seed in cfg.seeds:
        t = time.perf_counter()
        data = build_data(cfg.testbed, seed)
        for name, ds in (("real_train", data.real_train), ("real_test", data.real_test),
                         ("synthetic", data.synthetic)):
            p = run.path("data", f"seed_{seed}", f"{name}.jsonl")
            ds.to_jsonl(p)
            run.record(p)
        run.wall[f"seed_{seed}"] = time.perf_counter() - t
    run.finish()
    print(f"gen-data: {len(cfg.seeds)} seed(s) -> {os.path.join(cfg.out, 'data')}")
    return EXIT_OK


# ----------------------------------------------------------------- quality

def _quality_entry(data, cfg, seed, synthetic=None):
    mc = model_config_for(cfg.testbed, cfg.hidden_dims, seed, data.real_train)
    return quality_report(data, mc, with_seed(cfg.quality_train, seed), synthetic)


def cmd_quality(cfg):
    run = Run("quality", cfg)
    per_seed = {}
    for seed in cfg.seeds:
        t = time.perf_counter()
        data = _load_data(cfg.out, seed, cfg.testbed.feature_dim)
        if len(data.synthetic) == 0:
            raise ConfigError(f"seed {seed}: synthetic set is empty, nothing to score")
        rep = _quality_entry(data, cfg, seed)
        p = run.path("quality", f"seed_{seed}", "report.json")
        rep.write_json(p)
        run.record(p)
        for part in (rep.tr, rep.ts):
            p = run.path("quality", f"seed_{seed}", f"hist_{part.setup}.csv")
            write_histogram_csv(part, p)
            run.record(p)
        entry = {"raw": rep.to_dict(), "filtered": None}
        fpath = os.path.join(cfg.out, "run", f"seed_{seed}", "syncheck_filtered.jsonl")
        if os.path.exists(fpath):
            filt = Dataset.from_jsonl(fpath, "train", cfg.testbed.feature_dim)
            if len(filt):
                frep = _quality_entry(data, cfg, seed, filt)
                p = run.path("quality", f"seed_{seed}", "filtered_report.json")
                frep.write_json(p)
                run.record(p)
                entry["filtered"] = frep.to_dict()
        per_seed[str(seed)] = entry
        run.wall[f"seed_{seed}"] = time.perf_counter() - t

    def means(kind):
        reps = [e[kind] for e in per_seed.values() if e[kind] is not None]
        if not reps:
            return None
        return {k: float(np.mean([r[k] for r in reps])) for k in ("js_tr", "js_ts")}

    summary = {"config_hash": cfg.config_hash(), "seeds": per_seed,
               "mean": {"raw": means("raw"), "filtered": means("filtered")}}
    p = run.path("quality", "summary.json")
    _write_json(p, summary)
    run.record(p)
    run.finish()
    m = summary["mean"]["raw"]
    print(f"quality: js_tr={m['js_tr']:.4f} js_ts={m['js_ts']:.4f} (mean of {len(cfg.seeds)})")
    return EXIT_OK


# --------------------------------------------------------------------- run

def _run_seed(args):
    """One seed, all strategies.  Top-level so worker processes can pickle it."""
    cfg, seed = args
    t = time.perf_counter()
    data = _load_data(cfg.out, seed, cfg.testbed.feature_dim)
    mc = model_config_for(cfg.testbed, cfg.hidden_dims, seed, data.real_train)
    tc = with_seed(cfg.train, seed)
    rows, files, cache = [], [], {}
    for name in cfg.strategies:
        row = {"strategy": name, "seed": seed, "config_hash": cfg.config_hash()}
        try:
            res = run_strategy(name, data, mc, tc, cfg.similarity_threshold, cache,
                               track_test=True)
            row.update(accuracy=_fmt(res.test_accuracy), kept_fraction=_fmt(res.kept_fraction),
                       status="ok")
            if name == "syncheck":
                hist = res.extra["history"]
                d = os.path.join(cfg.out, "run", f"seed_{seed}")
                os.makedirs(d, exist_ok=True)
                hp = os.path.join(d, "syncheck_history.csv")
                hist.write_csv(hp)
                fp = os.path.join(d, "syncheck_filtered.jsonl")
                filtered_dataset(data.synthetic, hist.final_inliers).to_jsonl(fp)
                files += [hp, fp]
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - crash isolation
            msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            row.update(accuracy="", kept_fraction="", status=f"failed: {msg}"[:200])
        rows.append(row)
    return seed, rows, files, time.perf_counter() - t


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def cmd_run(cfg, jobs=1):
    run = Run("run", cfg)
    for seed in cfg.seeds:   # fail fast on missing inputs before any training
        for name in ("real_train", "real_test", "synthetic"):
            if not os.path.exists(os.path.join(_data_dir(cfg.out, seed), f"{name}.jsonl")):
                raise ConfigError(f"missing data for seed {seed}; run gen-data first")
    results = _map(_run_seed, [(cfg, s) for s in cfg.seeds], jobs)
    results.sort(key=lambda r: r[0])
    lb = run.path("run", "leaderboard.csv")
    if os.path.exists(lb):
        os.remove(lb)
    rows = []
    for seed, seed_rows, files, wall in results:
        rows += seed_rows
        for f in files:
            run.record(f)
        run.wall[f"seed_{seed}"] = wall
    baselines.append_leaderboard(lb, rows)
    run.record(lb)
    n_failed = sum(r["status"] != "ok" for r in rows)
    run.finish("partial" if n_failed else "ok", {"n_failed": n_failed})
    for name in cfg.strategies:
        accs = [float(r["accuracy"]) for r in rows if r["strategy"] == name and r["status"] == "ok"]
        mean = f"{np.mean(accs):.4f}" if accs else "n/a"
        print(f"{name:18s} mean acc {mean}  ({len(accs)}/{len(cfg.seeds)} ok)")
    return EXIT_PARTIAL if n_failed else EXIT_OK


# ------------------------------------------------------------------- sweep

def _sweep_job(args):
    cfg, axis, value, seed = args
    return sweep_point(axis, value, seed, cfg.testbed, cfg.hidden_dims, cfg.train,
                       cfg.sweep.strategies, cfg.similarity_threshold, cfg.quality_train)


def aggregate_sweep(points):
    """Per (axis, value, strategy) means over seeds; value order as first seen."""
    groups = {}
    for r in points:
        groups.setdefault((r["axis"], r["value"], r["strategy"]), []).append(r)
    out = []
    for (axis, value, strategy), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        acc = np.array([r["accuracy"] for r in ok], dtype=float)
        js_tr = np.array([r["js_tr"] for r in rs], dtype=float)
        js_ts = np.array([r["js_ts"] for r in rs], dtype=float)
        out.append({
            "axis": axis, "value": value, "strategy": strategy, "n_seeds": len(ok),
            "n_failed": len(rs) - len(ok),
            "mean_accuracy": float(acc.mean()) if acc.size else float("nan"),
            "std_accuracy": float(acc.std()) if acc.size else float("nan"),
            "mean_js_tr": float(np.nanmean(js_tr)) if np.isfinite(js_tr).any() else float("nan"),
            "mean_js_ts": float(np.nanmean(js_ts)) if np.isfinite(js_ts).any() else float("nan"),
        })
    return out


def correlation_summary(rows, axis):
    """Pearson r between the axis' quality metric and the paired accuracy."""
    metric, source = AXIS_PAIRS[axis]
    sel = [r for r in rows if r["axis"] == axis and r["strategy"] == source]
    pts = [(r["value"], r[f"mean_{metric}"], r["mean_accuracy"]) for r in sel
           if math.isfinite(r[f"mean_{metric}"]) and math.isfinite(r["mean_accuracy"])]
    out = {"metric": metric, "accuracy_of": source, "values": [p[0] for p in pts],
           "metric_means": [p[1] for p in pts], "accuracy_means": [p[2] for p in pts],
           "pearson_r": None, "t_stat": None}
    if len(pts) >= 3:
        try:
            r, t = pearson([p[1] for p in pts], [p[2] for p in pts])
            out["pearson_r"], out["t_stat"] = r, t
        except ContractError:
            pass
    return out


def cmd_sweep(cfg, jobs=1):
    run = Run("sweep", cfg)
    axes = cfg.sweep.axes()
    if not axes:
        raise ConfigError("sweep needs at least one axis (noise, volume, coverage, ablation)")
    jobs_list = [(cfg, axis, v, s) for axis in axes for v in getattr(cfg.sweep, axis)
                 for s in cfg.seeds]
    t = time.perf_counter()
    points = [r for rows in _map(_sweep_job, jobs_list, jobs) for r in rows]
    run.wall["points"] = time.perf_counter() - t
    order = {(a, value_label(a, v)): i for i, (_, a, v, _) in enumerate(jobs_list)}
    points.sort(key=lambda r: (order[(r["axis"], r["value"])], r["seed"], r["strategy"]))
    p = run.path("sweep", "points.csv")
    _write_csv(p, POINT_COLUMNS, points)
    run.record(p)
    agg = aggregate_sweep(points)
    p = run.path("sweep", "sweep.csv")
    _write_csv(p, SWEEP_COLUMNS, agg)
    run.record(p)
    summary = {"config_hash": cfg.config_hash(), "axes": {},
               "n_failed": sum(r["status"] != "ok" for r in points)}
    for axis in axes:
        if axis in AXIS_PAIRS:
            summary["axes"][axis] = correlation_summary(agg, axis)
        else:
            summary["axes"][axis] = {
                "accuracy_of": "syncheck",
                "variants": {r["value"]: r["mean_accuracy"] for r in agg
                             if r["axis"] == axis and r["strategy"] == "syncheck"},
            }
    p = run.path("sweep", "summary.json")
    _write_json(p, summary)
    run.record(p)
    run.finish("partial" if summary["n_failed"] else "ok")
    for axis, s in summary["axes"].items():
        if "pearson_r" in s:
            r = s["pearson_r"]
            print(f"{axis}: r({s['metric']}, {s['accuracy_of']} acc) = "
                  + ("n/a" if r is None else f"{r:+.3f}"))
        else:
            print(f"{axis}: " + ", ".join(f"{k}={v:.4f}" for k, v in s["variants"].items()))
    return EXIT_PARTIAL if summary["n_failed"] else EXIT_OK


# ------------------------------------------------------------------ verify

def cmd_verify(cfg, instances=None):
    run = Run("verify", cfg)
    v = cfg.verify
    path = instances or v.instances_file
    extra, const = [], None
    if path:
        try:
            extra, const = bayes.load_instances(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load instances {path}: {exc}") from exc
    t = time.perf_counter()
    summary = bayes.verify_all(v.n_instances, v.seed, v.tv_constant, v.lemma_per_grid,
                               v.noise_rates, extra, const)
    run.wall["checks"] = time.perf_counter() - t
    p = run.path("verify", "verify.json")
    _write_json(p, summary)
    run.record(p)
    run.finish("ok" if summary["all_hold"] else "violated")
    for name, c in summary["checks"].items():
        tag = "" if c["asserted"] else "  (informational)"
        print(f"{name:32s} {c['passed']:5d}/{c['n']:<5d} worst slack "
              f"{'n/a' if c['worst_slack'] is None else format(c['worst_slack'], '.3g')}{tag}")
    return EXIT_OK if summary["all_hold"] else EXIT_VERIFY


# ------------------------------------------------------------------ report

def _read_leaderboard(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg):
    run = Run("report", cfg)
    root = cfg.out
    report = {"config_hash": cfg.config_hash(), "strategies": None, "quality": None,
              "sweep": None, "verify": None}
    lb = os.path.join(root, "run", "leaderboard.csv")
    if os.path.exists(lb):
        rows = _read_leaderboard(lb)
        strat = {}
        for name in dict.fromkeys(r["strategy"] for r in rows):
            rs = [r for r in rows if r["strategy"] == name]
            ok = [r for r in rs if r["status"] == "ok"]
            acc = np.array([float(r["accuracy"]) for r in ok])
            kept = np.array([float(r["kept_fraction"]) for r in ok])
            strat[name] = {"n": len(ok), "n_failed": len(rs) - len(ok),
                           "mean_accuracy": float(acc.mean()) if acc.size else None,
                           "std_accuracy": float(acc.std()) if acc.size else None,
                           "mean_kept_fraction": float(kept.mean()) if kept.size else None}
        report["strategies"] = strat
        p = run.path("report", "strategies.csv")
        _write_csv(p, ("strategy", "n", "n_failed", "mean_accuracy", "std_accuracy",
                       "mean_kept_fraction"),
                   [dict(strategy=k, **{c: (float("nan") if x is None else x)
                                        for c, x in v.items()}) for k, v in strat.items()])
        run.record(p)
    for key, rel in (("quality", ("quality", "summary.json")),
                     ("sweep", ("sweep", "summary.json")),
                     ("verify", ("verify", "verify.json"))):
        p = os.path.join(root, *rel)
        if os.path.exists(p):
            with open(p) as fh:
                doc = json.load(fh)
            report[key] = doc["mean"] if key == "quality" else (
                doc["axes"] if key == "sweep" else {"all_hold": doc["all_hold"]})
    if all(report[k] is None for k in ("strategies", "quality", "sweep", "verify")):
        raise ConfigError(f"nothing to report under {root}")
    p = run.path("report", "report.json")
    _write_json(p, report)
    run.record(p)
    run.finish()
    print(f"report: {p}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser():
    ap = argparse.ArgumentParser(prog="synlab", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("gen-data", "quality", "run", "sweep", "verify", "report"):
        p = sub.add_parser(verb)
        p.add_argument("--config", help="experiment JSON (defaults if omitted)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if verb == "verify":
            p.add_argument("--instances", help="extra TV-bound instances (JSON)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config).with_overrides(args.seeds, args.out)
        if args.verb == "gen-data":
            return cmd_gen_data(cfg)
        if args.verb == "quality":
            return cmd_quality(cfg)
        if args.verb == "run":
            return cmd_run(cfg, args.jobs)
        if args.verb == "sweep":
            return cmd_sweep(cfg, args.jobs)
        if args.verb == "verify":
            return cmd_verify(cfg, args.instances)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"synlab {args.verb}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
