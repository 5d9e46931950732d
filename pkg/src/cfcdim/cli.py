"""Command-line pipeline: grid, simulate, replay, optimize, dataset,
baseline, cnn interop and report rendering.

Options resolve as: command-line flag > config file ([command] section,
then top level) > built-in default. The built-in defaults reproduce the
reference scenario (150 m blocks, 3 nodes/s per border link, alpha 0.9,
beta 1, 4 MHz, 4 MB content, 100 m radius, 60 km/h, 1 s sampling);
--desk-scale shrinks duration and arrivals to laptop size.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib  # python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__, baselines, dataset as ds_mod, predictions, report
from .cost import CostConfig, all_off, all_on, cost_report, evaluate_strategy
from .engine import FixedSNR, ReplayConfig, Replayer, StrategyMatrix
from .grid import GridError, RoadGrid, build_manhattan_grid, central_zoi, grid_layout, set_zoi
from .manifest import write_manifest
from .mobility import (
    ConstantSpeed,
    MobilityConfig,
    TraceError,
    UniformSpeed,
    load_trace,
    save_trace,
    simulate_mobility,
)
from .optimize import AnnealParams, NoFeasibleSolutionError, SearchConfig, optimize

DEFAULTS = {
    "blocks_x": 3,
    "blocks_y": 4,
    "block_side": 150.0,
    "arrival_rate": 3.0,
    "speed_kmh": 60.0,
    "tx_radius": 100.0,
    "duration": 3750.0,
    "sample_dt": 1.0,
    "intervals": "1875,1875",
    "content_size": 32e6,
    "bandwidth": 4e6,
    "snr_db": 10.0,
    "alpha_target": 0.9,
    "beta": 1.0,
    "mc_runs": 3,
    "seed": 0,
    "zoi": "center:3",
}

DESK_SCALE = {
    "arrival_rate": 0.08,
    "duration": 150.0,
    "intervals": "75,75",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise UsageError(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}")


class Options:
    """Layered option lookup: CLI > config section > config top > defaults."""

    def __init__(self, args: argparse.Namespace, config: dict, section: str):
        self.args = vars(args)
        self.config = config
        self.section = config.get(section, {})
        self.desk = bool(self.args.get("desk_scale") or self.section.get("desk_scale")
                         or config.get("desk_scale"))

    def get(self, key: str, fallback=None):
        v = self.args.get(key)
        if v is not None:
            return v
        if key in self.section:
            return self.section[key]
        if key in self.config:
            return self.config[key]
        if self.desk and key in DESK_SCALE:
            return DESK_SCALE[key]
        if key in DEFAULTS:
            return DEFAULTS[key]
        return fallback

    def require(self, key: str):
        v = self.get(key)
        if v is None:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")
        return v


def _parse_intervals(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"cannot parse intervals {text!r}")


def _speed_model(opt: Options):
    rng = opt.get("speed_range")
    if rng is not None:
        if isinstance(rng, str):
            lo, hi = (float(v) for v in rng.split(","))
        else:
            lo, hi = float(rng[0]), float(rng[1])
        return UniformSpeed(lo_kmh=lo, hi_kmh=hi)
    return ConstantSpeed(kmh=float(opt.get("speed_kmh")))


def _mobility_cfg(opt: Options, seed=None) -> MobilityConfig:
    return MobilityConfig(
        arrival_rate=float(opt.get("arrival_rate")),
        speed_model=_speed_model(opt),
        tx_radius=float(opt.get("tx_radius")),
        duration=float(opt.get("duration")),
        sample_dt=float(opt.get("sample_dt")),
        rng_seed=int(opt.get("seed") if seed is None else seed),
    )


def _replay_cfg(opt: Options) -> ReplayConfig:
    snr_db = float(opt.get("snr_db"))
    return ReplayConfig(
        intervals=_parse_intervals(opt.get("intervals")),
        content_size=float(opt.get("content_size")),
        channel_bandwidth=float(opt.get("bandwidth")),
        snr_model=FixedSNR(snr_linear=10 ** (snr_db / 10.0)),
        rng_seed=int(opt.get("seed")),
        monte_carlo_runs=int(opt.get("mc_runs")),
    )


def _cost_cfg(opt: Options) -> CostConfig:
    return CostConfig(
        content_size=float(opt.get("content_size")),
        beta=float(opt.get("beta")),
        alpha_target=float(opt.get("alpha_target")),
    )


def _load_grid(opt: Options) -> RoadGrid:
    path = opt.require("grid")
    with open(path) as fh:
        return RoadGrid.from_json_dict(json.load(fh))


def _load_strategy(spec: str, num_links: int, num_intervals: int, levels: int) -> StrategyMatrix:
    if spec == "all-on":
        return all_on(num_links, num_intervals, quantization_levels=levels)
    if spec == "all-on-drop":
        return all_on(num_links, num_intervals, quantization_levels=levels, b_value=0.0)
    if spec == "all-off":
        return all_off(num_links, num_intervals, quantization_levels=levels)
    with open(spec) as fh:
        return StrategyMatrix.from_json_dict(json.load(fh))


def _write_json(path: str, doc: dict) -> str:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _finish(args, opt: Options, outputs: list[str], started: float,
            manifest_path: str | None = None) -> int:
    if manifest_path is None:
        manifest_path = outputs[0] + ".manifest.json"
    write_manifest(
        manifest_path,
        command=sys.argv[1:] if sys.argv[0].endswith(("cfcdim", "cli.py")) else list(sys.argv),
        config_paths=[args.config] if args.config else [],
        seeds={"seed": int(opt.get("seed"))},
        outputs=outputs,
        started=started,
    )
    return 0


# --- commands ----------------------------------------------------------------

def cmd_grid_generate(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "grid")
    bx, by = int(opt.get("blocks_x")), int(opt.get("blocks_y"))
    grid = build_manhattan_grid(bx, by, float(opt.get("block_side")))
    zoi = str(opt.get("zoi"))
    if zoi.startswith("center"):
        n = int(zoi.split(":")[1]) if ":" in zoi else 1
        grid = central_zoi(grid, n)
    elif zoi == "all":
        grid = set_zoi(grid, [ln.id for ln in grid.links])
    elif zoi not in ("", "none"):
        grid = set_zoi(grid, [int(v) for v in zoi.split(",")])
    out = opt.require("out")
    with open(out, "w") as fh:
        fh.write(grid.to_json())
        fh.write("\n")
    print(f"grid: {grid.num_links} links ({bx}x{by} blocks), "
          f"{len(grid.border_link_ids())} border, zoi={sorted(grid.zoi)}")
    return _finish(args, opt, [out], started)


def cmd_grid_inspect(args, config) -> int:
    opt = Options(args, config, "grid")
    grid = _load_grid(opt)
    layout = grid_layout(grid)
    lengths = sorted({round(ln.length, 3) for ln in grid.links})
    print(json.dumps(
        {
            "links": grid.num_links,
            "border_links": len(grid.border_link_ids()),
            "zoi": sorted(grid.zoi),
            "link_lengths_m": lengths,
            "layout": {"height": layout["height"], "width": layout["width"]},
        },
        indent=2, sort_keys=True,
    ))
    return 0


def cmd_simulate(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "simulate")
    grid = _load_grid(opt)
    cfg = _mobility_cfg(opt)
    trace = simulate_mobility(grid, cfg)
    out = opt.require("out")
    save_trace(trace, out)
    print(
        f"trace: {len(trace.samples)} samples, {len(trace.contacts)} contacts, "
        f"{len({e[0] for e in trace.entries})} nodes"
    )
    return _finish(args, opt, [out], started)


def cmd_replay(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "replay")
    grid = _load_grid(opt)
    trace = load_trace(opt.require("trace"))
    replay_cfg = _replay_cfg(opt)
    cost_cfg = _cost_cfg(opt)
    levels = int(opt.get("quantization_levels", 11))
    strategy = _load_strategy(
        str(opt.require("strategy")), grid.num_links, len(replay_cfg.intervals), levels
    )
    replayer = Replayer(trace, grid, replay_cfg)
    result = evaluate_strategy(
        trace, strategy, replay_cfg, grid, cost_cfg, replayer=replayer
    )
    benchmark_cost = None
    if opt.get("compare_all_on"):
        bench = evaluate_strategy(
            trace, all_on(grid.num_links, len(replay_cfg.intervals), levels),
            replay_cfg, grid, cost_cfg, replayer=replayer,
        )
        benchmark_cost = bench.cost
    doc = {
        "algorithm": "replay",
        "scenario": opt.get("scenario", os.path.basename(str(opt.require("trace")))),
        "alpha_target": cost_cfg.alpha_target,
        "grid_layout": grid_layout(grid),
        "strategy_digest": strategy.digest(),
        "result": result.to_json_dict(),
        "cost_report": cost_report(result, benchmark_cost),
    }
    out = opt.require("out")
    outputs = [_write_json(out, doc)]
    feats_csv = opt.get("features_csv")
    if feats_csv:
        with open(feats_csv, "w") as fh:
            fh.write(result.features.to_csv())
        outputs.append(feats_csv)
    rep = doc["cost_report"]
    print(f"cost={rep['cost']:.6g} feasible={rep['feasible']} alpha={rep['alpha']}")
    return _finish(args, opt, outputs, started)


def cmd_optimize(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "optimize")
    grid = _load_grid(opt)
    trace = load_trace(opt.require("trace"))
    replay_cfg = _replay_cfg(opt)
    cost_cfg = _cost_cfg(opt)
    search_cfg = SearchConfig(
        method=str(opt.get("method", "greedy")),
        max_oracle_calls=int(opt.get("max_oracle_calls", 600)),
        anneal=AnnealParams(
            cooling_rate=float(opt.get("cooling_rate", 0.95)),
            moves_per_temp=int(opt.get("moves_per_temp", 20)),
        ),
        monte_carlo_runs=int(opt.get("search_mc_runs", opt.get("mc_runs"))),
        rng_seed=int(opt.get("seed")),
        quantization_levels=int(opt.get("quantization_levels", 11)),
        feasibility_margin=float(opt.get("margin", 0.01)),
    )
    log_path = opt.get("log")
    strategy, result = optimize(
        trace, grid, replay_cfg, cost_cfg, search_cfg, log_path=log_path
    )
    replayer = Replayer(trace, grid, replay_cfg)
    bench = evaluate_strategy(
        trace,
        all_on(grid.num_links, len(replay_cfg.intervals), search_cfg.quantization_levels),
        replay_cfg, grid, cost_cfg, replayer=replayer,
        runs=search_cfg.monte_carlo_runs * search_cfg.revalidation_factor,
        rng_seed=search_cfg.rng_seed + 1,
    )
    out = opt.require("out")
    outputs = [_write_json(out, strategy.to_json_dict())]
    doc = {
        "algorithm": f"optimize-{search_cfg.method}",
        "scenario": opt.get("scenario", os.path.basename(str(opt.require("trace")))),
        "alpha_target": cost_cfg.alpha_target,
        "grid_layout": grid_layout(grid),
        "strategy_digest": strategy.digest(),
        "result": result.to_json_dict(),
        "cost_report": cost_report(result, bench.cost),
        "oracle_log": log_path,
    }
    result_out = opt.get("result_out")
    if result_out:
        outputs.append(_write_json(result_out, doc))
    if log_path:
        outputs.append(log_path)
    rep = doc["cost_report"]
    print(
        f"optimized cost={rep['cost']:.6g} savings={rep['savings_vs_all_on']:.4f} "
        f"feasible={rep['feasible']}"
    )
    return _finish(args, opt, outputs, started)


def cmd_dataset_build(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "dataset")
    grid = _load_grid(opt)
    replay_cfg = _replay_cfg(opt)
    cost_cfg = _cost_cfg(opt)
    levels = int(opt.get("quantization_levels", 11))
    sampler = ds_mod.StrategySampler(
        quantization_levels=levels,
        optimizer_share=float(opt.get("optimizer_share", 0.5)),
        random_mode=str(opt.get("sampler_mode", "uniform")),
        b_floor_level=int(opt.get("sampler_b_floor", 9)),
        search_cfg=SearchConfig(
            max_oracle_calls=int(opt.get("sampler_budget", 150)),
            monte_carlo_runs=max(1, int(opt.get("mc_runs")) - 1),
            quantization_levels=levels,
            rng_seed=int(opt.get("seed")),
            feasibility_margin=float(opt.get("sampler_margin", 0.01)),
        ),
    )
    mob_cfgs = [_mobility_cfg(opt)]
    extra = opt.get("mobility_cfgs")
    if extra:
        mob_cfgs = [MobilityConfig.from_json_dict(doc) for doc in extra]
    dataset = ds_mod.build_dataset(
        grid, mob_cfgs, replay_cfg, cost_cfg, sampler,
        n_records=int(opt.require("records")),
        rng_seed=int(opt.get("seed")),
        episodes_per_trace=int(opt.get("episodes_per_trace", 8)),
        n_jobs=int(opt.get("jobs", 1)),
    )
    if opt.get("collapse_cheapest"):
        dataset = ds_mod.collapse_to_cheapest(
            dataset, min_slack=float(opt.get("collapse_min_slack", 0.0))
        )
    out = opt.require("out")
    ds_mod.save_dataset(dataset, out, traces_dir=opt.get("traces_dir"))
    outputs = [out]
    if opt.get("traces_dir"):
        outputs += [
            os.path.join(opt.get("traces_dir"), f)
            for f in sorted(dataset.header.get("trace_files", {}).values())
        ]
    csv_out = opt.get("csv_out")
    if csv_out:
        with open(csv_out, "w") as fh:
            fh.write(ds_mod.dataset_to_csv(dataset))
        outputs.append(csv_out)
    n_off = sum(1 for r in dataset.records if not r.feasible)
    print(
        f"dataset: {len(dataset.records)} records, {len(dataset.traces)} traces, "
        f"{n_off} relabeled all-off"
    )
    return _finish(args, opt, outputs, started)


def cmd_dataset_split(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "dataset")
    dataset = ds_mod.load_dataset(opt.require("dataset"))
    folds = ds_mod.kfold_split(dataset, int(opt.require("k")), seed=int(opt.get("seed")))
    out = opt.require("out")
    _write_json(
        out,
        {
            "k": int(opt.require("k")),
            "seed": int(opt.get("seed")),
            "folds": [{"train": tr, "validation": va} for tr, va in folds],
        },
    )
    print(f"{len(folds)} folds over {len(dataset.records)} records")
    return _finish(args, opt, [out], started)


def cmd_dataset_inspect(args, config) -> int:
    opt = Options(args, config, "dataset")
    dataset = ds_mod.load_dataset(opt.require("dataset"))
    labels = dataset.label_matrix()
    print(json.dumps(
        {
            "records": len(dataset.records),
            "episodes": len({r.episode_id for r in dataset.records}),
            "traces": len({r.trace_ref for r in dataset.records}),
            "num_links": dataset.num_links,
            "num_intervals": dataset.header["num_intervals"],
            "feasible_records": sum(1 for r in dataset.records if r.feasible),
            "all_off_records": int((labels.sum(axis=1) == 0).sum()),
            "alpha_target": dataset.header["alpha_target"],
        },
        indent=2, sort_keys=True,
    ))
    return 0


def cmd_baseline_train(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "baseline")
    dataset = ds_mod.load_dataset(opt.require("dataset"))
    kind = str(opt.require("model"))
    spec: dict = {"kind": kind}
    if kind == "knn":
        spec["k"] = int(opt.get("k", 5))
    elif kind == "decision_tree":
        spec["max_depth"] = int(opt.get("max_depth", 8))
        spec["min_leaf"] = int(opt.get("min_leaf", 1))
    elif kind == "random_forest":
        spec.update(
            n_trees=int(opt.get("n_trees", 15)),
            max_depth=int(opt.get("max_depth", 8)),
            min_leaf=int(opt.get("min_leaf", 1)),
            feature_subsample=float(opt.get("feature_subsample", 1.0)),
            bootstrap=not bool(opt.get("no_bootstrap")),
            rng_seed=int(opt.get("seed")),
        )
    elif kind == "constant":
        spec["a_level"] = int(opt.get("a_level", 0))
        spec["b_level"] = int(opt.get("b_level", 0))
    model = baselines.train(spec, dataset)
    out = opt.require("out")
    baselines.save_model(model, out)
    print(f"trained {kind} on {len(dataset.records)} records")
    return _finish(args, opt, [out], started)


def _prediction_metrics(dataset, preds, truths, episodes, opt, algorithm: str):
    """Shared metrics assembly for baseline eval and cnn eval-predictions."""
    micro = baselines.f_score(preds, truths, "micro")
    macro = baselines.f_score(
        preds, truths, "macro", n_classes=dataset.header["quantization_levels"]
    )
    rejection = savings = None
    details: dict = {}
    if episodes is not None:
        rejected = sum(1 for ep in episodes if not ep.feasible)
        rejection = rejected / len(episodes) if episodes else 0.0
        grid = RoadGrid.from_json_dict(dataset.header["grid"])
        replay_cfg = ReplayConfig.from_json_dict(dataset.header["replay_cfg"])
        cost_cfg = CostConfig.from_json_dict(dataset.header["cost_cfg"])
        bench_costs = {}
        levels = dataset.header["quantization_levels"]
        for ref, trace in dataset.traces.items():
            bench = evaluate_strategy(
                trace,
                all_on(grid.num_links, len(replay_cfg.intervals), levels),
                replay_cfg, grid, cost_cfg,
            )
            bench_costs[ref] = bench.cost
        summary = baselines.savings_summary(episodes, bench_costs)
        savings = summary["mean_savings_feasible"]
        details["episodes"] = [
            {
                "episode_id": ep.episode_id,
                "trace_ref": ep.trace_ref,
                "feasible": ep.feasible,
                "cost": ep.cost,
            }
            for ep in episodes
        ]
        details["savings_summary"] = summary
    row = {
        "scenario": opt.get("scenario", "default"),
        "algorithm": algorithm,
        "train_size": opt.get("train_size"),
        "f_score": micro,
        "rejection_prob": rejection,
        "savings": savings,
    }
    return row, {"f_score_micro": micro, "f_score_macro": macro, **details}


def cmd_baseline_eval(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "baseline")
    model = baselines.load_model(opt.require("model"))
    skip_rejection = bool(opt.get("skip_rejection"))
    dataset = ds_mod.load_dataset(opt.require("dataset"), load_traces=not skip_rejection)
    preds = model.predict(dataset.feature_matrix(mobility_only=True))
    truths = dataset.label_matrix()
    episodes = None
    if not skip_rejection:
        _, episodes = baselines.rejection_probability(model, dataset)
    row, details = _prediction_metrics(
        dataset, preds, truths, episodes, opt, algorithm=model.kind
    )
    out = opt.require("out")
    _write_json(out, {"rows": [row], "details": details})
    print(
        f"{model.kind}: f_score={row['f_score']:.4f} rejection={row['rejection_prob']}"
    )
    return _finish(args, opt, [out], started)


def cmd_cnn_export_config(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "cnn")
    dataset_path = os.path.abspath(opt.require("dataset"))
    dataset = ds_mod.load_dataset(dataset_path)
    doc = {
        "schema_version": 1,
        "dataset_path": dataset_path,
        "tensor_layout": dataset.header["grid_layout"],
        "feature_order": dataset.header["feature_order"],
        "pm_features": dataset.header["pm_features"],
        "num_links": dataset.num_links,
        "num_intervals": dataset.header["num_intervals"],
        "quantization_levels": dataset.header["quantization_levels"],
        "alpha_target": dataset.header["alpha_target"],
        "hyperparams": {
            "conv_filters": [8, 16],
            "kernel_size": 3,
            "pool_size": 2,
            "dense_units": 64,
            "epochs": int(opt.get("epochs", 8)),
            "batch_size": int(opt.get("batch_size", 256)),
            "learning_rate": float(opt.get("learning_rate", 2e-3)),
            "folds": int(opt.get("folds", 10)),
            "seed": int(opt.get("seed")),
        },
    }
    out = opt.require("out")
    _write_json(out, doc)
    print(f"exported learner config for {dataset.num_links}-link layout")
    return _finish(args, opt, [out], started)


def cmd_cnn_eval_predictions(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "cnn")
    dataset = ds_mod.load_dataset(opt.require("dataset"), load_traces=True)
    rows, warnings = predictions.parse_predictions(
        opt.require("predictions"),
        num_links=dataset.num_links,
        quantization_levels=dataset.header["quantization_levels"],
    )
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if warnings and opt.get("strict", True):
        raise UsageError(f"{len(warnings)} warnings parsing predictions; aborting")
    by_id = {row["record_id"]: row for row in rows}
    missing = [r.record_id for r in dataset.records if r.record_id not in by_id]
    if missing:
        raise UsageError(
            f"predictions missing {len(missing)} records (first: {missing[0]})"
        )
    L = dataset.num_links
    preds = np.array(
        [by_id[r.record_id]["a_levels"] + by_id[r.record_id]["b_levels"]
         for r in dataset.records],
        dtype=int,
    )
    truths = dataset.label_matrix()

    class _FilePredictions:
        kind = str(opt.get("algorithm", "cnn"))

        def predict(self, X):
            return preds

    _, episodes = baselines.rejection_probability(_FilePredictions(), dataset)
    row, details = _prediction_metrics(
        dataset, preds, truths, episodes, opt, algorithm=str(opt.get("algorithm", "cnn"))
    )
    details["parse_warnings"] = warnings
    out = opt.require("out")
    _write_json(out, {"rows": [row], "details": details})
    print(
        f"{row['algorithm']}: f_score={row['f_score']:.4f} "
        f"rejection={row['rejection_prob']:.4f} warnings={len(warnings)}"
    )
    return _finish(args, opt, [out], started)


def cmd_report(args, config) -> int:
    started = time.time()
    opt = Options(args, config, "report")
    out_dir = opt.require("out_dir")
    inputs = opt.require("inputs")
    written = report.render_report(list(inputs), out_dir)
    print("report files:")
    for path in written:
        print(f"  {path}")
    return _finish(
        args, opt, written, started, manifest_path=os.path.join(out_dir, "manifest.json")
    )


# --- parser ------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="cfcdim", description=__doc__)
    p.add_argument("--version", action="version", version=f"cfcdim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML or JSON config file")
        sp.add_argument("--desk-scale", action="store_true", default=None,
                        help="shrink duration/arrivals to laptop scale")
        sp.add_argument("--seed", type=int)

    g = sub.add_parser("grid", help="generate or inspect road grids")
    gsub = g.add_subparsers(dest="subcommand", required=True)
    gg = gsub.add_parser("generate")
    common(gg)
    gg.add_argument("--blocks-x", type=int)
    gg.add_argument("--blocks-y", type=int)
    gg.add_argument("--block-side", type=float)
    gg.add_argument("--zoi", help="'center[:n]', 'all', or comma-separated link ids")
    gg.add_argument("--out")
    gg.set_defaults(func=cmd_grid_generate)
    gi = gsub.add_parser("inspect")
    common(gi)
    gi.add_argument("--grid", required=True)
    gi.set_defaults(func=cmd_grid_inspect)

    s = sub.add_parser("simulate", help="generate a mobility contact trace")
    common(s)
    s.add_argument("--grid")
    s.add_argument("--arrival-rate", type=float)
    s.add_argument("--speed-kmh", type=float)
    s.add_argument("--speed-range", help="LO,HI in km/h")
    s.add_argument("--tx-radius", type=float)
    s.add_argument("--duration", type=float)
    s.add_argument("--sample-dt", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    def replay_common(sp):
        common(sp)
        sp.add_argument("--grid")
        sp.add_argument("--trace")
        sp.add_argument("--intervals", help="comma-separated durations in seconds")
        sp.add_argument("--content-size", type=float)
        sp.add_argument("--bandwidth", type=float)
        sp.add_argument("--snr-db", type=float)
        sp.add_argument("--mc-runs", type=int)
        sp.add_argument("--alpha-target", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--quantization-levels", type=int)
        sp.add_argument("--scenario")

    r = sub.add_parser("replay", help="evaluate one strategy on a trace")
    replay_common(r)
    r.add_argument("--strategy", help="path, 'all-on', 'all-on-drop' or 'all-off'")
    r.add_argument("--compare-all-on", action="store_true", default=None)
    r.add_argument("--features-csv")
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)

    o = sub.add_parser("optimize", help="search for a cheap feasible strategy")
    replay_common(o)
    o.add_argument("--method", choices=["greedy", "anneal"])
    o.add_argument("--max-oracle-calls", type=int)
    o.add_argument("--search-mc-runs", type=int)
    o.add_argument("--margin", type=float)
    o.add_argument("--cooling-rate", type=float)
    o.add_argument("--moves-per-temp", type=int)
    o.add_argument("--log")
    o.add_argument("--out")
    o.add_argument("--result-out")
    o.set_defaults(func=cmd_optimize)

    d = sub.add_parser("dataset", help="build, split or inspect datasets")
    dsub = d.add_subparsers(dest="subcommand", required=True)
    db = dsub.add_parser("build")
    replay_common(db)
    db.add_argument("--arrival-rate", type=float)
    db.add_argument("--speed-kmh", type=float)
    db.add_argument("--speed-range")
    db.add_argument("--tx-radius", type=float)
    db.add_argument("--duration", type=float)
    db.add_argument("--sample-dt", type=float)
    db.add_argument("--records", type=int)
    db.add_argument("--episodes-per-trace", type=int)
    db.add_argument("--optimizer-share", type=float)
    db.add_argument("--sampler-budget", type=int)
    db.add_argument("--collapse-cheapest", action="store_true", default=None)
    db.add_argument("--collapse-min-slack", type=float)
    db.add_argument("--sampler-margin", type=float)
    db.add_argument("--sampler-mode", choices=["uniform", "retention"])
    db.add_argument("--sampler-b-floor", type=int)
    db.add_argument("--jobs", type=int)
    db.add_argument("--traces-dir")
    db.add_argument("--csv-out")
    db.add_argument("--out")
    db.set_defaults(func=cmd_dataset_build)
    dsp = dsub.add_parser("split")
    common(dsp)
    dsp.add_argument("--dataset")
    dsp.add_argument("--k", type=int)
    dsp.add_argument("--out")
    dsp.set_defaults(func=cmd_dataset_split)
    di = dsub.add_parser("inspect")
    common(di)
    di.add_argument("--dataset")
    di.set_defaults(func=cmd_dataset_inspect)

    b = sub.add_parser("baseline", help="train or evaluate baseline learners")
    bsub = b.add_subparsers(dest="subcommand", required=True)
    bt = bsub.add_parser("train")
    common(bt)
    bt.add_argument("--dataset")
    bt.add_argument("--model", choices=["knn", "decision_tree", "random_forest", "constant"])
    bt.add_argument("--k", type=int)
    bt.add_argument("--max-depth", type=int)
    bt.add_argument("--min-leaf", type=int)
    bt.add_argument("--n-trees", type=int)
    bt.add_argument("--feature-subsample", type=float)
    bt.add_argument("--no-bootstrap", action="store_true", default=None)
    bt.add_argument("--a-level", type=int)
    bt.add_argument("--b-level", type=int)
    bt.add_argument("--out")
    bt.set_defaults(func=cmd_baseline_train)
    be = bsub.add_parser("eval")
    common(be)
    be.add_argument("--model")
    be.add_argument("--dataset")
    be.add_argument("--scenario")
    be.add_argument("--train-size", type=int)
    be.add_argument("--skip-rejection", action="store_true", default=None)
    be.add_argument("--out")
    be.set_defaults(func=cmd_baseline_eval)

    c = sub.add_parser("cnn", help="interop with the external CNN trainer")
    csub = c.add_subparsers(dest="subcommand", required=True)
    ce = csub.add_parser("export-config")
    common(ce)
    ce.add_argument("--dataset")
    ce.add_argument("--epochs", type=int)
    ce.add_argument("--batch-size", type=int)
    ce.add_argument("--learning-rate", type=float)
    ce.add_argument("--folds", type=int)
    ce.add_argument("--out")
    ce.set_defaults(func=cmd_cnn_export_config)
    cp = csub.add_parser("eval-predictions")
    common(cp)
    cp.add_argument("--predictions")
    cp.add_argument("--dataset")
    cp.add_argument("--algorithm")
    cp.add_argument("--scenario")
    cp.add_argument("--train-size", type=int)
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_cnn_eval_predictions)

    rp = sub.add_parser("report", help="render cost/metric tables and figures")
    common(rp)
    rp.add_argument("--inputs", nargs="+")
    rp.add_argument("--out-dir")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config if hasattr(args, "config") else None)
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NoFeasibleSolutionError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (GridError, TraceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
