"""Command-line front end: train, eval, export, verify.

Every report path writes delimited output (CSV/JSON) and renders the matching
matplotlib figure next to it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import envs, reporting
from .agents import checkpoint_parameters, restore_parameters
from .evaluation import MetricsReport, evaluate_model, export_factorization
from .training import (
    METHODS,
    FactorizedModel,
    TrainConfig,
    default_config,
    train,
)

CONFIG_KEYS = {
    "method": str,
    "methods": list,
    "env_spec": str,
    "seed": int,
    "seeds": list,
    "out_dir": str,
    "episodes": int,
    "learning_rate": float,
    "batch_size": int,
    "buffer_episodes": int,
    "target_update": int,
    "epsilon": float,
    "gamma": float,
    "n_quantiles": int,
    "n_target_quantiles": int,
    "n_eval_quantiles": int,
    "kappa": float,
    "c51_atoms": int,
    "v_min": float,
    "v_max": float,
    "eval_interval": int,
}

TRAIN_OVERRIDE_KEYS = [k for k in CONFIG_KEYS
                       if k not in ("method", "methods", "env_spec", "seed",
                                    "seeds", "out_dir")]


@dataclasses.dataclass
class ExperimentConfig:
    methods: list[str]
    seeds: list[int]
    env_spec: str | None = None
    out_dir: str = "results"
    overrides: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> dict:
        data = {"methods": self.methods, "seeds": self.seeds, "out_dir": self.out_dir}
        if self.env_spec:
            data["env_spec"] = self.env_spec
        data.update(self.overrides)
        return data


def parse_experiment_config(data: dict, origin: str = "<config>") -> ExperimentConfig:
    unknown = set(data) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"{origin}: unknown config keys {sorted(unknown)}")
    for key, value in data.items():
        expected = CONFIG_KEYS[key]
        if expected is float and isinstance(value, (int, float)):
            continue
        if not isinstance(value, expected):
            raise ValueError(f"{origin}: key {key!r} should be {expected.__name__}")

    methods = data.get("methods") or ([data["method"]] if "method" in data else [])
    if not methods:
        raise ValueError(f"{origin}: no method configured")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"{origin}: unknown method {m!r}; choose from {METHODS}")
    seeds = data.get("seeds") or [data.get("seed", 0)]
    seeds = [int(s) for s in seeds]
    overrides = {k: v for k, v in data.items() if k in TRAIN_OVERRIDE_KEYS}
    return ExperimentConfig(
        methods=list(methods),
        seeds=seeds,
        env_spec=data.get("env_spec"),
        out_dir=data.get("out_dir", "results"),
        overrides=overrides,
    )


def _load_game(env_spec: str | None) -> envs.MatrixGameSpec:
    if env_spec:
        return envs.load_spec(env_spec)
    return envs.benchmark_spec()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: FactorizedModel, seed: int) -> None:
    blob = {
        "format": "dfac-checkpoint-v1",
        "method": model.cfg.method,
        "seed": seed,
        "config": dataclasses.asdict(model.cfg),
        "game": envs.spec_to_dict(model.game),
        "params": checkpoint_parameters(model.parameters()),
    }
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_checkpoint(path, game: envs.MatrixGameSpec | None = None) -> FactorizedModel:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON at position {exc.pos}") from exc
    if blob.get("format") != "dfac-checkpoint-v1":
        raise ValueError(f"{path}: not a recognized checkpoint file")
    cfg = TrainConfig(**blob["config"])
    ckpt_game = envs.parse_spec(blob["game"], origin=f"{path}:game")
    if game is not None:
        if game.n_agents != ckpt_game.n_agents:
            raise ValueError(
                f"checkpoint trained for {ckpt_game.n_agents} agents, "
                f"spec has {game.n_agents} (field: agents)")
        if game.n_actions != ckpt_game.n_actions:
            raise ValueError(
                f"checkpoint trained for action counts {ckpt_game.n_actions}, "
                f"spec has {game.n_actions} (field: actions)")
    else:
        game = ckpt_game
    from .seeding import stream
    model = FactorizedModel(cfg, game, stream(blob.get("seed", 0), "init"))
    restore_parameters(model.parameters(), blob["params"])
    return model


# ---------------------------------------------------------------------------
# single training run (process-pool friendly)
# ---------------------------------------------------------------------------

def run_single(method: str, seed: int, overrides: dict, game_data: dict,
               out_dir: str) -> dict:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    game = envs.parse_spec(game_data, origin="config")
    cfg = default_config(method, seed=seed, **overrides)
    log, model = train(cfg, game)
    truth = envs.ground_truth(game)
    report = evaluate_model(model, truth, with_detail=True)

    out = Path(out_dir) / method
    out.mkdir(parents=True, exist_ok=True)
    (out / f"log_seed{seed}.csv").write_text(log.to_csv(), encoding="utf-8")
    save_checkpoint(out / f"ckpt_seed{seed}.json", model, seed)
    metrics = report.to_json()
    metrics["seed"] = seed
    metrics["digm_all_checkpoints"] = all(log.digm_checks)
    (out / f"metrics_seed{seed}.json").write_text(
        json.dumps(metrics, indent=2), encoding="utf-8")
    reporting.render_learning_curves(
        log.rows, out / f"curves_seed{seed}.png", title=f"{method} seed {seed}")
    return metrics


def _run_single_star(args) -> dict:
    return run_single(*args)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        origin = args.config
    else:
        origin = "<cli>"
    if args.method:
        data["methods"] = args.method.split(",")
        data.pop("method", None)
    if args.seed is not None:
        data["seed"] = args.seed
        data.pop("seeds", None)
    if args.seeds:
        data["seeds"] = [int(s) for s in args.seeds.split(",")]
        data.pop("seed", None)
    if args.episodes is not None:
        data["episodes"] = args.episodes
    if args.out:
        data["out_dir"] = args.out
    env_seed = os.environ.get("DFAC_SEED")
    if env_seed is not None:
        data["seed"] = int(env_seed)
        data.pop("seeds", None)
    cfg = parse_experiment_config(data, origin=origin)

    game = _load_game(cfg.env_spec)
    game_data = envs.spec_to_dict(game)
    jobs = [(method, seed, cfg.overrides, game_data, cfg.out_dir)
            for method in cfg.methods for seed in cfg.seeds]

    if args.parallel > 1:
        import multiprocessing as mp
        ctx = mp.get_context("spawn")
        with ctx.Pool(args.parallel) as pool:
            results = pool.map(_run_single_star, jobs)
    else:
        results = [_run_single_star(job) for job in jobs]

    by_method: dict[str, list[dict]] = {}
    for res in results:
        by_method.setdefault(res["method"], []).append(res)

    summary_rows = []
    for method in cfg.methods:
        rows = by_method[method]
        summary_rows.append({
            "method": method,
            "qdist": statistics.median(r["qdist"] for r in rows),
            "wdist": statistics.median(r["wdist"] for r in rows),
            "return": statistics.median(r["return"] for r in rows),
            "digm": all(r["digm_all_checkpoints"] for r in rows),
            "seeds": len(rows),
        })

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["method,seeds,qdist,wdist,return,digm"]
    for r in summary_rows:
        lines.append(f"{r['method']},{r['seeds']},{r['qdist']!r},"
                     f"{r['wdist']!r},{r['return']!r},{int(r['digm'])}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    reporting.render_summary(summary_rows, out / "summary.png")

    print(f"{'Method':<12}{'Q-dist':>10}{'W-dist':>10}{'Return':>10}")
    for r in summary_rows:
        print(f"{r['method']:<12}{r['qdist']:>10.2f}{r['wdist']:>10.2f}"
              f"{r['return']:>10.2f}")
    return 0


def cmd_eval(args) -> int:
    game = _load_game(args.spec) if args.spec else None
    model = load_checkpoint(args.checkpoint, game)
    truth = envs.ground_truth(model.game)
    report = evaluate_model(model, truth, with_detail=True)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(report.to_json(), indent=2), encoding="utf-8")
    (out / "metrics.csv").write_text(
        MetricsReport.csv_header() + "\n" + report.to_csv_row() + "\n",
        encoding="utf-8")
    reporting.render_summary([{
        "method": report.method, "qdist": report.qdist,
        "wdist": report.wdist, "return": report.ret,
    }], out / "metrics.png")
    print(f"method  {report.method}")
    print(f"qdist   {report.qdist:.4f}")
    print(f"wdist   {report.wdist:.4f} (optimal action: {report.wdist_optimal:.4f})")
    print(f"return  {report.ret:.4f}  greedy {','.join(report.greedy_action)}")
    print(f"digm    {report.digm}")
    return 0


def cmd_export(args) -> int:
    model = load_checkpoint(args.checkpoint)
    truth = envs.ground_truth(model.game)
    names = args.action.split(",")
    joint = model.game.action_indices(names)
    export = export_factorization(model, truth, joint, grid_size=args.grid)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    tag = "_".join(export["joint_action"])
    json_path = out / f"factorization_{tag}.json"
    json_path.write_text(json.dumps(export, indent=2), encoding="utf-8")
    reporting.render_factorization(export, out / f"factorization_{tag}.png")
    print(f"wrote {json_path}")
    return 0


def cmd_verify(args) -> int:
    from .verification import run_all
    results = run_all(fast=args.fast)
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify_results.json").write_text(
        json.dumps(results, indent=2), encoding="utf-8")
    failed = 0
    for res in results:
        status = "PASS" if res["passed"] else "FAIL"
        failed += not res["passed"]
        print(f"[{status}] {res['name']}: {res['detail']}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfac",
        description="Distributional value-function factorization on matrix games",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one or more methods")
    p_train.add_argument("--config", help="experiment config JSON")
    p_train.add_argument("--method", help="method id(s), comma separated")
    p_train.add_argument("--seed", type=int, help="single seed")
    p_train.add_argument("--seeds", help="comma-separated seed list")
    p_train.add_argument("--episodes", type=int, help="episode count override")
    p_train.add_argument("--out", help="output directory")
    p_train.add_argument("--parallel", type=int, default=1,
                         help="run this many seeds/methods in parallel processes")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--spec", help="game spec JSON (defaults to the checkpoint's)")
    p_eval.add_argument("--out", help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_export = sub.add_parser("export", help="export factorized curves")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--action", required=True,
                          help="joint action names, e.g. B1,B2")
    p_export.add_argument("--grid", type=int, default=201)
    p_export.add_argument("--out", help="output directory")
    p_export.set_defaults(func=cmd_export)

    p_verify = sub.add_parser("verify", help="run the oracle self-checks")
    p_verify.add_argument("--fast", action="store_true",
                          help="reduced probe counts")
    p_verify.add_argument("--out", help="directory for verify_results.json")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
