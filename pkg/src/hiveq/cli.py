"""Command-line entry points.

    hiveq train --config cfg.yaml [--preset no_diversity] [--seed 3]
                [--deterministic] [--dry-run]
    hiveq report --dir runs/
    hiveq eval --checkpoint runs/exp/seed_0/checkpoint --config cfg.yaml
               [--episodes 32] [--seed 0]
    hiveq resume --dir runs/exp [--seed 3]
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path


def _limit_blas_threads() -> None:
    # worker matrices are tiny; BLAS thread pools only add contention
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _load_config(args) -> "RunConfig":
    from .config import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.preset:
        cfg = cfg.with_preset(args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.deterministic:
        overrides["deterministic"] = True
    if args.out:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def cmd_train(args) -> int:
    from . import runner

    cfg = _load_config(args)
    if args.dry_run:
        plan = {
            "config": cfg.to_dict(),
            "settings_hash": cfg.content_hash(),
            "processes": {
                "containers": cfg.n_containers,
                "actors_per_container": cfg.k_actors,
                "total_workers": cfg.n_containers * (cfg.k_actors + 3) + 2,
            },
            "mode": "deterministic" if cfg.deterministic else "production",
        }
        print(json.dumps(plan, indent=2))
        return 0
    results = runner.run(cfg)
    for res in results:
        print(
            f"seed {res.seed}: env_steps={res.env_steps_total} "
            f"final_eval_mean={res.final_eval_mean} wall={res.wall_s:.1f}s "
            f"-> {res.out_dir}"
        )
    return 0


def cmd_report(args) -> int:
    from .metrics import curve_report, write_report

    summaries = curve_report(args.dir, smoother=args.smoother)
    path = write_report(summaries, args.dir)
    for s in summaries:
        print(
            f"{s.name}: seeds={len(s.seeds)} median_final={s.median_final:.4f} "
            f"variance={s.variance_final:.4f} stability={s.stability:.4f}"
        )
    print(f"report written to {path}")
    return 0


def cmd_eval(args) -> int:
    from .centralizer import evaluate_policy
    from .checkpoint import load_arrays
    from .config import RunConfig
    from .container import build_qnet

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    ckpt = Path(args.checkpoint)
    params_file = ckpt / "central_params.hqp" if ckpt.is_dir() else ckpt
    env = cfg.container_cfg(0, 0).make_env()
    qnet = build_qnet(env, cfg.hidden_dim, cfg.mixing_dim)
    params = qnet.init_params(0)
    params.load_arrays(load_arrays(params_file))
    result = evaluate_policy(env, qnet, params, args.episodes, args.seed)
    print(json.dumps(result, indent=2))
    return 0


def cmd_resume(args) -> int:
    from . import runner

    results = runner.resume(args.dir, seed=args.seed)
    for res in results:
        print(
            f"seed {res.seed}: env_steps={res.env_steps_total} "
            f"final_eval_mean={res.final_eval_mean} -> {res.out_dir}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiveq")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run an experiment")
    t.add_argument("--config", help="YAML config file")
    t.add_argument("--preset", help="named ablation preset")
    t.add_argument("--seed", type=int, help="run a single seed")
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--dry-run", action="store_true")
    t.add_argument("--out", help="output directory root")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("report", help="summarize runs in a directory")
    r.add_argument("--dir", required=True)
    r.add_argument("--smoother", default="kalman")
    r.set_defaults(fn=cmd_report)

    e = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="config describing the environment")
    e.add_argument("--episodes", type=int, default=32)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("resume", help="continue a checkpointed run")
    s.add_argument("--dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_resume)
    return parser


def main(argv=None) -> int:
    _limit_blas_threads()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
