"""irlnet command line: collect | train | eval | bench | curves.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .config import ConfigError, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--out-dir", default=argparse.SUPPRESS)
    p.add_argument("--judge-mode", choices=("synthetic", "external"), default=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="irlnet", parents=[common],
                                     description="DRL vs IRL prompt-engineering benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", parents=[common], help="score all operations on sampled prompts")
    p.add_argument("--n-prompts", type=int)
    p.add_argument("--out", help="dataset path (default: OUT_DIR/expert.jsonl)")

    p = sub.add_parser("train", parents=[common], help="train one algorithm")
    p.add_argument("--algo", choices=sorted(runner.VALID_PAIRS))
    p.add_argument("--env", choices=("prompt", "gridworld"))
    p.add_argument("--dataset", help="expert JSON-lines file (gail, rlhf, maxent, maxmargin)")

    p = sub.add_parser("eval", parents=[common], help="score policies on held-out prompts")
    p.add_argument("policies", nargs="+", help="policy.json files, or 'random' / 'expert'")
    p.add_argument("--n-cases", type=int)

    p = sub.add_parser("bench", parents=[common], help="collect, train PPO and GAIL, evaluate")

    p = sub.add_parser("curves", parents=[common], help="print training curves as gnuplot columns")
    p.add_argument("runs", nargs="+", help="run directories")
    return parser


def _config(args) -> dict:
    overrides = {}
    if getattr(args, "judge_mode", None):
        overrides["judge"] = {"mode": args.judge_mode}
    return load_config(getattr(args, "config", None), overrides)


def _builtin_policy(name: str, out_dir: Path) -> Path:
    from .envs.prompt import N_OPERATIONS, OBS_DIM
    path = out_dir / f"{name}.json"
    runner.save_policy(path, name, "prompt", OBS_DIM, N_OPERATIONS, name=name)
    return path


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        run = cfg.get("run", {})
        seed = getattr(args, "seed", run.get("seed", 0))
        out_dir = Path(getattr(args, "out_dir", "runs"))
        if args.command == "collect":
            out = Path(args.out) if args.out else out_dir / "expert.jsonl"
            ds = runner.collect(cfg, seed, out, args.n_prompts)
            print(f"wrote {len(ds)} records to {out}")
        elif args.command == "train":
            algo = args.algo or run.get("algo")
            env = args.env or run.get("env")
            if algo is None or env is None:
                raise runner.UsageError(f"--algo and --env are required; valid pairs: "
                                        f"{runner.valid_pairs_text()}")
            dataset = args.dataset or run.get("dataset")
            run_dir = runner.train(cfg, algo, env, seed, out_dir, dataset)
            print(f"run written to {run_dir}")
        elif args.command == "eval":
            out_dir.mkdir(parents=True, exist_ok=True)
            paths = [_builtin_policy(p, out_dir) if p in ("random", "expert") else Path(p)
                     for p in args.policies]
            n_cases = args.n_cases or cfg["env"]["n_eval_cases"]
            rows = runner.evaluate(cfg, paths, n_cases, seed)
            runner.write_csv(out_dir / "eval.csv", runner.EVAL_HEADER, rows)
            for r in rows:
                if r["case_id"] == "mean":
                    print(f"{r['policy']}\tmean quality delta {r['quality_delta']:+.4f}")
        elif args.command == "bench":
            report = runner.bench(cfg, out_dir)
            print(json.dumps({k: report[k] for k in ("summary", "gap_irl_minus_drl", "ordering_seeds",
                                                     "ordering_pass", "convergence_pass",
                                                     "wall_clock_s")}, indent=2))
            if any(s["status"] != "ok" for s in report["stages"]):
                return EXIT_RUNTIME
        elif args.command == "curves":
            curves = [dict(runner.read_curve(r)) for r in args.runs]
            print("# iteration " + " ".join(Path(r).name for r in args.runs))
            for it in sorted(set().union(*curves)):
                print(it, *[repr(c[it]) if it in c else "NaN" for c in curves])
    except (ConfigError, runner.UsageError) as exc:
        print(f"irlnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logging.getLogger("irlnet").debug("failure", exc_info=True)
        print(f"irlnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
