"""Command-line entry point.

Subcommands: train (one config, one or more seeds), sweep (a full grid),
oracle (tabular Q* plus normalization anchors), report (CSV tables and the
median-AUC summary). Human-readable progress goes to stderr; machine outputs
go to files, except the report table which prints to stdout.

Exit codes: 0 success, 1 runtime error, 2 usage/config error, 3 partial sweep
failure, 4 degenerate environment.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import harness, training
from .envs import value_iteration

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_DEGENERATE = 4


def _msg(args, text: str) -> None:
    if not args.quiet:
        print(text, file=sys.stderr)


def _err(text: str) -> None:
    print(f"error: {text}", file=sys.stderr)


def _effective_doc(args) -> dict:
    doc = cfgmod.load_config(args.config)
    return cfgmod.apply_overrides(doc, args.set or [])


def _merge_anchors(path: Path, new: dict[str, harness.NormalizationAnchors]) -> None:
    anchors = harness.read_anchors(path) if path.exists() else {}
    anchors.update(new)
    harness.write_anchors(path, anchors)


def _train_anchors(doc: dict, spec, name: str, results_dir: Path, eval_horizon: int):
    anchors_cfg = doc.get("anchors", {})
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(anchors_cfg.get("seed", 0)))
    )
    anchors = harness.compute_anchors(
        spec,
        value_iteration(spec),
        int(anchors_cfg.get("episodes", 200)),
        rng,
        horizon=eval_horizon,
    )
    _merge_anchors(results_dir / "anchors.json", {name: anchors})
    return anchors


def cmd_train(args) -> int:
    try:
        doc = _effective_doc(args)
        train_cfg, env_name, spec = cfgmod.build_train(doc)
    except cfgmod.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    results_dir = Path(args.results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    fp = cfgmod.fingerprint(doc)
    try:
        _train_anchors(doc, spec, env_name, results_dir, train_cfg.eval_horizon)
        rows = []
        for seed in train_cfg.seeds:
            out = training.run_training(train_cfg, spec, seed=seed, fingerprint=fp)
            rows.append(
                {
                    "env": env_name,
                    "optimizer": train_cfg.optimizer.kind,
                    "policy": train_cfg.reset.kind,
                    "K": train_cfg.K,
                    "T": train_cfg.T,
                    "seed": seed,
                    "status": "ok",
                    "fingerprint": fp,
                    "eval_returns": out.record.eval_returns,
                    "resets": out.record.resets_per_iteration,
                    "total_steps": out.record.total_steps,
                }
            )
            if train_cfg.save_checkpoint:
                training.write_checkpoint(
                    results_dir / f"checkpoint_{fp}_{seed}.bin",
                    out.mlp,
                    out.agent,
                    out.opt_state,
                )
            _msg(
                args,
                f"seed {seed}: final eval return "
                f"{out.record.eval_returns[-1]:.4g} "
                f"({out.record.total_steps} optimizer steps, "
                f"{out.record.wall_clock_sec:.2f}s)",
            )
        with open(results_dir / "results.jsonl", "a") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except harness.DegenerateEnvironment as exc:
        _err(f"degenerate environment: {exc}")
        return EXIT_DEGENERATE
    except Exception as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        doc = _effective_doc(args)
        sweep_cfg = cfgmod.build_sweep(doc)
    except cfgmod.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    results_dir = Path(args.results_dir)
    try:
        result = harness.run_sweep(
            sweep_cfg,
            results_dir,
            workers=args.workers,
            log=None if args.quiet else (lambda s: print(s, file=sys.stderr)),
        )
    except harness.DegenerateEnvironment as exc:
        _err(f"degenerate environment: {exc}")
        return EXIT_DEGENERATE
    except Exception as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    failed = result.failed
    if failed:
        _err(f"{len(failed)} cell(s) failed:")
        for key, why in sorted(failed.items()):
            print(f"  {key}: {why}", file=sys.stderr)
        return EXIT_PARTIAL
    _msg(args, f"sweep complete: {len(result.rows)} cells under {results_dir}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        doc = _effective_doc(args)
        if "env" not in doc:
            raise cfgmod.ConfigError("oracle config needs an 'env' block")
        env_name, spec = cfgmod.build_env(doc["env"])
    except cfgmod.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    results_dir = Path(args.results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    try:
        oracle_cfg = doc.get("oracle", {})
        tol = float(oracle_cfg.get("tol", 1e-10))
        horizon = int(doc.get("train", {}).get("eval_horizon", 50))
        q = value_iteration(spec, tol=tol)
        print(f"optimal q-table for {env_name} (gamma={spec.gamma}, tol={tol:g}):")
        for s in range(spec.n_states):
            cells = " ".join(f"{q[s, a]:.10g}" for a in range(spec.n_actions))
            mark = " (terminal)" if s in spec.terminal else ""
            print(f"  s={s}: {cells}{mark}")
        anchors = _train_anchors(doc, spec, env_name, results_dir, horizon)
        print(f"random-policy return:  {anchors.random_score:.10g}")
        print(f"optimal (greedy-on-q*) return: {anchors.reference_score:.10g}")
        _msg(args, f"anchors written to {results_dir / 'anchors.json'}")
    except harness.DegenerateEnvironment as exc:
        _err(f"degenerate environment: {exc}")
        return EXIT_DEGENERATE
    except Exception as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    results_dir = Path(args.results_dir)
    try:
        result = harness.load_results(results_dir)
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        ok_rows = [r for r in result.rows.values() if r["status"] == "ok"]
        if not ok_rows:
            _err(f"no successful runs recorded under {results_dir}")
            return EXIT_CONFIG
        normalized_auc = not args.auc_raw
        harness.write_curves_csv(result, results_dir / "curves.csv")
        harness.write_auc_csv(result, results_dir / "auc.csv", normalized_auc)
        table = harness.auc_table(result, "median", normalized_auc)
        sys.stdout.write(harness.format_auc_table(table))
        _msg(args, f"wrote {results_dir / 'curves.csv'} and {results_dir / 'auc.csv'}")
    except Exception as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optreset",
        description="Resettable-optimizer training runs, sweeps, and reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config: bool):
        if needs_config:
            p.add_argument("--config", required=True, help="path to a JSON config")
            p.add_argument(
                "--set",
                action="append",
                metavar="KEY=VALUE",
                help="dotted-path config override, repeatable",
            )
        p.add_argument(
            "--results-dir", default="results", help="output directory (default: results)"
        )
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_train = sub.add_parser("train", help="run one training configuration")
    common(p_train, True)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a grid of configurations")
    common(p_sweep, True)
    p_sweep.add_argument(
        "--workers", type=int, default=None,
        help="parallel worker processes (default: all cores)",
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_oracle = sub.add_parser("oracle", help="print tabular Q* and write anchors")
    common(p_oracle, True)
    p_oracle.set_defaults(func=cmd_oracle)

    p_report = sub.add_parser("report", help="write curves.csv/auc.csv and print AUC table")
    common(p_report, False)
    p_report.add_argument(
        "--auc-raw", action="store_true",
        help="report raw trapezoidal AUC instead of length-normalized",
    )
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching our config-error code
        return int(exc.code) if exc.code else EXIT_OK
    if getattr(args, "workers", 0) is None:
        import os

        args.workers = os.cpu_count() or 1
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
