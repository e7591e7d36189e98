"""Operator entry points: the full pipeline as subcommands.

    resgait synth-data    --out runs/           # clips + manifest
    resgait train-cmg     --out runs/           # prior checkpoint + loss curve
    resgait train-policy  --out runs/           # policy checkpoint + learning curve
    resgait eval          --out runs/ [--trace] # metrics.csv (+ per-episode traces)
    resgait ablate        --out runs/           # the 7-variant comparison table
    resgait gradcheck                           # finite-difference verification
    resgait print-config                        # resolved configuration as YAML

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import sys
from pathlib import Path

from . import __version__
from .cmg import (
    ScheduledSamplingPlan,
    TrainingDivergedError,
    load_cmg,
    save_cmg,
    train_cmg,
)
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    dump_config,
    load_config,
    provenance_header,
)
from .dataset import generate_dataset, load_dataset, write_dataset
from .gradcheck import run_gradcheck
from .metrics import evaluate, write_metrics_csv
from .numerics import NotPositiveSemidefiniteError
from .ppo import load_policy, save_policy, train_policy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4

ABLATION_VARIANTS = (
    "full",
    "no_cmg",
    "no_residual",
    "no_aac",
    "drop_qpos",
    "drop_qvel",
    "drop_task",
)


class MissingPrerequisite(FileNotFoundError):
    pass


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"missing {path}; {hint}")
    return path


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config.validate()


def _write_rows_csv(path: Path, rows: list[dict], header: str):
    keys = list(rows[0].keys()) if rows else []
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row[k]) for k in keys) + "\n")


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def cmd_synth_data(config: RunConfig, out: Path) -> int:
    clips = generate_dataset(config)
    manifest = write_dataset(clips, out / "dataset", config, __version__)
    print(f"wrote {len(clips)} clips; manifest {manifest}")
    return EXIT_OK


def cmd_train_cmg(config: RunConfig, out: Path, progress: bool = True) -> int:
    _require(out / "dataset" / "manifest.txt", "run synth-data first")
    clips = load_dataset(out / "dataset")
    plan = ScheduledSamplingPlan(
        total_epochs=config.cmg.epochs,
        rollout_window=config.cmg.rollout_window,
        flat_start_fraction=config.cmg.teacher_flat_start,
        flat_end_fraction=config.cmg.teacher_flat_end,
    )
    trained = train_cmg(clips, plan, config, progress=progress)
    save_cmg(out / "cmg.ckpt", trained)
    _write_rows_csv(
        out / "cmg_loss.csv", trained.history, provenance_header(config, __version__)
    )
    print(f"held-out one-step loss {trained.heldout_loss:.5f}; checkpoint {out / 'cmg.ckpt'}")
    return EXIT_OK


def cmd_train_policy(config: RunConfig, out: Path, progress: bool = True) -> int:
    _require(out / "dataset" / "manifest.txt", "run synth-data first")
    clips = load_dataset(out / "dataset")
    cmg = None
    if not config.ppo.no_cmg:
        _require(out / "cmg.ckpt", "run train-cmg first")
        cmg = load_cmg(out / "cmg.ckpt", config)
    policy, curve = train_policy(config, cmg, clips, progress=progress)
    save_policy(out / "policy.ckpt", policy)
    _write_rows_csv(
        out / "learning_curve.csv", curve, provenance_header(config, __version__)
    )
    final = curve[-1]["mean_episode_reward"] if curve else float("nan")
    print(f"final mean episode reward {final:.2f}; checkpoint {out / 'policy.ckpt'}")
    return EXIT_OK


def cmd_eval(config: RunConfig, out: Path, trace: bool = False) -> int:
    _require(out / "dataset" / "manifest.txt", "run synth-data first")
    _require(out / "policy.ckpt", "run train-policy first")
    clips = load_dataset(out / "dataset")
    cmg = None
    if (out / "cmg.ckpt").exists():
        cmg = load_cmg(out / "cmg.ckpt", config)
    elif not config.ppo.no_cmg:
        raise MissingPrerequisite(f"missing {out / 'cmg.ckpt'}; run train-cmg first")
    policy = load_policy(out / "policy.ckpt", config)
    report = evaluate(
        policy, cmg, config, clips, trace_dir=(out / "traces") if trace else None
    )
    write_metrics_csv(
        out / "metrics.csv", [("policy", report)], provenance_header(config, __version__)
    )
    row = report.as_row()
    print(
        "fid {fid:.4f}  l_rec {l_rec:.4f}  e_qpos {e_qpos:.4f}  e_qvel {e_qvel:.4f}  "
        "e_vel {e_vel:.4f}  survival {survival_rate:.2f}".format(**row)
    )
    if not report.valid:
        print("warning: report flagged invalid (episodes terminated too early)")
    return EXIT_OK


def ablation_config(config: RunConfig, variant: str) -> RunConfig:
    cfg = copy.deepcopy(config)
    if variant == "no_cmg":
        cfg.ppo.no_cmg = True
    elif variant == "no_residual":
        cfg.ppo.no_residual = True
    elif variant == "no_aac":
        cfg.ppo.no_aac = True
    elif variant == "drop_qpos":
        cfg.rewards.drop_qpos = True
    elif variant == "drop_qvel":
        cfg.rewards.drop_qvel = True
    elif variant == "drop_task":
        cfg.rewards.drop_task = True
    elif variant != "full":
        raise ConfigError(f"unknown ablation variant {variant!r}")
    return cfg


def cmd_ablate(config: RunConfig, out: Path, progress: bool = True) -> int:
    _require(out / "dataset" / "manifest.txt", "run synth-data first")
    _require(out / "cmg.ckpt", "run train-cmg first")
    clips = load_dataset(out / "dataset")
    cmg = load_cmg(out / "cmg.ckpt", config)
    rows = []
    reports = []
    for variant in ABLATION_VARIANTS:
        cfg = ablation_config(config, variant)
        vdir = out / "ablate" / variant
        vdir.mkdir(parents=True, exist_ok=True)
        if progress:
            print(f"=== {variant} (seed {cfg.seed}) ===")
        policy, curve = train_policy(cfg, cmg, clips, progress=progress)
        save_policy(vdir / "policy.ckpt", policy)
        _write_rows_csv(vdir / "learning_curve.csv", curve, provenance_header(cfg, __version__))
        report = evaluate(policy, cmg, cfg, clips)
        reports.append((variant, report))
        rows.append({"variant": variant, **report.as_row()})
    _write_rows_csv(out / "ablation.csv", rows, provenance_header(config, __version__))
    write_metrics_csv(out / "metrics.csv", reports, provenance_header(config, __version__))
    print(f"wrote {out / 'ablation.csv'} with {len(rows)} rows")
    return EXIT_OK


def cmd_gradcheck() -> int:
    report = run_gradcheck()
    ok = True
    for name, entry in report.items():
        status = "pass" if entry["passed"] else "FAIL"
        ok &= entry["passed"]
        print(
            f"{name:6s} {status}  max relative error {entry['max_rel_err']:.3e} "
            f"over {entry['instances']} instances"
        )
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_print_config(config: RunConfig) -> int:
    sys.stdout.write(f"# config_hash={config_hash(config)}\n")
    sys.stdout.write(dump_config(config))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resgait", description="Residual gait control pipeline"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth-data", "train-cmg", "train-policy", "eval", "ablate"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, default=Path("runs"), help="artifact directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
        if name == "eval":
            p.add_argument("--trace", action="store_true", help="write per-episode CSVs")
    g = sub.add_parser("gradcheck")
    p = sub.add_parser("print-config")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        config = _load_run_config(args)
        if args.command == "print-config":
            return cmd_print_config(config)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        progress = not args.quiet
        if args.command == "synth-data":
            return cmd_synth_data(config, out)
        if args.command == "train-cmg":
            return cmd_train_cmg(config, out, progress)
        if args.command == "train-policy":
            return cmd_train_policy(config, out, progress)
        if args.command == "eval":
            return cmd_eval(config, out, trace=args.trace)
        if args.command == "ablate":
            return cmd_ablate(config, out, progress)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError, MissingPrerequisite) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING if isinstance(exc, FileNotFoundError) else EXIT_CONFIG
    except (TrainingDivergedError, NotPositiveSemidefiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
