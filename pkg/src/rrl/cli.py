"""Command-line entry point: ``rrl train | switch | compare-experience | verify``.

Outputs land under ``--out``, one subdirectory per command::

    train/                seed_<s>.csv, checkpoints/seed_<s>/, summary.json
    switch/               explore|frozen/seed_<s>.csv, summary_<arm>.json
    compare-experience/   ep<k>/seed_<s>.csv, summary.json

Each command directory also receives ``manifest.json`` (written before the
simulation starts) and the resolved ``config.ini``.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from rrl import __version__, criteria
from rrl.config import BadConfig, dump_config, load_config, parse_config
from rrl.ddpg import CheckpointError
from rrl.harness import (Checkpoint, ExperimentConfig, SeedAborted, Trajectory, map_seeds,
                         run_experience_comparison, run_regime_switch, run_training, summarize)

log = logging.getLogger("rrl")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_IO = 2
EXIT_CONFIG = 3


class IoFailure(OSError):
    pass


class MissingOutputs(FileNotFoundError):
    pass


@dataclass
class RunManifest:
    config_path: str
    output_dir: str
    command: str
    seeds: list[int]
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    options: dict = field(default_factory=dict)

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        tmp = directory / "manifest.json.tmp"
        tmp.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return tmp.replace(directory / "manifest.json")


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
    tmp.replace(path)


def _prepare(args, command: str) -> tuple[ExperimentConfig, Path]:
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise IoFailure(f"cannot read config file {cfg_path}")
    cfg = load_config(cfg_path)
    changes = {}
    if args.seeds:
        changes["seeds"] = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if getattr(args, "paper_literal", False):
        cfg.agent.use_target_networks = False
    if changes:
        cfg = cfg.replace(**changes)
    out = Path(args.out) / command
    try:
        out.mkdir(parents=True, exist_ok=True)
        RunManifest(str(cfg_path), str(out), command, list(cfg.seeds),
                    options={k: v for k, v in vars(args).items() if k != "func"}).write(out)
        (out / "config.ini").write_text(dump_config(cfg))
    except OSError as exc:
        raise IoFailure(f"cannot write to {out}: {exc}") from exc
    return cfg, out


def _train_task(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    traj, ckpt = run_training(cfg, seed)
    traj.write_csv(out / f"seed_{seed}.csv")
    ckpt.save(out / "checkpoints" / f"seed_{seed}")
    return summarize([traj], _regimes(cfg))[0]


def _switch_task(cfg: ExperimentConfig, out: Path, arm: str, exploration: bool, dirs: dict,
                 seed: int) -> dict:
    ckpt = Checkpoint.load(dirs[seed], cfg.agent)
    traj = run_regime_switch(ckpt, cfg, arm=arm, exploration=exploration, learning=exploration)
    traj.write_csv(out / arm / f"seed_{seed}.csv")
    return summarize([traj], _regimes(cfg))[0]


def _compare_task(cfg: ExperimentConfig, out: Path, seed: int) -> list[dict]:
    res = run_experience_comparison(cfg, seed)
    rows = []
    for k, traj in res.items():
        traj.write_csv(out / f"ep{k}" / f"seed_{seed}.csv")
        rows += summarize([traj], _regimes(cfg))
    return rows


def _regimes(cfg: ExperimentConfig) -> dict:
    return {0: cfg.regime_before, 1: cfg.regime_after}


def _run_seeds(task, seeds, *args):
    try:
        return map_seeds(task, seeds, *args)
    except SeedAborted as exc:
        log.error("%s", exc)
        raise


def cmd_train(args) -> int:
    cfg, out = _prepare(args, "train")
    rows = _run_seeds(_train_task, cfg.seeds, cfg, out)
    trajs = [Trajectory.read_csv(out / f"seed_{s}.csv", arm="train") for s in cfg.seeds]
    result = criteria.training_criterion(trajs, cfg.regime_before.pi_hat)
    _write_json(out / "summary.json", {"rows": rows, "criteria": [result.__dict__]})
    print(result.line())
    return EXIT_OK


def _checkpoint_dirs(path: Path, seeds) -> dict[int, Path]:
    if (path / "agent.json").is_file():
        ckpt = json.loads((path / "agent.json").read_text())
        return {int(ckpt["extra"]["seed"]): path}
    for base in (path, path / "checkpoints", path / "train" / "checkpoints"):
        found = {int(p.name.split("_", 1)[1]): p for p in base.glob("seed_*") if (p / "agent.json").is_file()}
        if found:
            missing = [s for s in seeds if s not in found]
            if missing:
                raise IoFailure(f"no checkpoint for seed(s) {missing} under {base}")
            return {s: found[s] for s in seeds}
    raise IoFailure(f"no checkpoint found at {path}")


def cmd_switch(args) -> int:
    cfg, out = _prepare(args, "switch")
    ckpt_root = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "train" / "checkpoints"
    dirs = _checkpoint_dirs(ckpt_root, cfg.seeds)
    for d in dirs.values():
        Checkpoint.load(d, cfg.agent)
    exploration = not args.no_exploration
    arm = "explore" if exploration else "frozen"
    seeds = list(dirs)
    rows = _run_seeds(_switch_task, seeds, cfg, out, arm, exploration, dirs)
    trajs = [Trajectory.read_csv(out / arm / f"seed_{s}.csv", arm=arm) for s in seeds]
    if exploration:
        result = criteria.switch_criterion(trajs)
    else:
        result = criteria.frozen_criterion(trajs, cfg.regime_before, cfg.regime_after)
    _write_json(out / f"summary_{arm}.json", {"rows": rows, "criteria": [result.__dict__]})
    print(result.line())
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, out = _prepare(args, "compare-experience")
    if args.levels:
        cfg = cfg.replace(experience_levels=tuple(int(k) for k in args.levels.split(",")))
    rows = sum(_run_seeds(_compare_task, cfg.seeds, cfg, out), [])
    by_seed = _read_compare(out, cfg.experience_levels, cfg.seeds)
    result = criteria.experience_criterion(by_seed, cfg.regime_after.pi_hat)
    _write_json(out / "summary.json", {"rows": rows, "criteria": [result.__dict__]})
    print(result.line())
    return EXIT_OK


def _read_compare(out: Path, levels, seeds) -> dict:
    return {s: {k: Trajectory.read_csv(out / f"ep{k}" / f"seed_{s}.csv", arm=f"ep{k}") for k in levels}
            for s in seeds}


def _csvs(directory: Path) -> list[Path]:
    return sorted(directory.glob("seed_*.csv"), key=lambda p: int(p.stem.split("_")[1]))


def verify(out_dir) -> list[criteria.CriterionResult]:
    """Re-derive every applicable acceptance check from files under ``out_dir``."""
    out_dir = Path(out_dir)
    results = [criteria.steady_state_check()]
    found = False
    problems = []
    checked_rows = 0
    for command in ("train", "switch", "compare-experience"):
        cdir = out_dir / command
        if not (cdir / "config.ini").is_file():
            continue
        cfg = parse_config((cdir / "config.ini").read_text(), str(cdir / "config.ini"))
        regimes = _regimes(cfg)
        groups = {}
        if command == "train":
            groups["train"] = _csvs(cdir)
        else:
            for sub in sorted(p for p in cdir.iterdir() if p.is_dir()):
                groups[sub.name] = _csvs(sub)
        for arm, paths in groups.items():
            if not paths:
                continue
            found = True
            trajs = [Trajectory.read_csv(p, arm=arm) for p in paths]
            for p, tr in zip(paths, trajs):
                checked_rows += len(tr)
                problems += [f"{p}: {msg}" for msg in criteria.cross_check(tr, regimes, arm != "train")]
            if arm == "train":
                results.append(criteria.training_criterion(trajs, cfg.regime_before.pi_hat))
            elif arm == "explore":
                results.append(criteria.switch_criterion(trajs))
            elif arm == "frozen":
                results.append(criteria.frozen_criterion(trajs, cfg.regime_before, cfg.regime_after))
        if command == "compare-experience":
            levels = sorted(int(k[2:]) for k in groups if k.startswith("ep") and groups[k])
            seeds = sorted({int(p.stem.split("_")[1]) for k in groups for p in groups[k]})
            if levels and seeds:
                results.append(criteria.experience_criterion(_read_compare(cdir, levels, seeds),
                                                             cfg.regime_after.pi_hat))
    if not found:
        raise MissingOutputs(f"no run outputs under {out_dir}")
    detail = f"{checked_rows} rows checked"
    if problems:
        detail += f", {len(problems)} violation(s); first: {problems[0]}"
    results.insert(1, criteria.CriterionResult("closed-form transition identities", not problems, detail,
                                               {"violations": problems[:50]}))
    return results


def cmd_verify(args) -> int:
    results = verify(args.out)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rrl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="INI experiment configuration")
            p.add_argument("--seeds", help="comma-separated seeds overriding the configuration")
            p.add_argument("--paper-literal", action="store_true",
                           help="bootstrap TD targets from the live networks (no target networks)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train agents under the initial regime")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("switch", help="continue trained agents through an unannounced target change")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint directory (default: <out>/train/checkpoints)")
    p.add_argument("--no-exploration", action="store_true",
                   help="disable exploration and learning after the switch (frozen arm)")
    p.set_defaults(func=cmd_switch)

    p = sub.add_parser("compare-experience", help="train agents of several experience levels and switch each")
    common(p)
    p.add_argument("--levels", help="comma-separated episode counts (default from config)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="check emitted outputs against the acceptance criteria")
    common(p, config=False)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BadConfig as exc:
        print(f"BadConfig: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"BadConfig: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoFailure, MissingOutputs) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except SeedAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"IoFailure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
