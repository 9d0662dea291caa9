"""Command-line entry point: gen-scenes, train, eval, analyze, render."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import agents, metrics
from .config import ETA_PRESETS, RunConfig, load_config
from .env import NavEnv, replay
from .errors import AskHelpError, CheckpointError
from .gridworld import (ALL_CATEGORIES, EVAL_CATEGORIES, TRAIN_CATEGORIES, SceneParams, dumps_scene,
                        generate_scene, load_scene)
from .logs import EpisodeLog, read_logs, write_logs
from .uncertainty import DecayParams, LikelihoodMap, heatmap

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
MANIFEST = "manifest.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _decay(cfg: RunConfig) -> DecayParams:
    return DecayParams(cfg.alpha, cfg.beta)


# -- scenes ---------------------------------------------------------------------

def cmd_gen_scenes(cfg: RunConfig) -> list[Path]:
    params = SceneParams(cfg.width, cfg.height, cfg.obstacle_density, ALL_CATEGORIES, cfg.cell_size)
    out = cfg.scene_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise AskHelpError(f"cannot create {out}: {exc}") from None
    written = []
    manifest = [f"# config {cfg.digest()}"]
    pools = (("train", cfg.train_seed_base, cfg.train_scenes), ("test", cfg.test_seed_base, cfg.test_scenes))
    for split, base, count in pools:
        for i in range(count):
            seed = base + i
            scene = generate_scene(seed, params, f"{split}{i:02d}")
            path = out / f"{scene.scene_id}.scene"
            _write_atomic(path, dumps_scene(scene))
            manifest.append(f"{scene.scene_id} {split} {seed} {path.name}")
            written.append(path)
    _write_atomic(out / MANIFEST, "\n".join(manifest) + "\n")
    return written


def load_pools(cfg: RunConfig):
    manifest = cfg.scene_dir / MANIFEST
    if not manifest.exists():
        raise AskHelpError(f"scene manifest {manifest} not found; run gen-scenes first")
    pools = {"train": [], "test": []}
    for line_no, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4 or parts[1] not in pools:
            raise AskHelpError(f"{manifest}:{line_no}: malformed entry {line!r}")
        scene = load_scene(manifest.parent / parts[3])
        if scene.scene_id != parts[0]:
            raise AskHelpError(f"{manifest}:{line_no}: file holds scene {scene.scene_id}")
        pools[parts[1]].append(scene)
    if not pools["train"] or not pools["test"]:
        raise AskHelpError(f"{manifest}: needs both train and test scenes")
    return pools["train"], pools["test"]


# -- training and evaluation --------------------------------------------------------

def checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out) / "checkpoint.txt"


def cmd_train(cfg: RunConfig, progress=None) -> Path:
    if cfg.policy != "q":
        raise UsageError(f"policy {cfg.policy!r} has nothing to train")
    train_scenes, _ = load_pools(cfg)
    curriculum = agents.Curriculum(cfg.eta, cfg.episodes, train_scenes, TRAIN_CATEGORIES, EVAL_CATEGORIES)
    policy, logs = agents.train(NavEnv, agents.QPolicy(eval_epsilon=cfg.eval_epsilon), curriculum, cfg.seed,
                                feedback_variant=cfg.variant, max_steps=cfg.max_steps,
                                decay=_decay(cfg), keep_steps=False, progress=progress)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for log in logs:
        log.trailer["config_hash"] = cfg.digest()
    # per-step records of a full training run would run to gigabytes
    write_logs(logs, out / "train_log.jsonl")
    path = checkpoint_path(cfg)
    _write_atomic(path, agents.dumps_qtable(policy, {"config_hash": cfg.digest()}))
    return path


def load_policy(cfg: RunConfig):
    if cfg.policy == "heuristic":
        return agents.HeuristicPolicy()
    if cfg.policy == "random":
        return agents.RandomPolicy()
    path = checkpoint_path(cfg)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    policy = agents.loads_qtable(text)
    policy.eval_epsilon = cfg.eval_epsilon
    return policy


def method_of(cfg: RunConfig, policy) -> str:
    if cfg.policy != "q":
        return policy.name
    eta = int(policy.meta.get("eta", cfg.eta))
    label = agents.method_label(eta, policy.meta.get("feedback", cfg.feedback))
    if cfg.eval_variant.value != policy.meta.get("feedback", cfg.feedback):
        label += f" (eval {cfg.eval_variant.value})"
    return label


def cmd_eval(cfg: RunConfig) -> list[Path]:
    train_scenes, test_scenes = load_pools(cfg)
    policy = load_policy(cfg)
    method = method_of(cfg, policy)
    written = []
    for teacher in cfg.teacher_settings:
        logs = agents.evaluate(policy, train_scenes, test_scenes, TRAIN_CATEGORIES, EVAL_CATEGORIES,
                               teacher_present=teacher, feedback_variant=cfg.eval_variant,
                               episodes_per_cell=cfg.episodes_per_cell, seed=cfg.seed,
                               splits=cfg.split_list, max_steps=cfg.max_steps, decay=_decay(cfg),
                               method=method)
        for log in logs:
            log.trailer["config_hash"] = cfg.digest()
        path = Path(cfg.out) / f"eval_{'present' if teacher else 'absent'}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_logs(logs, path)
        written.append(path)
    return written


# -- analysis and rendering -------------------------------------------------------------

def cmd_analyze(cfg: RunConfig, paths) -> str:
    logs: list[EpisodeLog] = []
    for p in paths:
        logs.extend(read_logs(p))
    if not logs:
        raise AskHelpError("no episodes in the given logs")
    hashes = sorted({str(log.trailer.get("config_hash", "?")) for log in logs})
    provenance = f"config {cfg.digest()}; logs from {','.join(hashes)}"
    reports = metrics.build_reports(logs, cfg.gamma, cfg.vapid_fraction)
    text = metrics.render_report(reports, cfg.gamma, cfg.vapid_fraction, provenance)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "report.txt", text)
    _write_atomic(out / "summary.json", metrics.summary_json(reports, provenance))
    return text


def map_at_step(log: EpisodeLog, scene, step: int) -> LikelihoodMap:
    n = len(log.steps)
    if not 0 <= step <= n:
        raise AskHelpError(f"step {step} out of range 0..{n}")
    if step > 0 and "phi" in log.steps[step - 1]:
        return LikelihoodMap(scene, np.asarray(log.steps[step - 1]["phi"], dtype=float))
    return replay(scene, log.trailer, log.actions(), upto=step).phi


def cmd_render(cfg: RunConfig, log_path, episode: int, step: int, out_path=None) -> Path:
    logs = read_logs(log_path)
    if not 0 <= episode < len(logs):
        raise AskHelpError(f"episode {episode} out of range 0..{len(logs) - 1}")
    log = logs[episode]
    if not log.steps:
        raise AskHelpError("episode has no step records to replay")
    scene_id = log.trailer["scene_id"]
    scene = load_scene(cfg.scene_dir / f"{scene_id}.scene")
    phi = map_at_step(log, scene, step)
    pgm = heatmap(phi, scene)
    pgm = pgm.replace("P2\n", f"P2\n# config {cfg.digest()} episode {episode} step {step}\n", 1)
    path = Path(out_path) if out_path else Path(cfg.out) / f"heatmap_e{episode}_s{step}.pgm"
    _write_atomic(path, pgm)
    return path


# -- argument parsing ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--eta", type=int, choices=ETA_PRESETS,
                        help="percent of training episodes with the teacher present")
    common.add_argument("--feedback", choices=("mask", "binary", "noisy", "language"))
    common.add_argument("--teacher", choices=("present", "absent", "both"))
    common.add_argument("--episodes", type=int, help="training episodes, or episodes per cell for eval")
    common.add_argument("--out", help="output directory")
    common.add_argument("--policy", choices=("q", "heuristic", "random"))
    common.add_argument("--checkpoint")
    common.add_argument("--scenes-dir", dest="scenes_dir")

    parser = _Parser(prog="askhelp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-scenes", parents=[common], help="write train and test scene pools")
    sub.add_parser("train", parents=[common], help="train a Q-table under the curriculum")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a policy on the four splits")
    ev.add_argument("--eval-feedback", dest="eval_feedback",
                    choices=("mask", "binary", "noisy", "language"),
                    help="feedback variant at test time (defaults to --feedback)")
    an = sub.add_parser("analyze", parents=[common], help="print the result tables")
    an.add_argument("logs", nargs="+")
    rd = sub.add_parser("render", parents=[common], help="write a likelihood heatmap")
    rd.add_argument("log")
    rd.add_argument("--episode", type=int, default=0)
    rd.add_argument("--step", type=int, required=True)
    rd.add_argument("--pgm", help="output file")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "eta", "feedback", "teacher", "out", "policy", "checkpoint", "scenes_dir",
                  "eval_feedback")}
    if args.episodes is not None:
        overrides["episodes_per_cell" if args.command == "eval" else "episodes"] = args.episodes
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "gen-scenes":
            for p in cmd_gen_scenes(cfg):
                print(p)
        elif args.command == "train":
            print(cmd_train(cfg))
        elif args.command == "eval":
            for p in cmd_eval(cfg):
                print(p)
        elif args.command == "analyze":
            sys.stdout.write(cmd_analyze(cfg, args.logs))
        elif args.command == "render":
            print(cmd_render(cfg, args.log, args.episode, args.step, args.pgm))
    except UsageError as exc:
        print(f"askhelp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AskHelpError, OSError, ValueError, KeyError) as exc:
        print(f"askhelp: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
