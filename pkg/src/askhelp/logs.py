"""Episode logs as JSON Lines: one record per step, then one episode trailer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .env import LOG_SCHEMA
from .errors import LogSchemaError

STEP_FIELDS = ("t", "action", "pose", "reward", "lambda", "delta_lambda", "action_class",
               "teacher_present", "feedback_kind", "asked", "target_in_view")
TRAILER_FIELDS = ("outcome", "success", "steps", "shortest_path_len", "scene_id", "target",
                  "seed", "lambda_0")


@dataclass
class EpisodeLog:
    steps: list = field(default_factory=list)
    trailer: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return bool(self.trailer["success"])

    @property
    def n_steps(self) -> int:
        return int(self.trailer["steps"])

    @property
    def path_len(self) -> int:
        """Actions taken, not counting the terminating Stop."""
        n = self.n_steps
        if self.trailer["outcome"] in ("success", "stopped"):
            n -= 1
        return n

    def actions(self) -> list[str]:
        return [rec["action"] for rec in self.steps]


def dumps_episode(log: EpisodeLog) -> str:
    lines = [json.dumps(rec) for rec in log.steps]
    lines.append(json.dumps(log.trailer))
    return "\n".join(lines) + "\n"


def write_logs(logs: Iterable[EpisodeLog], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w") as fh:
        for log in logs:
            fh.write(dumps_episode(log))
    tmp.replace(path)


def _check_trailer(trailer: dict, where: str) -> None:
    if trailer.get("schema") != LOG_SCHEMA:
        raise LogSchemaError(f"{where}: schema {trailer.get('schema')!r}, expected {LOG_SCHEMA}")
    missing = [k for k in TRAILER_FIELDS if k not in trailer]
    if missing:
        raise LogSchemaError(f"{where}: trailer missing {missing}")


def read_logs(path) -> list[EpisodeLog]:
    logs = []
    current: list[dict] = []
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogSchemaError(f"{path}:{line_no}: not JSON ({exc})") from None
            kind = rec.get("kind")
            if kind == "step":
                missing = [k for k in STEP_FIELDS if k not in rec]
                if missing:
                    raise LogSchemaError(f"{path}:{line_no}: step record missing {missing}")
                current.append(rec)
            elif kind == "episode":
                _check_trailer(rec, f"{path}:{line_no}")
                if current and len(current) != rec["steps"]:
                    raise LogSchemaError(
                        f"{path}:{line_no}: trailer says {rec['steps']} steps, found {len(current)}")
                logs.append(EpisodeLog(current, rec))
                current = []
            else:
                raise LogSchemaError(f"{path}:{line_no}: unknown record kind {kind!r}")
    if current:
        raise LogSchemaError(f"{path}: {len(current)} step records without a trailer")
    return logs
