"""Flat ``key = value`` run configuration.

Values are resolved with command-line flags over the config file over the
defaults below. The hash of the resolved config is stamped on every output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .feedback import Variant

ETA_PRESETS = (0, 25, 75, 100)


@dataclass(frozen=True)
class RunConfig:
    # scenes
    width: int = 8
    height: int = 8
    obstacle_density: float = 0.1
    cell_size: float = 0.25
    train_scenes: int = 10
    test_scenes: int = 5
    train_seed_base: int = 1000
    test_seed_base: int = 2000
    # training
    policy: str = "q"
    eta: int = 100
    episodes: int = 50_000
    feedback: str = "mask"
    max_steps: int = 500
    seed: int = 0
    # evaluation
    teacher: str = "both"
    eval_feedback: str = ""
    episodes_per_cell: int = 100
    splits: str = "BothSeen,UnseenScenes,UnseenObjects,BothUnseen"
    eval_epsilon: float = 0.0
    # decay and metrics
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 2.0
    vapid_fraction: float = 0.10
    # paths
    out: str = "run"
    scenes_dir: str = ""
    checkpoint: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ConfigError("width and height must be >= 2")
        if not 0.0 <= self.obstacle_density < 1.0:
            raise ConfigError("obstacle_density must be in [0, 1)")
        if self.train_scenes < 1 or self.test_scenes < 1:
            raise ConfigError("need at least one train and one test scene")
        # seeds are base + index, so the two ranges must not overlap
        lo1, hi1 = self.train_seed_base, self.train_seed_base + self.train_scenes
        lo2, hi2 = self.test_seed_base, self.test_seed_base + self.test_scenes
        if lo1 < hi2 and lo2 < hi1:
            raise ConfigError("train and test scene seed ranges overlap")
        if self.policy not in ("q", "heuristic", "random"):
            raise ConfigError(f"policy must be q, heuristic or random, got {self.policy!r}")
        if not 0 <= self.eta <= 100:
            raise ConfigError("eta must be a percentage in [0, 100]")
        if self.episodes < 1 or self.episodes_per_cell < 1 or self.max_steps < 1:
            raise ConfigError("episodes, episodes_per_cell and max_steps must be >= 1")
        for name in ("feedback", "eval_feedback"):
            value = getattr(self, name)
            if value and value not in {v.value for v in Variant}:
                raise ConfigError(f"{name} must be one of mask, binary, noisy, language")
        if self.teacher not in ("present", "absent", "both"):
            raise ConfigError("teacher must be present, absent or both")
        if not 0 < self.alpha < self.beta:
            raise ConfigError("need 0 < alpha < beta")
        if not 0.0 <= self.eval_epsilon <= 1.0:
            raise ConfigError("eval_epsilon must be in [0, 1]")
        bad = [s for s in self.split_list if s not in
               ("BothSeen", "UnseenScenes", "UnseenObjects", "BothUnseen")]
        if bad or not self.split_list:
            raise ConfigError(f"unknown splits {bad}")

    @property
    def split_list(self) -> tuple:
        return tuple(s.strip() for s in self.splits.split(",") if s.strip())

    @property
    def variant(self) -> Variant:
        return Variant(self.feedback)

    @property
    def eval_variant(self) -> Variant:
        return Variant(self.eval_feedback or self.feedback)

    @property
    def teacher_settings(self) -> tuple:
        return {"present": (True,), "absent": (False,), "both": (True, False)}[self.teacher]

    @property
    def scene_dir(self) -> Path:
        return Path(self.scenes_dir) if self.scenes_dir else Path(self.out) / "scenes"

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> str:
        """Hash of the settings that shape results; where files go does not count."""
        text = "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self)
                       if f.name not in PATH_FIELDS)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


PATH_FIELDS = ("out", "scenes_dir", "checkpoint")
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_config(text: str, where: str = "<config>") -> dict:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{where}:{line_no}: expected key = value")
        if key not in _TYPES:
            raise ConfigError(f"{where}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config(text, str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _coerce(key, value) if isinstance(value, str) else value
    return replace(RunConfig(), **values) if values else RunConfig()
