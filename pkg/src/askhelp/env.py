"""Object-goal navigation episodes with an ask action and an optional teacher."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import feedback as fb
from .errors import EpisodeDoneError
from .feedback import ABSENT, Feedback, NoiseParams, Variant
from .gridworld import (Cell, FovParams, GridScene, Pose, euclid_dist, relocate_objects,
                        shortest_path_len, step_pose, _los, _in_cone, _EPS)
from .uncertainty import DecayParams, LikelihoodMap, ask_update_idx, lam, nav_update_idx

LOG_SCHEMA = 1


class Action(IntEnum):
    RotateLeft = 0
    RotateRight = 1
    MoveForward = 2
    Stop = 3
    Ask = 4


NAV_ACTIONS = (Action.RotateLeft, Action.RotateRight, Action.MoveForward)
_MOTION = {Action.RotateLeft: "left", Action.RotateRight: "right", Action.MoveForward: "forward"}


@dataclass(frozen=True)
class EpisodeConfig:
    target_category: str
    teacher_present: bool = True
    feedback_variant: Variant = Variant.MASK
    max_steps: int = 500
    success_radius: float = 1.0
    step_penalty: float = -0.01
    success_reward: float = 10.0
    ask_penalty: float = 0.0
    seed: int = 0
    randomize_objects: bool = True
    decay: DecayParams = DecayParams()
    # objects further than this are seen only as "some object"
    recognition_range: float = 1.0
    noise: NoiseParams = NoiseParams()

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        object.__setattr__(self, "feedback_variant", Variant(self.feedback_variant))


@dataclass
class Observation:
    window: np.ndarray
    legend: tuple
    target_category: str
    teacher_present: bool
    last_feedback: Feedback | None
    pose: Pose
    step: int = 0

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (np.array_equal(self.window, other.window) and self.legend == other.legend
                and self.target_category == other.target_category
                and self.teacher_present == other.teacher_present
                and self.last_feedback == other.last_feedback
                and self.pose == other.pose and self.step == other.step)


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def is_success(scene: GridScene, pose: Pose, target_cell: Cell, success_radius: float = 1.0,
               fov: FovParams = FovParams()) -> bool:
    if euclid_dist(pose.cell, target_cell, scene.cell_size) > success_radius + _EPS:
        return False
    return Cell(*target_cell) in scene.geometry.view(pose, fov)[0]


def _window_base(scene: GridScene, pose: Pose, fov: FovParams) -> np.ndarray:
    """Occupancy part of the window: unseen / free / blocked."""
    geom = scene.geometry
    visible = geom.view(pose, fov)[0]
    win = np.zeros((fb.WINDOW_DEPTH, fb.WINDOW_WIDTH), dtype=np.int8)
    for r in range(fb.WINDOW_DEPTH):
        for c in range(fb.WINDOW_WIDTH):
            cell = Cell(*fb.cell_of(pose, r, c))
            if cell in visible:
                win[r, c] = fb.FREE
            elif cell in geom.blocked and _wall_seen(scene, pose, cell, fov):
                win[r, c] = fb.BLOCKED
    return win


def _wall_seen(scene, pose, cell, fov) -> bool:
    dx, dy = cell[0] - pose.cell[0], cell[1] - pose.cell[1]
    if euclid_dist(pose.cell, cell, scene.cell_size) > fov.max_range + _EPS:
        return False
    return _in_cone(dx, dy, pose.heading, fov.half_angle_deg) and _los(scene.blocked, pose.cell, cell)


class NavEnv:
    """One episode at a time; strictly sequential."""

    def __init__(self, fov: FovParams = FovParams(), store_maps: bool = False):
        self.fov = fov
        self.store_maps = store_maps
        self.scene = None
        self.done = True

    # -- episode lifecycle --------------------------------------------------

    def reset(self, scene: GridScene, config: EpisodeConfig) -> Observation:
        if config.target_category not in scene.objects:
            raise KeyError(f"target category {config.target_category!r} not in scene {scene.scene_id}")
        self.rng = np.random.default_rng(config.seed)
        if config.randomize_objects:
            scene = relocate_objects(scene, self.rng)
        self.scene = scene
        self.config = config
        self.geom = scene.geometry
        self.pose = scene.start
        self.target_cell = scene.object_cell(config.target_category)
        self.target_idx = self.geom.index[self.target_cell]
        self.phi = LikelihoodMap(scene)
        self.lambda_0 = lam(self.phi)
        self.steps = 0
        self.total_reward = 0.0
        self.success = False
        self.done = False
        self.records: list[dict] = []
        self.shortest = shortest_path_len(scene, scene.start, self.target_cell,
                                          config.success_radius, self.fov)
        self.last_feedback = None
        return self._observe(None)

    @property
    def lam(self) -> float:
        return lam(self.phi)

    def visible(self, pose: Pose | None = None):
        return self.geom.view(pose or self.pose, self.fov)

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeDoneError("episode is over; call reset()")
        action = Action(action)
        cfg = self.config
        self.steps += 1
        reward = cfg.step_penalty
        delta = 0.0
        fback = None

        if action in NAV_ACTIONS:
            action_class = "Nav"
            self.pose = step_pose(self.geom, self.pose, _MOTION[action])
            view_cells, view_idx = self.visible()
            t_idx = self.target_idx if self.target_cell in view_cells else None
            delta = nav_update_idx(self.phi, view_idx, self.pose.cell, t_idx, self.target_cell, cfg.decay)
        elif action is Action.Stop:
            action_class = "Terminal"
            self.success = is_success(self.scene, self.pose, self.target_cell, cfg.success_radius, self.fov)
            if self.success:
                reward += cfg.success_reward
            self.done = True
        else:
            action_class = "Ask"
            reward += cfg.ask_penalty
            if cfg.teacher_present:
                view_cells, view_idx = self.visible()
                t_idx = self.target_idx if self.target_cell in view_cells else None
                fback = self._teacher_feedback(t_idx is not None)
                delta = ask_update_idx(self.phi, view_idx, self.pose.cell, t_idx, self.target_cell, cfg.decay)
            else:
                fback = ABSENT

        if not self.done and self.steps >= cfg.max_steps:
            self.done = True
        self.total_reward += reward
        if fback is None and cfg.teacher_present:
            idle = fb.idle_feedback(cfg.feedback_variant, cfg.target_category)
        else:
            idle = None
        self.last_feedback = fback if fback is not None else idle

        target_in_view = self.target_cell in self.visible()[0]
        lam_now = self.lam
        rec = {
            "kind": "step",
            "t": self.steps,
            "action": action.name,
            "pose": [self.pose.cell.x, self.pose.cell.y, self.pose.heading.name],
            "reward": reward,
            "lambda": lam_now,
            "delta_lambda": delta,
            "action_class": action_class,
            "teacher_present": cfg.teacher_present,
            "feedback_kind": fback.kind if fback is not None else "none",
            "asked": action is Action.Ask,
            "target_in_view": target_in_view,
        }
        if self.store_maps:
            rec["phi"] = self.phi.values.tolist()
        self.records.append(rec)

        info = {
            "success": self.success,
            "lambda": lam_now,
            "delta_lambda": delta,
            "action_class": action_class,
            "target_in_view": target_in_view,
        }
        return StepResult(self._observe(self.last_feedback), reward, self.done, info)

    # -- feedback / observation ---------------------------------------------

    def _teacher_feedback(self, visible: bool) -> Feedback:
        cfg = self.config
        obj = self.scene.objects[cfg.target_category]
        return fb.make_feedback(
            cfg.feedback_variant, fb.slot_of(self.pose, self.target_cell), visible,
            color=obj.color, name=cfg.target_category,
            dist=euclid_dist(self.pose.cell, self.target_cell, self.scene.cell_size),
            rng=self.rng, noise=cfg.noise, close_threshold=cfg.success_radius)

    def window(self, pose: Pose | None = None) -> np.ndarray:
        pose = pose or self.pose
        key = ("window", pose, self.fov)
        base = self.geom._views.get(key)
        if base is None:
            base = _window_base(self.scene, pose, self.fov)
            self.geom._views[key] = base
        win = base.copy()
        visible = self.visible(pose)[0]
        for i, (name, obj) in enumerate(self.scene.objects.items()):
            if obj.cell not in visible:
                continue
            slot = fb.slot_of(pose, obj.cell)
            if slot is None:
                continue
            near = euclid_dist(pose.cell, obj.cell, self.scene.cell_size) <= self.config.recognition_range + _EPS
            win[slot] = fb.FIRST_CATEGORY + i if near else fb.OBJECT
        return win

    def _observe(self, last_feedback) -> Observation:
        return Observation(self.window(), self.scene.categories, self.config.target_category,
                           self.config.teacher_present, last_feedback, self.pose, self.steps)

    # -- logging --------------------------------------------------------------

    def trailer(self) -> dict:
        cfg = self.config
        if self.success:
            outcome = "success"
        elif self.records and self.records[-1]["action"] == "Stop":
            outcome = "stopped"
        else:
            outcome = "timeout"
        return {
            "kind": "episode",
            "schema": LOG_SCHEMA,
            "outcome": outcome,
            "success": self.success,
            "steps": self.steps,
            "shortest_path_len": self.shortest,
            "scene_id": self.scene.scene_id,
            "target": cfg.target_category,
            "seed": cfg.seed,
            "lambda_0": self.lambda_0,
            "total_reward": self.total_reward,
            "teacher_present": cfg.teacher_present,
            "feedback": cfg.feedback_variant.value,
            "max_steps": cfg.max_steps,
            "success_radius": cfg.success_radius,
            "randomize_objects": cfg.randomize_objects,
            "alpha": cfg.decay.alpha,
            "beta": cfg.decay.beta,
        }


def config_from_trailer(trailer: dict) -> EpisodeConfig:
    """Rebuild the EpisodeConfig an episode ran under, for replay."""
    return EpisodeConfig(
        target_category=trailer["target"],
        teacher_present=trailer["teacher_present"],
        feedback_variant=Variant(trailer["feedback"]),
        max_steps=trailer["max_steps"],
        success_radius=trailer["success_radius"],
        seed=trailer["seed"],
        randomize_objects=trailer["randomize_objects"],
        decay=DecayParams(trailer["alpha"], trailer["beta"]),
    )


def replay(scene: GridScene, trailer: dict, actions, upto: int | None = None) -> NavEnv:
    """Re-run an episode's actions; stops after ``upto`` steps when given."""
    env = NavEnv()
    env.reset(scene, config_from_trailer(trailer))
    for i, a in enumerate(actions):
        if upto is not None and i >= upto:
            break
        env.step(Action[a] if isinstance(a, str) else a)
    return env
