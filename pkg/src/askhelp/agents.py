"""Policies, the agent's own uncertainty ledger, and the curriculum training loop."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import feedback as fb
from .env import Action, EpisodeConfig, NavEnv, Observation
from .feedback import Variant
from .errors import CheckpointError
from .gridworld import (MOTIONS, Cell, FovParams, GridScene, Pose, euclid_dist, plan_to_poses,
                        step_pose, success_poses, _EPS)
from .logs import EpisodeLog
from .uncertainty import DecayParams, LikelihoodMap, ask_update_idx, lam, nav_update_idx, psi_array

N_ACTIONS = len(Action)
UNKNOWN_BUCKET = 9
_MOTION_ACTION = {"left": Action.RotateLeft, "right": Action.RotateRight, "forward": Action.MoveForward}


@dataclass(frozen=True)
class Curriculum:
    eta_percent: int
    episodes: int
    scene_pool: Sequence[GridScene]
    train_categories: Sequence[str]
    eval_categories: Sequence[str] = ()

    def __post_init__(self):
        if not 0 <= self.eta_percent <= 100:
            raise ValueError("eta_percent must be in [0, 100]")
        if set(self.train_categories) & set(self.eval_categories):
            raise ValueError("train and eval categories overlap")
        if not self.scene_pool or not self.train_categories:
            raise ValueError("empty scene pool or category list")


# -- agent memory -------------------------------------------------------------

class AgentMemory:
    """Everything the agent carries between steps of one episode.

    The agent knows the scene layout and its own pose but not where objects
    are. It keeps its own likelihood map, updated with the same rules as the
    environment's ledger, using whatever it believes about the target.
    With ``oracle_target`` set, target sightings come from ground truth and
    the map tracks the environment's ledger exactly.
    """

    def __init__(self, scene: GridScene, obs: Observation, variant: Variant = Variant.MASK,
                 decay: DecayParams = DecayParams(), fov: FovParams = FovParams(),
                 success_radius: float = 1.0, oracle_target: Cell | None = None):
        self.scene = scene
        self.geom = scene.geometry
        self.variant = Variant(variant)
        self.decay = decay
        self.fov = fov
        self.success_radius = success_radius
        self.oracle_target = oracle_target
        self.belief = LikelihoodMap(scene)
        self.lambda_0 = lam(self.belief)
        self.target_code = fb.FIRST_CATEGORY + obs.legend.index(obs.target_category)
        self.target_cell: Cell | None = None
        self.target_seen_ever = False
        self.recognized = False
        self.steps_since_ask = None
        self.last_ask_pose: Pose | None = None
        self.obs = obs
        self._scan(obs)

    @property
    def pose(self) -> Pose:
        return self.obs.pose

    @property
    def lam(self) -> float:
        return lam(self.belief)

    def _scan(self, obs: Observation) -> None:
        """Look for the target among recognised objects in the window."""
        hits = np.argwhere(obs.window == self.target_code)
        self.recognized = len(hits) > 0
        if self.recognized:
            r, c = hits[0]
            self._set_target(Cell(*fb.cell_of(obs.pose, int(r), int(c))))

    def _set_target(self, cell: Cell | None) -> None:
        self.target_cell = cell
        if cell is not None:
            self.target_seen_ever = True

    def _window_view(self, pose: Pose) -> np.ndarray:
        """Indices of visible cells that also fall inside the window."""
        key = ("window_view", pose, self.fov)
        hit = self.geom._views.get(key)
        if hit is None:
            cells = self.geom.view(pose, self.fov)[0]
            hit = np.array(sorted(self.geom.index[c] for c in cells if fb.slot_of(pose, c) is not None),
                           dtype=np.intp)
            self.geom._views[key] = hit
        return hit

    def _target_in_view(self, view_cells) -> Cell | None:
        if self.oracle_target is not None:
            return self.oracle_target if self.oracle_target in view_cells else None
        if self.target_cell is not None and self.target_cell in view_cells:
            return self.target_cell
        return None

    def update(self, action: Action, obs: Observation) -> None:
        self.obs = obs
        pose = obs.pose
        self._scan(obs)
        view_cells, view_idx = self.geom.view(pose, self.fov)
        # A believed target cell that is close and visible but not recognised is refuted.
        if (self.target_cell is not None and not self.recognized and self.oracle_target is None
                and self.target_cell in view_cells
                and euclid_dist(pose.cell, self.target_cell, self.scene.cell_size) <= self.success_radius + _EPS):
            self.target_cell = None

        if action in (Action.RotateLeft, Action.RotateRight, Action.MoveForward):
            tgt = self._target_in_view(view_cells)
            if tgt is None and self.oracle_target is None:
                view_idx = self._without_unidentified(obs, view_idx)
            nav_update_idx(self.belief, view_idx, pose.cell,
                           None if tgt is None else self.geom.index[tgt], tgt, self.decay)
        elif action is Action.Ask:
            self.steps_since_ask = -1
            self.last_ask_pose = pose
            if obs.last_feedback is not None and obs.last_feedback.kind != "absent":
                self._apply_feedback(obs.last_feedback, pose, view_cells, view_idx)
        if self.steps_since_ask is not None:
            self.steps_since_ask += 1
        if self.belief.values.max() <= 0.0:
            # every candidate eliminated by a wrong belief; start over
            self.belief.values[:] = 1.0

    def _without_unidentified(self, obs: Observation, view_idx: np.ndarray) -> np.ndarray:
        # An object too far away to identify could be the target, so looking
        # at it is no evidence against it.
        hits = np.argwhere(obs.window == fb.OBJECT)
        if len(hits) == 0:
            return view_idx
        skip = [self.geom.index[Cell(*fb.cell_of(obs.pose, int(r), int(c)))] for r, c in hits]
        return view_idx[~np.isin(view_idx, skip)]

    def _apply_feedback(self, feedback, pose, view_cells, view_idx) -> None:
        if self.oracle_target is not None:
            tgt = self._target_in_view(view_cells)
            ask_update_idx(self.belief, view_idx, pose.cell,
                           None if tgt is None else self.geom.index[tgt], tgt, self.decay)
            return
        kind = feedback.kind
        tgt = None
        if kind in ("mask", "noisy"):
            tgt = self._cell_from_mask(feedback.value, pose, view_cells)
            scope = view_idx if tgt is not None else self._window_view(pose)
        elif kind == "binary":
            if feedback.value == 1:
                return
            scope = view_idx
        else:
            parsed = fb.parse_language(feedback.value)
            if parsed is not None:
                tgt = self._cell_from_language(parsed, pose, view_cells)
            scope = view_idx if tgt is not None else self._window_view(pose)
        if tgt is not None:
            self._set_target(tgt)
        ask_update_idx(self.belief, scope, pose.cell,
                       None if tgt is None else self.geom.index[tgt], tgt, self.decay)

    def _cell_from_mask(self, mask, pose, view_cells) -> Cell | None:
        hits = np.argwhere(mask > 0)
        if len(hits) == 0:
            return None
        centre = hits.mean(axis=0)
        best = None
        for r, c in hits:
            cell = Cell(*fb.cell_of(pose, int(r), int(c)))
            if cell not in view_cells:
                continue
            key = ((r - centre[0]) ** 2 + (c - centre[1]) ** 2, int(r), int(c))
            if best is None or key < best[0]:
                best = (key, cell)
        return None if best is None else best[1]

    def _cell_from_language(self, parsed, pose, view_cells) -> Cell | None:
        block, close = parsed
        best = None
        for cell in view_cells:
            slot = fb.slot_of(pose, cell)
            if slot is None or fb.block_of(*slot) != block:
                continue
            d = euclid_dist(pose.cell, cell, self.scene.cell_size)
            if (d <= self.success_radius + _EPS) != close:
                continue
            key = (-self.belief[cell], d, cell.y, cell.x)
            if best is None or key < best[0]:
                best = (key, cell)
        return None if best is None else best[1]

    def mask_scope_mass(self, pose: Pose) -> float:
        """Likelihood mass the teacher's answer would speak to from ``pose``."""
        if self.variant is Variant.BINARY:
            idx = self.geom.view(pose, self.fov)[1]
        else:
            idx = self._window_view(pose)
        return float(self.belief.values[idx].sum())


# -- features -----------------------------------------------------------------

def direction_bucket(pose: Pose, cell, half_angle_deg: float = 45.0) -> int:
    """Which of the 3x3 window blocks points toward ``cell``.

    Cells outside the view cone map to the left or right block (turn that way).
    """
    fx, fy = pose.heading.vector
    rx, ry = pose.heading.right
    dx, dy = cell[0] - pose.cell[0], cell[1] - pose.cell[1]
    depth = dx * fx + dy * fy
    lateral = dx * rx + dy * ry
    if (dx, dy) != (0, 0):
        cos = depth / math.hypot(dx, dy)
        if cos < math.cos(math.radians(half_angle_deg)) - _EPS:
            return 3 if lateral <= 0 else 5
    row = fb.WINDOW_DEPTH - 1 - min(depth, fb.WINDOW_DEPTH - 1)
    col = fb.WINDOW_WIDTH // 2 + max(-(fb.WINDOW_WIDTH // 2), min(fb.WINDOW_WIDTH // 2, lateral))
    return fb.block_of(row, col)


def _ask_bucket(k) -> int:
    if k is None or k >= 5:
        return 3
    if k <= 1:
        return k
    return 2


def extract_features(obs: Observation, memory: AgentMemory) -> tuple:
    """(teacher, seen_ever, direction, lambda_decile, since_ask, blockage)."""
    pose = obs.pose
    bucket = UNKNOWN_BUCKET if memory.target_cell is None else direction_bucket(pose, memory.target_cell)
    if memory.lambda_0 > 0:
        decile = min(10, int(math.floor(10.0 * memory.lam / memory.lambda_0 + 1e-12)))
    else:
        decile = 0
    h = pose.heading
    geom = memory.geom
    blocked = 0
    for bit, heading in ((4, h), (2, h.turned(-1)), (1, h.turned(1))):
        fx, fy = heading.vector
        if not geom.is_free((pose.cell.x + fx, pose.cell.y + fy)):
            blocked |= bit
    return (int(obs.teacher_present), int(memory.target_seen_ever), bucket, decile,
            _ask_bucket(memory.steps_since_ask), blocked)


# -- policies -----------------------------------------------------------------

class RandomPolicy:
    name = "Random"
    learns = False

    def act(self, memory: AgentMemory, rng: np.random.Generator, epsilon: float = 1.0) -> Action:
        return Action(int(rng.integers(N_ACTIONS)))


class QPolicy:
    """Tabular Q-learning over the discrete feature tuple."""

    learns = True

    def __init__(self, learning_rate: float = 0.1, discount: float = 0.99,
                 eps_start: float = 1.0, eps_end: float = 0.05, eps_fraction: float = 0.5,
                 eval_epsilon: float = 0.0, name: str = "Q"):
        self.q: dict[tuple, list] = {}
        self.learning_rate = learning_rate
        self.discount = discount
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_fraction = eps_fraction
        self.eval_epsilon = eval_epsilon
        self.name = name
        self.meta: dict = {}

    def values(self, state) -> list:
        return self.q.get(state, [0.0] * N_ACTIONS)

    def greedy(self, state) -> Action:
        vals = self.values(state)
        best = 0
        for i in range(1, N_ACTIONS):
            if vals[i] > vals[best]:
                best = i
        return Action(best)

    def epsilon_at(self, episode: int, total: int) -> float:
        horizon = max(1, int(total * self.eps_fraction))
        frac = min(1.0, episode / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def act(self, memory: AgentMemory, rng: np.random.Generator, epsilon: float | None = None) -> Action:
        eps = self.eval_epsilon if epsilon is None else epsilon
        state = extract_features(memory.obs, memory)
        return self.act_on(state, rng, eps)

    def act_on(self, state, rng: np.random.Generator, epsilon: float) -> Action:
        if epsilon > 0 and rng.random() < epsilon:
            return Action(int(rng.integers(N_ACTIONS)))
        return self.greedy(state)


def q_update(policy: QPolicy, s, a, r: float, s2, done: bool) -> float:
    """One Q-learning backup; returns the new Q(s, a)."""
    row = policy.q.get(s)
    if row is None:
        row = [0.0] * N_ACTIONS
        policy.q[s] = row
    bootstrap = 0.0 if done else max(policy.values(s2))
    row[int(a)] += policy.learning_rate * (r + policy.discount * bootstrap - row[int(a)])
    return row[int(a)]


class HeuristicPolicy:
    """Scripted searcher driven by the agent's likelihood map.

    Goes for the target once it is located, asks when the teacher could
    clear a lot of likelihood from a fresh pose, and otherwise heads for the
    pose with the best expected likelihood drop per step.
    """

    name = "Heuristic"
    learns = False

    def __init__(self, ask_threshold: float = 2.0, exploit_fraction: float = 0.10):
        self.ask_threshold = ask_threshold
        self.exploit_fraction = exploit_fraction

    def act(self, memory: AgentMemory, rng: np.random.Generator | None = None, epsilon=None) -> Action:
        return heuristic_plan(memory.belief, memory, memory.pose, self.ask_threshold, self.exploit_fraction)


def _first_action(plan) -> Action | None:
    if not plan:
        return None
    return _MOTION_ACTION[plan[0]]


def _pose_weights(memory: AgentMemory, pose: Pose):
    key = ("psi", pose, memory.fov, memory.decay)
    hit = memory.geom._views.get(key)
    if hit is None:
        idx = memory.geom.view(pose, memory.fov)[1]
        d = memory.belief.distances(idx, pose.cell)
        hit = (idx, psi_array(d, memory.decay))
        memory.geom._views[key] = hit
    return hit


def _explore_action(memory: AgentMemory, pose: Pose) -> Action | None:
    """First move toward the reachable pose with the highest expected
    likelihood drop per action."""
    geom = memory.geom
    values = memory.belief.values
    parent = {pose: None}
    depth = {pose: 0}
    queue = deque([pose])
    best = None
    while queue:
        cur = queue.popleft()
        for m in MOTIONS:
            nxt = step_pose(geom, cur, m)
            if nxt in parent:
                continue
            parent[nxt] = (cur, m)
            depth[nxt] = depth[cur] + 1
            queue.append(nxt)
            idx, w = _pose_weights(memory, nxt)
            gain = float(np.dot(values[idx], w)) / depth[nxt]
            if gain > 1e-12 and (best is None or gain > best[0] + 1e-12):
                best = (gain, nxt)
    if best is None:
        return None
    cur = best[1]
    while parent[cur][0] != pose:
        cur = parent[cur][0]
    return _MOTION_ACTION[parent[cur][1]]


def heuristic_plan(belief: LikelihoodMap, memory: AgentMemory, pose: Pose,
                   ask_threshold: float = 2.0, exploit_fraction: float = 0.10) -> Action:
    scene = memory.scene
    if memory.target_cell is not None:
        if memory.recognized and memory.target_cell is not None:
            seen = memory.geom.view(pose, memory.fov)[0]
            if (memory.target_cell in seen and euclid_dist(pose.cell, memory.target_cell, scene.cell_size)
                    <= memory.success_radius + _EPS):
                return Action.Stop
        goals = success_poses(scene, memory.target_cell, memory.success_radius, memory.fov)
        step = _first_action(plan_to_poses(scene, pose, goals))
        if step is not None:
            return step

    if (memory.obs.teacher_present and memory.last_ask_pose != pose
            and memory.mask_scope_mass(pose) >= ask_threshold):
        return Action.Ask

    if lam(belief) < exploit_fraction * memory.lambda_0:
        top = belief.values.max()
        cands = [c for c, v in zip(belief.cells, belief.values) if v == top]
        goals = set()
        for c in cands:
            goals |= success_poses(scene, c, memory.success_radius, memory.fov)
        step = _first_action(plan_to_poses(scene, pose, goals))
        if step is not None:
            return step

    step = _explore_action(memory, pose)
    if step is not None:
        return step
    belief.values[:] = 1.0
    return _explore_action(memory, pose) or Action.RotateRight


# -- episode loop ---------------------------------------------------------------

def run_episode(env: NavEnv, scene: GridScene, config: EpisodeConfig, policy,
                rng: np.random.Generator, *, epsilon: float | None = None,
                learn: bool = False, keep_steps: bool = True) -> EpisodeLog:
    obs = env.reset(scene, config)
    memory = AgentMemory(env.scene, obs, config.feedback_variant, config.decay, env.fov,
                         config.success_radius)
    state = extract_features(obs, memory) if isinstance(policy, QPolicy) else None
    while not env.done:
        if state is not None:
            eps = policy.eval_epsilon if epsilon is None else epsilon
            action = policy.act_on(state, rng, eps)
        else:
            action = policy.act(memory, rng)
        result = env.step(action)
        memory.update(action, result.observation)
        if state is not None:
            nxt = extract_features(result.observation, memory)
            if learn:
                q_update(policy, state, action, result.reward, nxt, result.done)
            state = nxt
    return EpisodeLog(env.records if keep_steps else [], env.trailer())


def method_label(eta_percent: int, variant: Variant = Variant.MASK) -> str:
    if eta_percent == 0:
        return "Baseline"
    if eta_percent == 100:
        return {Variant.MASK: "Feedback", Variant.BINARY: "Binary Feedback",
                Variant.NOISY: "Noisy Feedback", Variant.LANGUAGE: "Language Feedback"}[Variant(variant)]
    return f"Semi-{eta_percent}"


def train(env_factory: Callable[[], NavEnv], policy, curriculum: Curriculum, seed: int, *,
          feedback_variant: Variant = Variant.MASK, max_steps: int = 500,
          decay: DecayParams = DecayParams(), keep_steps: bool = True,
          progress: Callable[[int, EpisodeLog], None] | None = None):
    """Run the semi-present-teacher curriculum; returns (policy, logs).

    Scene, target and teacher presence are drawn per episode from one seeded
    stream, so the whole run is reproducible from ``seed``.
    """
    rng = np.random.default_rng(seed)
    env = env_factory()
    logs = []
    pool = list(curriculum.scene_pool)
    cats = list(curriculum.train_categories)
    for ep in range(curriculum.episodes):
        scene = pool[int(rng.integers(len(pool)))]
        target = cats[int(rng.integers(len(cats)))]
        teacher = bool(rng.random() < curriculum.eta_percent / 100.0)
        ep_seed = int(rng.integers(2**63 - 1))
        config = EpisodeConfig(target, teacher_present=teacher, feedback_variant=feedback_variant,
                               max_steps=max_steps, seed=ep_seed, decay=decay)
        learn = getattr(policy, "learns", False)
        eps = policy.epsilon_at(ep, curriculum.episodes) if learn else None
        log = run_episode(env, scene, config, policy, rng, epsilon=eps, learn=learn,
                          keep_steps=keep_steps)
        log.trailer["episode"] = ep
        log.trailer["eta"] = curriculum.eta_percent
        logs.append(log)
        if progress is not None:
            progress(ep, log)
    if isinstance(policy, QPolicy):
        policy.meta.update(eta=curriculum.eta_percent, episodes=curriculum.episodes, seed=seed,
                           feedback=Variant(feedback_variant).value)
    return policy, logs


# -- evaluation ------------------------------------------------------------------

SPLITS = ("BothSeen", "UnseenScenes", "UnseenObjects", "BothUnseen")


def split_of(scene_seen: bool, object_seen: bool) -> str:
    if scene_seen and object_seen:
        return "BothSeen"
    if object_seen:
        return "UnseenScenes"
    if scene_seen:
        return "UnseenObjects"
    return "BothUnseen"


def evaluate(policy, train_scenes, test_scenes, train_categories, eval_categories, *,
             teacher_present: bool, feedback_variant: Variant = Variant.MASK,
             episodes_per_cell: int = 100, seed: int = 0, splits=SPLITS,
             max_steps: int = 500, decay: DecayParams = DecayParams(),
             method: str | None = None, store_maps: bool = False) -> list[EpisodeLog]:
    """Run every (scene, category) cell of the requested splits.

    Episode seeds depend only on (seed, scene, category, index), so results
    do not depend on which other cells are evaluated.
    """
    env = NavEnv(store_maps=store_maps)
    logs = []
    groups = {
        "BothSeen": (train_scenes, train_categories),
        "UnseenScenes": (test_scenes, train_categories),
        "UnseenObjects": (train_scenes, eval_categories),
        "BothUnseen": (test_scenes, eval_categories),
    }
    label = method or getattr(policy, "name", "policy")
    for split in splits:
        scenes, cats = groups[split]
        for scene in scenes:
            for cat in cats:
                cell_seq = np.random.SeedSequence([seed, _stable_hash(scene.scene_id), _stable_hash(cat)])
                seeds = cell_seq.generate_state(episodes_per_cell * 2, dtype=np.uint32)
                for k in range(episodes_per_cell):
                    ep_seed = int(seeds[2 * k]) << 32 | int(seeds[2 * k + 1])
                    ep_seed &= 2**63 - 1
                    config = EpisodeConfig(cat, teacher_present=teacher_present,
                                           feedback_variant=feedback_variant, max_steps=max_steps,
                                           seed=ep_seed, decay=decay)
                    rng = np.random.default_rng(ep_seed ^ 0x5DEECE66D)
                    log = run_episode(env, scene, config, policy, rng)
                    log.trailer.update(split=split, scene_seen=split in ("BothSeen", "UnseenObjects"),
                                       object_seen=split in ("BothSeen", "UnseenScenes"), method=label)
                    logs.append(log)
    return logs


def _stable_hash(text: str) -> int:
    h = 2166136261
    for ch in text.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


# -- checkpoints -------------------------------------------------------------------

CHECKPOINT_MAGIC = "askhelp-qtable"
CHECKPOINT_VERSION = 1


def dumps_qtable(policy: QPolicy, extra: dict | None = None) -> str:
    header = dict(policy.meta)
    header.update(learning_rate=policy.learning_rate, discount=policy.discount,
                  eval_epsilon=policy.eval_epsilon)
    if extra:
        header.update(extra)
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}"]
    lines += [f"# {k}={header[k]}" for k in sorted(header)]
    for state in sorted(policy.q):
        for a, v in enumerate(policy.q[state]):
            if v != 0.0:
                lines.append(f"({','.join(map(str, state))}) {Action(a).name} {v!r}")
    return "\n".join(lines) + "\n"


def loads_qtable(text: str) -> QPolicy:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC + " "):
        raise CheckpointError("not a Q-table checkpoint")
    version = lines[0].split()[1]
    if version != f"v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"checkpoint version {version}, expected v{CHECKPOINT_VERSION}")
    meta = {}
    policy = QPolicy()
    for line_no, line in enumerate(lines[1:], start=2):
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
            continue
        try:
            tup, action, value = line.rsplit(" ", 2)
            state = tuple(int(t) for t in tup.strip("()").split(","))
            policy.q.setdefault(state, [0.0] * N_ACTIONS)[Action[action]] = float(value)
        except (ValueError, KeyError) as exc:
            raise CheckpointError(f"line {line_no}: cannot parse {line!r} ({exc})") from None
    policy.learning_rate = float(meta.pop("learning_rate", policy.learning_rate))
    policy.discount = float(meta.pop("discount", policy.discount))
    policy.eval_epsilon = float(meta.pop("eval_epsilon", policy.eval_epsilon))
    policy.meta = meta
    return policy
