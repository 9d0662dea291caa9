"""Grid scenes, visibility and path queries.

Cells are addressed as ``(x, y)`` with ``x`` the column and ``y`` the row;
row 0 is the top of the grid, so North points toward decreasing ``y``.
"""

from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import SceneGenerationError, SceneParseError, SceneValidationError

TRAIN_CATEGORIES = ("apple", "bowl", "potato", "soap_bottle", "dish_sponge")
EVAL_CATEGORIES = ("cup", "bread")
ALL_CATEGORIES = TRAIN_CATEGORIES + EVAL_CATEGORIES

COLORS = ("red", "green", "yellow", "white", "blue", "brown", "orange", "pink")

DEFAULT_CELL_SIZE = 0.25
# slack for float comparisons against range and cone limits
_EPS = 1e-9


class Cell(NamedTuple):
    x: int
    y: int


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def vector(self) -> tuple[int, int]:
        return _HEADING_VECTORS[self]

    @property
    def right(self) -> tuple[int, int]:
        fx, fy = _HEADING_VECTORS[self]
        return (-fy, fx)

    def turned(self, steps: int) -> "Heading":
        return Heading((self + steps) % 4)

    @classmethod
    def parse(cls, text: str) -> "Heading":
        key = text.strip().upper()
        aliases = {"NORTH": "N", "EAST": "E", "SOUTH": "S", "WEST": "W"}
        return cls[aliases.get(key, key)]


_HEADING_VECTORS = {
    Heading.N: (0, -1),
    Heading.E: (1, 0),
    Heading.S: (0, 1),
    Heading.W: (-1, 0),
}


@dataclass(frozen=True)
class Pose:
    cell: Cell
    heading: Heading

    def forward_cell(self) -> Cell:
        fx, fy = self.heading.vector
        return Cell(self.cell.x + fx, self.cell.y + fy)


@dataclass(frozen=True)
class FovParams:
    half_angle_deg: float = 45.0
    max_range: float = 3.0

    def __post_init__(self):
        if not 0 < self.half_angle_deg <= 90:
            raise ValueError(f"half_angle_deg must be in (0, 90], got {self.half_angle_deg}")
        if self.max_range <= 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")


@dataclass(frozen=True)
class SceneObject:
    cell: Cell
    color: str


@dataclass(frozen=True)
class SceneParams:
    width: int = 8
    height: int = 8
    obstacle_density: float = 0.2
    categories: tuple[str, ...] = ALL_CATEGORIES
    cell_size: float = DEFAULT_CELL_SIZE

    def check(self) -> None:
        if self.width < 4 or self.height < 4:
            raise ValueError("width and height must be at least 4")
        if not 0.0 <= self.obstacle_density <= 0.4:
            raise ValueError("obstacle_density must lie in [0, 0.4]")
        if not self.categories:
            raise ValueError("category list is empty")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("duplicate categories")


@dataclass(frozen=True)
class GridScene:
    scene_id: str
    width: int
    height: int
    blocked: frozenset
    objects: dict = field(hash=False)
    start: Pose
    cell_size: float = DEFAULT_CELL_SIZE

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.blocked

    @property
    def geometry(self) -> "Geometry":
        return _geometry(self.width, self.height, self.cell_size, self.blocked)

    @property
    def free_cells(self) -> list[Cell]:
        """Free cells in row-major order."""
        return self.geometry.free

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self.objects)

    def object_cell(self, category: str) -> Cell:
        return self.objects[category].cell

    def with_objects(self, objects: dict) -> "GridScene":
        return GridScene(self.scene_id, self.width, self.height, self.blocked,
                         dict(objects), self.start, self.cell_size)

    @classmethod
    def from_ascii(cls, rows: Iterable[str], *, objects: dict | None = None,
                   start: Pose | None = None, scene_id: str = "ascii",
                   cell_size: float = DEFAULT_CELL_SIZE) -> "GridScene":
        """Build a scene from ``.``/``#`` rows (mostly for tests)."""
        rows = list(rows)
        blocked = frozenset(Cell(x, y) for y, row in enumerate(rows)
                            for x, ch in enumerate(row) if ch == "#")
        objs = {}
        for name, entry in (objects or {}).items():
            if isinstance(entry, SceneObject):
                objs[name] = entry
            else:
                objs[name] = SceneObject(Cell(*entry), "red")
        if start is None:
            free = [Cell(x, y) for y in range(len(rows)) for x in range(len(rows[0]))
                    if Cell(x, y) not in blocked]
            start = Pose(free[0], Heading.E)
        return cls(scene_id, len(rows[0]), len(rows), blocked, objs, start, cell_size)


class Geometry:
    """Occupancy-only precomputation shared by scenes with the same layout."""

    def __init__(self, width: int, height: int, cell_size: float, blocked: frozenset):
        self.width = width
        self.height = height
        self.cell_size = cell_size
        self.blocked = blocked
        self.free = [Cell(x, y) for y in range(height) for x in range(width)
                     if Cell(x, y) not in blocked]
        self.index = {c: i for i, c in enumerate(self.free)}
        self.xs = np.array([c.x for c in self.free], dtype=np.float64)
        self.ys = np.array([c.y for c in self.free], dtype=np.float64)
        self._views: dict = {}

    def is_free(self, cell) -> bool:
        return (0 <= cell[0] < self.width and 0 <= cell[1] < self.height
                and cell not in self.blocked)

    def view(self, pose: Pose, fov: FovParams) -> tuple[frozenset, np.ndarray]:
        key = (pose.cell, pose.heading, fov)
        hit = self._views.get(key)
        if hit is None:
            cells = _compute_visible(self, pose, fov)
            idx = np.array(sorted(self.index[c] for c in cells), dtype=np.intp)
            hit = (cells, idx)
            self._views[key] = hit
        return hit


@functools.lru_cache(maxsize=512)
def _geometry(width, height, cell_size, blocked) -> Geometry:
    return Geometry(width, height, cell_size, blocked)


def euclid_dist(a, b, cell_size: float = DEFAULT_CELL_SIZE) -> float:
    return cell_size * math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def _segment_enters_cell(ax, ay, bx, by, cx, cy) -> bool:
    # Exact test in doubled integer coordinates: does the closed segment a-b
    # meet the open unit square centred on c?
    if min(2 * ax, 2 * bx) >= 2 * cx + 1 or max(2 * ax, 2 * bx) <= 2 * cx - 1:
        return False
    if min(2 * ay, 2 * by) >= 2 * cy + 1 or max(2 * ay, 2 * by) <= 2 * cy - 1:
        return False
    dx, dy = bx - ax, by - ay
    s = -dy * (2 * ax - 2 * cx) + dx * (2 * ay - 2 * cy)
    return abs(s) < abs(dx) + abs(dy)


def _los(blocked, a, b) -> bool:
    ax, ay = a
    bx, by = b
    for cx in range(min(ax, bx), max(ax, bx) + 1):
        for cy in range(min(ay, by), max(ay, by) + 1):
            if (cx, cy) in blocked and (cx, cy) != (ax, ay) and (cx, cy) != (bx, by):
                if _segment_enters_cell(ax, ay, bx, by, cx, cy):
                    return False
    return True


def line_of_sight(scene: GridScene, a: Cell, b: Cell) -> bool:
    """True when the segment between the centres of ``a`` and ``b`` passes
    through the interior of no blocked cell. ``b`` itself must be free.

    Grazing a blocked cell's corner does not block the ray.
    """
    if a == b:
        return True
    if Cell(*b) in scene.blocked:
        return False
    return _los(scene.blocked, a, b)


def _in_cone(dx: int, dy: int, heading: Heading, half_angle_deg: float) -> bool:
    fx, fy = heading.vector
    dot = dx * fx + dy * fy
    norm = math.hypot(dx, dy)
    return dot >= norm * math.cos(math.radians(half_angle_deg)) - _EPS


def _compute_visible(geom: Geometry, pose: Pose, fov: FovParams) -> frozenset:
    ax, ay = pose.cell
    reach = int(math.floor(fov.max_range / geom.cell_size + _EPS))
    out = {Cell(ax, ay)}
    for y in range(max(0, ay - reach), min(geom.height, ay + reach + 1)):
        for x in range(max(0, ax - reach), min(geom.width, ax + reach + 1)):
            c = Cell(x, y)
            if c in geom.blocked or (x == ax and y == ay):
                continue
            if euclid_dist(pose.cell, c, geom.cell_size) > fov.max_range + _EPS:
                continue
            if not _in_cone(x - ax, y - ay, pose.heading, fov.half_angle_deg):
                continue
            if _los(geom.blocked, pose.cell, c):
                out.add(c)
    return frozenset(out)


def visible_cells(scene: GridScene, pose: Pose, fov: FovParams = FovParams()) -> frozenset:
    """Free cells inside the view cone, within range, with a clear line of sight.

    The agent's own cell is always included.
    """
    return scene.geometry.view(pose, fov)[0]


def step_pose(geom, pose: Pose, action: str) -> Pose:
    """Apply a motion primitive ('left', 'right', 'forward') to a pose."""
    if action == "left":
        return Pose(pose.cell, pose.heading.turned(-1))
    if action == "right":
        return Pose(pose.cell, pose.heading.turned(1))
    nxt = pose.forward_cell()
    if geom.is_free(nxt):
        return Pose(nxt, pose.heading)
    return pose


MOTIONS = ("left", "right", "forward")


def success_poses(scene: GridScene, goal: Cell, success_radius: float,
                  fov: FovParams = FovParams()) -> set[Pose]:
    geom = scene.geometry
    out = set()
    for c in geom.free:
        if euclid_dist(c, goal, geom.cell_size) > success_radius + _EPS:
            continue
        for h in Heading:
            pose = Pose(c, h)
            if goal in geom.view(pose, fov)[0]:
                out.add(pose)
    return out


def plan_to_poses(scene: GridScene, start: Pose, targets) -> list[str] | None:
    """Breadth-first motion plan from ``start`` to the nearest pose in ``targets``.

    Returns the list of motion primitives, or None if no target is reachable.
    Ties between equally short plans are broken by primitive order.
    """
    targets = set(targets)
    if start in targets:
        return []
    geom = scene.geometry
    parent = {start: None}
    queue = deque([start])
    while queue:
        pose = queue.popleft()
        for m in MOTIONS:
            nxt = step_pose(geom, pose, m)
            if nxt in parent:
                continue
            parent[nxt] = (pose, m)
            if nxt in targets:
                plan = []
                cur = nxt
                while parent[cur] is not None:
                    cur, move = parent[cur]
                    plan.append(move)
                return plan[::-1]
            queue.append(nxt)
    return None


def shortest_path_len(scene: GridScene, start: Pose, goal: Cell,
                      success_radius: float = 1.0, fov: FovParams = FovParams()) -> int | None:
    """Fewest rotations and forward moves until the goal is within
    ``success_radius`` and in view. None means unreachable."""
    plan = plan_to_poses(scene, start, success_poses(scene, goal, success_radius, fov))
    return None if plan is None else len(plan)


def _reachable(free: set, start) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for nxt in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if nxt in free and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def validate_scene(scene: GridScene) -> None:
    if scene.width < 1 or scene.height < 1:
        raise SceneValidationError("empty grid")
    for c in scene.blocked:
        if not scene.in_bounds(c):
            raise SceneValidationError(f"blocked cell {tuple(c)} out of bounds")
    if not scene.is_free(scene.start.cell):
        raise SceneValidationError(f"start cell {tuple(scene.start.cell)} is not free")
    for name, obj in scene.objects.items():
        if not scene.is_free(obj.cell):
            raise SceneValidationError(f"object {name} on non-free cell {tuple(obj.cell)}")
    cells = [obj.cell for obj in scene.objects.values()]
    if len(set(cells)) != len(cells):
        raise SceneValidationError("two objects share a cell")
    free =set(scene.free_cells)
    reach = _reachable(free, scene.start.cell)
    if len(reach) != len(free):
        stray = sorted(free - reach, key=lambda c: (c.y, c.x))[0]
        raise SceneValidationError(
            f"{len(free) - len(reach)} free cells unreachable from start, e.g. {tuple(stray)}")


def generate_scene(seed: int, params: SceneParams = SceneParams(),
                   scene_id: str | None = None) -> GridScene:
    """Random connected scene with one instance of every category."""
    params.check()
    rng = np.random.default_rng(seed)
    w, h = params.width, params.height
    n_blocked = int(round(params.obstacle_density * w * h))
    need_free = len(params.categories) + 1
    if w * h - n_blocked < need_free:
        raise SceneGenerationError("too many obstacles to place every object")

    free = {(x, y) for y in range(h) for x in range(w)}
    blocked = set()
    # Add obstacles one by one, skipping any that would split the free region.
    for flat in rng.permutation(w * h):
        if len(blocked) == n_blocked:
            break
        cell = (int(flat) % w, int(flat) // w)
        free.discard(cell)
        if len(_reachable(free, next(iter(sorted(free))))) == len(free):
            blocked.add(cell)
        else:
            free.add(cell)
    if len(blocked) < n_blocked:
        raise SceneGenerationError(
            f"could only place {len(blocked)} of {n_blocked} obstacles without disconnecting the grid")

    free_list = sorted(free, key=lambda c: (c[1], c[0]))
    picks = rng.choice(len(free_list), size=need_free, replace=False)
    start = Pose(Cell(*free_list[picks[0]]), Heading(int(rng.integers(4))))
    colors = rng.choice(len(COLORS), size=len(params.categories), replace=True)
    objects = {
        name: SceneObject(Cell(*free_list[picks[i + 1]]), COLORS[colors[i]])
        for i, name in enumerate(params.categories)
    }
    scene = GridScene(scene_id or f"s{seed}", w, h,
                      frozenset(Cell(*c) for c in blocked), objects, start, params.cell_size)
    validate_scene(scene)
    return scene


def relocate_objects(scene: GridScene, rng: np.random.Generator) -> GridScene:
    """Same layout and start, objects moved to fresh distinct free cells."""
    candidates = [c for c in scene.free_cells if c != scene.start.cell]
    picks = rng.choice(len(candidates), size=len(scene.objects), replace=False)
    objects = {name: SceneObject(candidates[i], obj.color)
               for i, (name, obj) in zip(picks, scene.objects.items())}
    return scene.with_objects(objects)


# -- scene files -------------------------------------------------------------

def dumps_scene(scene: GridScene) -> str:
    lines = [f"scene {scene.scene_id} {scene.width} {scene.height} {scene.cell_size!r}"]
    for y in range(scene.height):
        row = "".join("#" if Cell(x, y) in scene.blocked else "." for x in range(scene.width))
        lines.append(f"row {y} {row}")
    for name, obj in scene.objects.items():
        lines.append(f"object {name} {obj.color} {obj.cell.x} {obj.cell.y}")
    s = scene.start
    lines.append(f"start {s.cell.x} {s.cell.y} {s.heading.name}")
    return "\n".join(lines) + "\n"


def _int(tok: str, line_no: int, name: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise SceneParseError(line_no, name, f"expected integer, got {tok!r}") from None


def loads_scene(text: str) -> GridScene:
    header = None
    rows: dict[int, str] = {}
    objects: dict[str, SceneObject] = {}
    start = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        tok = line.split()
        kind = tok[0]
        if header is None and kind != "scene":
            raise SceneParseError(line_no, "header", "file must start with a 'scene' line")
        if kind == "scene":
            if header is not None:
                raise SceneParseError(line_no, "header", "duplicate header")
            if len(tok) != 5:
                raise SceneParseError(line_no, "header", "expected: scene <id> <width> <height> <cell_size>")
            try:
                cs = float(tok[4])
            except ValueError:
                raise SceneParseError(line_no, "cell_size", f"not a number: {tok[4]!r}") from None
            header = (tok[1], _int(tok[2], line_no, "width"), _int(tok[3], line_no, "height"), cs)
        elif kind == "row":
            if len(tok) != 3:
                raise SceneParseError(line_no, "row", "expected: row <y> <cells>")
            y = _int(tok[1], line_no, "row index")
            if not 0 <= y < header[2]:
                raise SceneParseError(line_no, "row index", f"{y} outside 0..{header[2] - 1}")
            if y in rows:
                raise SceneParseError(line_no, "row index", f"duplicate row {y}")
            if len(tok[2]) != header[1] or set(tok[2]) - {".", "#"}:
                raise SceneParseError(line_no, "row cells",
                                      f"need {header[1]} characters from '.#'")
            rows[y] = tok[2]
        elif kind == "object":
            if len(tok) != 5:
                raise SceneParseError(line_no, "object", "expected: object <category> <color> <x> <y>")
            if tok[1] in objects:
                raise SceneValidationError(f"line {line_no}: second instance of category {tok[1]}")
            cell = Cell(_int(tok[3], line_no, "object x"), _int(tok[4], line_no, "object y"))
            objects[tok[1]] = SceneObject(cell, tok[2])
        elif kind == "start":
            if len(tok) != 4:
                raise SceneParseError(line_no, "start", "expected: start <x> <y> <heading>")
            try:
                heading = Heading.parse(tok[3])
            except KeyError:
                raise SceneParseError(line_no, "start heading", f"unknown heading {tok[3]!r}") from None
            start = Pose(Cell(_int(tok[1], line_no, "start x"), _int(tok[2], line_no, "start y")), heading)
        else:
            raise SceneParseError(line_no, "record", f"unknown record type {kind!r}")
    if header is None:
        raise SceneParseError(0, "header", "empty file")
    if len(rows) != header[2]:
        missing = sorted(set(range(header[2])) - set(rows))
        raise SceneParseError(0, "row", f"missing rows {missing}")
    if start is None:
        raise SceneParseError(0, "start", "missing start line")
    scene_id, w, h, cs = header
    blocked = frozenset(Cell(x, y) for y, row in rows.items() for x, ch in enumerate(row) if ch == "#")
    scene = GridScene(scene_id, w, h, blocked, objects, start, cs)
    validate_scene(scene)
    return scene


def save_scene(scene: GridScene, path) -> None:
    Path(path).write_text(dumps_scene(scene))


def load_scene(path) -> GridScene:
    return loads_scene(Path(path).read_text())
