"""Likelihood map over target positions and the lower-bound uncertainty.

Every free cell starts with likelihood 1. Navigation steps discount the
cells the agent looked at by a distance-decayed recognition weight; asks
with teacher feedback clear the viewed cells outright. The uncertainty is
the total likelihood minus its maximum, so it reaches zero once a single
candidate cell remains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import MapMismatchError
from .gridworld import Cell, GridScene


@dataclass(frozen=True)
class DecayParams:
    alpha: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha < self.beta:
            raise ValueError(f"need 0 < alpha < beta, got alpha={self.alpha} beta={self.beta}")


def psi(dist: float, params: DecayParams = DecayParams()) -> float:
    """Recognition weight: 1 up to alpha, linear down to 0 at beta."""
    if dist <= params.alpha:
        return 1.0
    if dist <= params.beta:
        return 1.0 - (dist - params.alpha) / (params.beta - params.alpha)
    return 0.0


def psi_array(dist: np.ndarray, params: DecayParams = DecayParams()) -> np.ndarray:
    ramp = 1.0 - (dist - params.alpha) / (params.beta - params.alpha)
    return np.where(dist <= params.alpha, 1.0, np.where(dist <= params.beta, ramp, 0.0))


class LikelihoodMap:
    """Dense likelihood values over a scene's free cells (row-major order)."""

    def __init__(self, scene: GridScene, values: np.ndarray | None = None):
        geom = scene.geometry
        self.scene_id = scene.scene_id
        self.cell_size = scene.cell_size
        self._geom = geom
        if values is None:
            values = np.ones(len(geom.free))
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(geom.free),):
            raise MapMismatchError(
                f"map has {values.shape[0]} values, scene {scene.scene_id} has {len(geom.free)} free cells")
        self.values = values.copy()

    @property
    def cells(self) -> list[Cell]:
        return self._geom.free

    def __len__(self):
        return len(self.values)

    def __getitem__(self, cell) -> float:
        return float(self.values[self.index_of(cell)])

    def as_dict(self) -> dict:
        return {c: float(v) for c, v in zip(self._geom.free, self.values)}

    def copy(self) -> "LikelihoodMap":
        new = object.__new__(LikelihoodMap)
        new.scene_id = self.scene_id
        new.cell_size = self.cell_size
        new._geom = self._geom
        new.values = self.values.copy()
        return new

    def index_of(self, cell) -> int:
        try:
            return self._geom.index[Cell(*cell)]
        except KeyError:
            raise MapMismatchError(f"cell {tuple(cell)} is not a free cell of scene {self.scene_id}") from None

    def indices(self, cells: Iterable) -> np.ndarray:
        return np.array(sorted(self.index_of(c) for c in cells), dtype=np.intp)

    def distances(self, idx: np.ndarray, origin) -> np.ndarray:
        dx = self._geom.xs[idx] - origin[0]
        dy = self._geom.ys[idx] - origin[1]
        return self.cell_size * np.sqrt(dx * dx + dy * dy)

    def check_scene(self, scene: GridScene | None) -> None:
        if scene is not None and (scene.scene_id != self.scene_id or scene.geometry is not self._geom):
            raise MapMismatchError(f"map bound to {self.scene_id}, got scene {scene.scene_id}")

    def __eq__(self, other):
        if not isinstance(other, LikelihoodMap):
            return NotImplemented
        return self.scene_id == other.scene_id and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"LikelihoodMap({self.scene_id!r}, n={len(self.values)}, lambda={lam(self):.3f})"


def init_map(scene: GridScene) -> LikelihoodMap:
    return LikelihoodMap(scene)


def lam(phi: LikelihoodMap) -> float:
    """Sum of likelihoods minus the largest one."""
    if len(phi.values) == 0:
        raise ValueError("likelihood map is empty")
    return float(phi.values.sum() - phi.values.max())


# ``lambda`` is a keyword, so the public name is an alias.
lambda_ = lam


def _complement(n: int, idx: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[idx] = False
    return mask


def nav_update_idx(phi: LikelihoodMap, view_idx: np.ndarray, agent_cell, target_idx: int | None,
                   target_cell, params: DecayParams) -> float:
    """Index-level navigation update; ``target_idx`` is None when the target is out of view."""
    before = lam(phi)
    v = phi.values
    w = psi_array(phi.distances(view_idx, agent_cell), params)
    if target_idx is None:
        v[view_idx] = np.clip(v[view_idx] - w, 0.0, 1.0)
    else:
        k = psi(phi.cell_size * float(np.hypot(target_cell[0] - agent_cell[0],
                                               target_cell[1] - agent_cell[1])), params)
        keep = v[target_idx]
        out_view = _complement(len(v), view_idx)
        v[view_idx] = np.clip(v[view_idx] - w - k, 0.0, 1.0)
        v[out_view] = np.clip(v[out_view] - k, 0.0, 1.0)
        v[target_idx] = keep
    return before - lam(phi)


def ask_update_idx(phi: LikelihoodMap, view_idx: np.ndarray, agent_cell, target_idx: int | None,
                   target_cell, params: DecayParams) -> float:
    before = lam(phi)
    v = phi.values
    if target_idx is None:
        v[view_idx] = 0.0
    else:
        k = psi(phi.cell_size * float(np.hypot(target_cell[0] - agent_cell[0],
                                               target_cell[1] - agent_cell[1])), params)
        keep = v[target_idx]
        out_view = _complement(len(v), view_idx)
        v[view_idx] = 0.0
        v[out_view] = np.clip(v[out_view] - k, 0.0, 1.0)
        v[target_idx] = keep
    return before - lam(phi)


def _resolve(phi, view, target_cell, scene):
    phi.check_scene(scene)
    view_idx = phi.indices(view)
    t_idx = phi.index_of(target_cell)
    in_view = bool(np.any(view_idx == t_idx))
    return view_idx, (t_idx if in_view else None)


def update_on_nav(phi: LikelihoodMap, view: Iterable, agent_cell, target_cell,
                  params: DecayParams = DecayParams(), scene: GridScene | None = None) -> float:
    """Apply a navigation observation in place and return the drop in uncertainty."""
    view_idx, t_idx = _resolve(phi, view, target_cell, scene)
    return nav_update_idx(phi, view_idx, agent_cell, t_idx, target_cell, params)


def update_on_ask(phi: LikelihoodMap, view: Iterable, agent_cell, target_cell,
                  params: DecayParams = DecayParams(), scene: GridScene | None = None) -> float:
    """Apply ground-truth teacher feedback in place and return the drop in uncertainty."""
    view_idx, t_idx = _resolve(phi, view, target_cell, scene)
    return ask_update_idx(phi, view_idx, agent_cell, t_idx, target_cell, params)


def gray_level(value: float) -> int:
    # round half up
    return int(np.floor(255.0 * value + 0.5))


def heatmap(phi: LikelihoodMap, scene: GridScene) -> str:
    """Plain PGM (P2) rendering, one pixel per cell; blocked cells are black."""
    phi.check_scene(scene)
    lines = ["P2", f"{scene.width} {scene.height}", "255"]
    for y in range(scene.height):
        row = []
        for x in range(scene.width):
            idx = phi._geom.index.get(Cell(x, y))
            row.append("0" if idx is None else str(gray_level(phi.values[idx])))
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"
