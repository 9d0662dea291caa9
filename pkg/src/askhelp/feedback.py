"""The egocentric view window and the teacher's object-in-view feedback.

The window is a 12-deep, 9-wide grid in front of the agent. Row 0 is the far
edge (top of the "frame"), row 11 holds the agent's own cell at the bottom
centre. Column 4 is straight ahead; columns to the right are to the agent's
right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

WINDOW_DEPTH = 12
WINDOW_WIDTH = 9
_CENTER_COL = WINDOW_WIDTH // 2

UNSEEN, FREE, BLOCKED, OBJECT = 0, 1, 2, 3
# codes >= FIRST_CATEGORY name a recognised object: FIRST_CATEGORY + index into the legend
FIRST_CATEGORY = 4

POSITIONS = ("top-left", "top", "top-right",
             "left", "middle", "right",
             "bottom-left", "bottom", "bottom-right")


class Variant(str, Enum):
    MASK = "mask"
    BINARY = "binary"
    NOISY = "noisy"
    LANGUAGE = "language"


@dataclass(frozen=True)
class Feedback:
    """Tagged feedback payload.

    ``kind`` is one of the Variant values or ``"absent"`` (ask with no
    teacher around). Mask payloads are uint8 arrays shaped like the window.
    """

    kind: str
    value: Any = None

    def __eq__(self, other):
        if not isinstance(other, Feedback):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if isinstance(self.value, np.ndarray) or isinstance(other.value, np.ndarray):
            return np.array_equal(self.value, other.value)
        return self.value == other.value

    __hash__ = None


ABSENT = Feedback("absent")


@dataclass(frozen=True)
class NoiseParams:
    scale_min: float = 0.6
    scale_max: float = 1.0
    jitter_cells: int = 1


def slot_of(pose, cell) -> tuple[int, int] | None:
    """Window slot (row, col) holding ``cell`` for an agent at ``pose``."""
    fx, fy = pose.heading.vector
    rx, ry = pose.heading.right
    dx, dy = cell[0] - pose.cell[0], cell[1] - pose.cell[1]
    depth = dx * fx + dy * fy
    lateral = dx * rx + dy * ry
    if 0 <= depth < WINDOW_DEPTH and abs(lateral) <= _CENTER_COL:
        return (WINDOW_DEPTH - 1 - depth, _CENTER_COL + lateral)
    return None


def cell_of(pose, row: int, col: int) -> tuple[int, int]:
    fx, fy = pose.heading.vector
    rx, ry = pose.heading.right
    depth = WINDOW_DEPTH - 1 - row
    lateral = col - _CENTER_COL
    return (pose.cell[0] + depth * fx + lateral * rx, pose.cell[1] + depth * fy + lateral * ry)


def block_of(row: int, col: int, shape=(WINDOW_DEPTH, WINDOW_WIDTH)) -> int:
    """Index into POSITIONS of the 3x3 block containing a slot."""
    return (row * 3 // shape[0]) * 3 + col * 3 // shape[1]


def make_mask(target_slot, target_visible: bool, shape=(WINDOW_DEPTH, WINDOW_WIDTH)) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.uint8)
    if target_visible and target_slot is not None:
        mask[target_slot] = 1
    return mask


def perturb_mask(mask: np.ndarray, rng: np.random.Generator,
                 noise: NoiseParams = NoiseParams()) -> np.ndarray:
    """Scale the mask blob along one random axis, then jitter each box edge.

    The blob's bounding box is rescaled about its centre by a factor drawn
    from [scale_min, scale_max]; the four box edges then move independently
    by up to ``jitter_cells``. Blob content is resampled nearest-neighbour
    into the new box, clipped to the window.
    """
    mask = np.asarray(mask)
    if not mask.any():
        return mask.copy()
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = [int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])]
    old = list(box)

    axis = int(rng.integers(2))
    scale = float(rng.uniform(noise.scale_min, noise.scale_max))
    lo, hi = box[2 * axis], box[2 * axis + 1]
    center = (lo + hi) / 2.0
    half = scale * (hi - lo + 1) / 2.0
    new_lo = math.ceil(center - half - 1e-9)
    new_hi = math.floor(center + half + 1e-9)
    if new_hi < new_lo:
        new_lo = new_hi = int(round(center))
    box[2 * axis], box[2 * axis + 1] = new_lo, new_hi

    shifts = rng.integers(-noise.jitter_cells, noise.jitter_cells + 1, size=4)
    box = [b + int(s) for b, s in zip(box, shifts)]

    out = np.zeros_like(mask)
    r0, r1, c0, c1 = box
    if r1 < r0 or c1 < c0:
        return out
    src_h, src_w = old[1] - old[0] + 1, old[3] - old[2] + 1
    dst_h, dst_w = r1 - r0 + 1, c1 - c0 + 1
    for r in range(max(r0, 0), min(r1, mask.shape[0] - 1) + 1):
        sr = old[0] + min(src_h - 1, int((r - r0 + 0.5) * src_h / dst_h))
        for c in range(max(c0, 0), min(c1, mask.shape[1] - 1) + 1):
            sc = old[2] + min(src_w - 1, int((c - c0 + 0.5) * src_w / dst_w))
            out[r, c] = mask[sr, sc]
    return out


def language_feedback(target_slot, color: str, name: str, dist: float, *, asked: bool = True,
                      shape=(WINDOW_DEPTH, WINDOW_WIDTH), close_threshold: float = 1.0) -> str:
    name = name.replace("_", " ")
    if not asked:
        return f"The target object is {name}."
    if target_slot is None:
        return f"The {name} is absent from the frame."
    closeness = "close" if dist <= close_threshold else "far"
    where = POSITIONS[block_of(*target_slot, shape=shape)]
    return f"The {color} {name} is {closeness}, at the {where} of the frame."


_LANG_POSITION = {p: i for i, p in enumerate(POSITIONS)}


def parse_language(text: str) -> tuple[int, bool] | None:
    """Recover (block index, is_close) from a positive language feedback string."""
    if " is absent " in text or text.startswith("The target object is"):
        return None
    head, _, tail = text.rpartition(", at the ")
    where = tail.removesuffix(" of the frame.")
    return _LANG_POSITION[where], head.endswith(" close")


def make_feedback(variant: Variant, target_slot, target_visible: bool, *, color: str = "",
                  name: str = "", dist: float = 0.0, rng: np.random.Generator | None = None,
                  noise: NoiseParams = NoiseParams(), close_threshold: float = 1.0) -> Feedback:
    """Teacher response to an ask, given where the target sits in the window."""
    variant = Variant(variant)
    if variant is Variant.BINARY:
        return Feedback("binary", 1 if target_visible else 0)
    mask = make_mask(target_slot, target_visible)
    if variant is Variant.MASK:
        return Feedback("mask", mask)
    if variant is Variant.NOISY:
        return Feedback("noisy", perturb_mask(mask, rng if rng is not None else np.random.default_rng(0), noise))
    slot = target_slot if target_visible else None
    return Feedback("language", language_feedback(slot, color, name, dist, close_threshold=close_threshold))


def idle_feedback(variant: Variant, name: str) -> Feedback | None:
    """What the feedback channel carries on a step with no ask."""
    variant = Variant(variant)
    if variant is Variant.BINARY:
        return Feedback("binary", -1)
    if variant is Variant.LANGUAGE:
        return Feedback("language", language_feedback(None, "", name, 0.0, asked=False))
    return None
