import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from askhelp.errors import SceneGenerationError, SceneParseError, SceneValidationError
from askhelp.gridworld import (ALL_CATEGORIES, Cell, FovParams, GridScene, Heading, Pose, SceneParams,
                               dumps_scene, euclid_dist, generate_scene, line_of_sight, loads_scene,
                               plan_to_poses, relocate_objects, shortest_path_len, step_pose,
                               success_poses, validate_scene, visible_cells)

import oracles


def open_scene(w=8, h=8, rows=None, **kw):
    rows = rows or ["." * w] * h
    return GridScene.from_ascii(rows, **kw)


def test_generate_zero_density_is_fully_free():
    scene = generate_scene(7, SceneParams(8, 8, 0.0))
    assert scene.blocked == frozenset()
    assert len(scene.free_cells) == 64


def test_generate_is_deterministic():
    a = generate_scene(7, SceneParams(8, 8, 0.2))
    b = generate_scene(7, SceneParams(8, 8, 0.2))
    assert dumps_scene(a) == dumps_scene(b)


@pytest.mark.parametrize("seed", range(30))
def test_generated_free_cells_reachable_from_start(seed):
    scene = generate_scene(seed, SceneParams(8, 8, 0.3))
    free = set(scene.free_cells)
    # flood fill written out independently of the library helper
    seen, stack = {scene.start.cell}, [scene.start.cell]
    while stack:
        x, y = stack.pop()
        for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if n in free and n not in seen:
                seen.add(n)
                stack.append(n)
    assert seen == free
    assert len(scene.blocked) == round(0.3 * 64)
    cells = [o.cell for o in scene.objects.values()]
    assert len(set(cells)) == len(cells) and all(c in free for c in cells)
    assert set(scene.objects) == set(ALL_CATEGORIES)


def test_generate_rejects_impossible_density():
    many = tuple(f"thing{i}" for i in range(12))
    with pytest.raises(SceneGenerationError):
        generate_scene(1, SceneParams(4, 4, 0.4, many))
    with pytest.raises(ValueError):
        generate_scene(1, SceneParams(8, 8, 0.5))


def test_visibility_examples():
    scene = open_scene()
    pose = Pose(Cell(4, 4), Heading.E)
    vis = visible_cells(scene, pose)
    assert Cell(3, 4) not in vis            # directly behind
    assert Cell(4, 4) in vis                # own cell
    assert Cell(7, 4) in vis
    walled = open_scene(rows=["........", "........", "........", "........",
                              ".....#..", "........", "........", "........"])
    assert Cell(7, 4) not in visible_cells(walled, pose)


def test_line_of_sight_midpoint_and_corner():
    scene = open_scene(rows=["....", ".#..", "....", "...."])
    assert line_of_sight(scene, Cell(0, 1), Cell(3, 1)) is False
    assert line_of_sight(scene, Cell(0, 0), Cell(3, 0)) is True
    # the diagonal from (0,0) to (2,2) runs straight through the blocked cell
    assert line_of_sight(scene, Cell(0, 0), Cell(2, 2)) is False
    # passing exactly through the corner shared with (1,1) does not block
    assert line_of_sight(scene, Cell(1, 2), Cell(2, 1)) is True
    assert line_of_sight(scene, Cell(0, 2), Cell(2, 0)) is False
    assert line_of_sight(scene, Cell(2, 2), Cell(1, 1)) is False   # target itself blocked


def _scenes_for_oracle():
    scenes = [generate_scene(100 + i, SceneParams(8, 8, 0.1 + 0.015 * i), f"o{i}") for i in range(18)]
    scenes.append(generate_scene(500, SceneParams(6, 5, 0.3), "small"))
    scenes.append(generate_scene(501, SceneParams(8, 6, 0.4), "dense"))
    return scenes


@pytest.mark.parametrize("scene", _scenes_for_oracle(), ids=lambda s: s.scene_id)
def test_visibility_matches_dense_sampling_oracle(scene):
    for cell in scene.free_cells:
        for heading in Heading:
            got = visible_cells(scene, Pose(cell, heading))
            want = oracles.oracle_visible(scene.width, scene.height, set(scene.blocked), cell,
                                          heading.name)
            assert {tuple(c) for c in got} == want, (cell, heading)


def test_fov_bounds():
    scene = open_scene(16, 16)
    pose = Pose(Cell(0, 8), Heading.E)
    vis = visible_cells(scene, pose)
    assert Cell(12, 8) in vis and Cell(13, 8) not in vis
    assert Cell(5, 3) in vis                # exactly 45 degrees
    assert Cell(5, 2) not in vis
    narrow = visible_cells(scene, pose, FovParams(half_angle_deg=10, max_range=3.0))
    assert Cell(5, 3) not in narrow
    with pytest.raises(ValueError):
        FovParams(half_angle_deg=0)


def test_step_pose_rotations_and_collision():
    scene = open_scene(rows=["..", ".#"])
    geom = scene.geometry
    p = Pose(Cell(0, 0), Heading.N)
    assert step_pose(geom, p, "forward") == p                        # off the grid
    assert step_pose(geom, p, "right").heading is Heading.E
    assert step_pose(geom, p, "left").heading is Heading.W
    assert step_pose(geom, Pose(Cell(1, 0), Heading.S), "forward").cell == Cell(1, 0)  # wall
    assert step_pose(geom, Pose(Cell(0, 0), Heading.E), "forward").cell == Cell(1, 0)


def test_shortest_path_examples():
    scene = open_scene()
    start = Pose(Cell(0, 0), Heading.E)
    assert shortest_path_len(scene, start, Cell(3, 0)) == 0
    assert shortest_path_len(scene, start, Cell(7, 0)) == 3
    assert shortest_path_len(scene, Pose(Cell(0, 0), Heading.W), Cell(3, 0)) == 2
    boxed = open_scene(rows=["..#.", "..#.", "###.", "...."])
    assert shortest_path_len(boxed, start, Cell(3, 3)) is None


def _small_scenes():
    out = []
    for i in range(12):
        w, h = 4 + i % 3, 4 + (i // 3) % 3
        out.append(generate_scene(900 + i, SceneParams(w, h, 0.25), f"sp{i}"))
    return out


@pytest.mark.parametrize("scene", _small_scenes(), ids=lambda s: s.scene_id)
def test_shortest_path_matches_exhaustive_search(scene):
    rng = np.random.default_rng(len(scene.scene_id) + scene.width * 31 + scene.height)
    free = scene.free_cells
    for _ in range(4):
        start = Pose(free[int(rng.integers(len(free)))], Heading(int(rng.integers(4))))
        goal = free[int(rng.integers(len(free)))]
        want = oracles.oracle_shortest(scene.width, scene.height, set(scene.blocked), start.cell,
                                       start.heading.name, goal)
        assert shortest_path_len(scene, start, goal) == want


def test_plan_reaches_a_success_pose():
    scene = generate_scene(3, SceneParams(8, 8, 0.2))
    goal = scene.object_cell("apple")
    targets = success_poses(scene, goal, 1.0)
    plan = plan_to_poses(scene, scene.start, targets)
    pose = scene.start
    for m in plan:
        pose = step_pose(scene.geometry, pose, m)
    assert pose in targets
    assert euclid_dist(pose.cell, goal) <= 1.0


def test_scene_roundtrip_and_parse_errors(tmp_path):
    scene = generate_scene(11, SceneParams(8, 8, 0.2))
    text = dumps_scene(scene)
    back = loads_scene(text)
    assert dumps_scene(back) == text
    assert back.blocked == scene.blocked and back.objects == scene.objects and back.start == scene.start

    bad = text.replace("row 3 ", "row x ", 1)
    with pytest.raises(SceneParseError) as info:
        loads_scene(bad)
    assert info.value.line_no == 5 and "row index" in str(info.value)
    with pytest.raises(SceneParseError):
        loads_scene(text.replace("start", "begin"))
    with pytest.raises(SceneParseError):
        loads_scene("")


def test_validation_rejects_bad_scenes():
    with pytest.raises(SceneValidationError):
        validate_scene(open_scene(rows=[".#.", "###", "..."]))
    with pytest.raises(SceneValidationError):
        validate_scene(open_scene(rows=["...", "...", "..."], objects={"apple": (1, 1), "bowl": (1, 1)}))


def test_relocate_keeps_layout():
    scene = generate_scene(5, SceneParams(8, 8, 0.2))
    moved = relocate_objects(scene, np.random.default_rng(0))
    assert moved.blocked == scene.blocked and moved.start == scene.start
    cells = [o.cell for o in moved.objects.values()]
    assert len(set(cells)) == len(cells)
    assert all(moved.is_free(c) and c != scene.start.cell for c in cells)
    assert [o.color for o in moved.objects.values()] == [o.color for o in scene.objects.values()]


coords = st.tuples(st.integers(0, 7), st.integers(0, 7))


@settings(max_examples=200, deadline=None)
@given(st.sets(coords, max_size=20), coords, coords)
def test_line_of_sight_matches_sampling(blocked, a, b):
    blocked = set(blocked) - {a}
    scene = GridScene("h", 8, 8, frozenset(Cell(*c) for c in blocked), {}, Pose(Cell(*a), Heading.N))
    assert line_of_sight(scene, Cell(*a), Cell(*b)) == oracles.sampled_los(blocked, a, b)


@settings(max_examples=200, deadline=None)
@given(coords, coords)
def test_euclid_dist_symmetric(a, b):
    assert euclid_dist(a, b) == euclid_dist(b, a)
    assert math.isclose(euclid_dist(a, b, 1.0), math.dist(a, b))
