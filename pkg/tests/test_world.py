"""World tests: determinism, contact physics, rendering, spawn statistics,
and the expert-step oracle checked against breadth-first search."""

import os
from collections import deque

import numpy as np
import pytest

from distreward import demos, rl, world

GOLDEN = os.path.join(os.path.dirname(__file__), "data",
                      "golden_push_robot_seed3.npy")


class TestDeterminism:
    def test_reset_deterministic(self):
        task = world.make_push_task()
        a = world.reset(task, world.ROBOT, 7)
        b = world.reset(task, world.ROBOT, 7)
        assert a.close_to(b, tol=0.0)

    def test_distinct_seeds_distinct_states(self):
        task = world.make_push_task()
        a = world.reset(task, world.ROBOT, 7)
        b = world.reset(task, world.ROBOT, 8)
        assert not a.close_to(b)

    def test_step_deterministic_and_pure(self):
        task = world.make_push_task()
        s = world.reset(task, world.ROBOT, 1)
        frozen = s.copy()
        n1 = world.step(s, [0.5, -0.25], world.ROBOT)
        n2 = world.step(s, [0.5, -0.25], world.ROBOT)
        assert n1.close_to(n2, tol=0.0)
        assert s.close_to(frozen, tol=0.0)  # input state untouched


class TestStepPhysics:
    def test_effector_moves_by_scaled_action(self):
        s = world.WorldState(np.array([0.5, 0.5]), np.array([0.9, 0.9]))
        for emb in (world.DEMONSTRATOR, world.ROBOT):
            n = world.step(s, [1.0, 0.0], emb)
            np.testing.assert_allclose(
                n.effector_pos, [0.5 + emb.max_step, 0.5], atol=1e-12)

    def test_action_clipped_to_unit_ball_components(self):
        s = world.WorldState(np.array([0.5, 0.5]), np.array([0.9, 0.9]))
        n = world.step(s, [5.0, 0.0], world.ROBOT)
        np.testing.assert_allclose(n.effector_pos,
                                   [0.5 + world.ROBOT.max_step, 0.5],
                                   atol=1e-12)

    def test_positions_stay_in_bounds(self):
        s = world.WorldState(np.array([0.99, 0.01]), np.array([0.5, 0.5]))
        n = world.step(s, [1.0, -1.0], world.DEMONSTRATOR)
        assert np.all(n.effector_pos >= 0.0) and np.all(n.effector_pos <= 1.0)

    def test_push_on_penetration(self):
        s = world.WorldState(np.array([0.40, 0.50]), np.array([0.48, 0.50]))
        n = world.step(s, [1.0, 0.0], world.DEMONSTRATOR)
        # effector ends at 0.50, inside the 0.07 disk; object is shoved
        assert n.object_pos[0] > 0.48
        gap = np.linalg.norm(n.object_pos - n.effector_pos)
        assert gap == pytest.approx(world.CONTACT_RADIUS, abs=1e-9)

    def test_no_push_outside_contact(self):
        s = world.WorldState(np.array([0.20, 0.50]), np.array([0.60, 0.50]))
        n = world.step(s, [1.0, 0.0], world.ROBOT)
        np.testing.assert_array_equal(n.object_pos, s.object_pos)

    def test_grazing_endpoint_outside_leaves_object(self):
        # effector passes near the object but ends outside the disk
        s = world.WorldState(np.array([0.40, 0.58]), np.array([0.45, 0.50]))
        n = world.step(s, [1.0, 0.0], world.DEMONSTRATOR)
        assert np.linalg.norm(n.effector_pos - n.object_pos) >= world.CONTACT_RADIUS
        np.testing.assert_array_equal(n.object_pos, s.object_pos)

    def test_drawer_only_moves_while_holding(self):
        task = world.make_drawer_open_task()
        s = world.WorldState(np.array([0.40, 0.40]), np.array([0.12, 0.90]),
                             drawer_ext=0.0, holding=False)
        n = world.step(s, [0.0, 1.0], world.DEMONSTRATOR)
        assert n.drawer_ext == 0.0
        grab = world.WorldState(world.handle_pos(0.0).copy(),
                                np.array([0.12, 0.90]), 0.0, False)
        g = world.step(grab, [0.0, 0.0], world.DEMONSTRATOR)
        assert g.holding
        pulled = world.step(g, [0.0, 1.0], world.DEMONSTRATOR)
        assert pulled.drawer_ext == pytest.approx(
            world.DEMONSTRATOR.max_step / world.DRAWER_TRAVEL)
        assert world.goal_error(pulled, task) < world.goal_error(g, task)

    def test_release_when_too_far(self):
        g = world.WorldState(world.handle_pos(0.5).copy(),
                             np.array([0.12, 0.90]), 0.5, True)
        # yank sideways beyond RELEASE_RADIUS in one demonstrator step
        n = world.step(g, [-1.0, 0.0], world.DEMONSTRATOR)
        assert not n.holding


class TestSparseReward:
    def test_goal_state_is_success(self):
        for make in world.TASKS.values():
            task = make()
            assert world.sparse_reward(task.goal_state, task) == 1.0

    def test_push_success_ignores_effector(self):
        task = world.make_push_task()
        s = world.WorldState(np.array([0.05, 0.95]),
                             task.goal_state.object_pos.copy())
        assert world.sparse_reward(s, task) == 1.0

    def test_far_object_is_failure(self):
        task = world.make_push_task()
        s = world.WorldState(np.array([0.5, 0.5]), np.array([0.1, 0.1]))
        assert world.sparse_reward(s, task) == 0.0

    def test_goal_cell_inside_success_disk(self):
        # the design invariant behind the pixel-centered goal: any object
        # position rendering to the goal pixel satisfies the success predicate
        task = world.make_push_task()
        gx, gy = task.goal_state.object_pos
        px = world._to_px(gx), world._to_px(gy)
        half = 0.5 / (world.GRID - 1)
        for cx in (gx - half, gx + half):
            for cy in (gy - half, gy + half):
                s = world.WorldState(np.array([0.1, 0.1]), np.array([cx, cy]))
                assert (world._to_px(cx), world._to_px(cy)) == px or \
                    world.sparse_reward(s, task) == 1.0
                if (world._to_px(cx), world._to_px(cy)) == px:
                    assert world.sparse_reward(s, task) == 1.0


class TestRender:
    def test_render_pure_and_quantized(self):
        s = world.reset(world.make_push_task(), world.ROBOT, 5)
        img1 = world.render(s, world.ROBOT)
        img2 = world.render(s, world.ROBOT)
        np.testing.assert_array_equal(img1, img2)
        assert img1.shape == (world.GRID, world.GRID)
        np.testing.assert_array_equal(np.round(img1 * 255), img1 * 255)

    def test_golden_frame(self):
        img = world.render(world.reset(world.make_push_task(), world.ROBOT, 3),
                           world.ROBOT)
        golden = np.load(GOLDEN)
        np.testing.assert_array_equal(img, golden)

    def test_embodiment_glyphs_differ(self):
        s = world.WorldState(np.array([0.5, 0.5]), np.array([0.9, 0.9]))
        a = world.render(s, world.DEMONSTRATOR)
        b = world.render(s, world.ROBOT)
        assert not np.array_equal(a, b)
        assert a.max() == 1.0  # solid block at full intensity
        assert b.max() == pytest.approx(0.8)  # plus glyph is dimmer

    def test_glyph_footprints_share_center(self):
        s = world.WorldState(np.array([0.5, 0.5]), np.array([0.9, 0.9]))
        demo_fp = world.glyph_footprint(s, world.DEMONSTRATOR)
        robot_fp = world.glyph_footprint(s, world.ROBOT)
        assert robot_fp <= demo_fp  # plus is a subset of the 3x3 block

    def test_render_locality(self):
        # moving only the effector changes only glyph-footprint pixels
        s1 = world.WorldState(np.array([0.2, 0.2]), np.array([0.6, 0.6]))
        s2 = world.WorldState(np.array([0.8, 0.3]), np.array([0.6, 0.6]))
        d = world.render(s1, world.ROBOT) != world.render(s2, world.ROBOT)
        changed = {tuple(yx) for yx in np.argwhere(d)}
        allowed = (world.glyph_footprint(s1, world.ROBOT)
                   | world.glyph_footprint(s2, world.ROBOT))
        assert changed <= allowed


def test_push_spawn_marginals_uniform():
    """Acceptance example: decile histogram of object spawns within 5%."""
    task = world.make_push_task()
    xs, ys = [], []
    for seed in range(1000):
        s = world.reset(task, world.DEMONSTRATOR, seed)
        xs.append(s.object_pos[0])
        ys.append(s.object_pos[1])
    (x0, x1), (y0, y1) = world.PUSH_OBJECT_BOX
    for vals, lo, hi in ((xs, x0, x1), (ys, y0, y1)):
        assert min(vals) >= lo and max(vals) <= hi
        hist, _ = np.histogram(vals, bins=10, range=(lo, hi))
        np.testing.assert_allclose(hist / 1000.0, 0.1, atol=0.05)


# --- expert-step oracle vs BFS ---------------------------------------------------

def _bfs_steps(start, goal, embodiment, max_depth=14, q=0.02):
    """Independent breadth-first search over the discrete action set with
    visited-state quantization at resolution q."""

    def key(s):
        return (round(s.effector_pos[0] / q), round(s.effector_pos[1] / q),
                round(s.object_pos[0] / q), round(s.object_pos[1] / q))

    seen = {key(start)}
    frontier = deque([(start, 0)])
    while frontier:
        s, d = frontier.popleft()
        if world.state_reached(s, goal):
            return d
        if d >= max_depth:
            continue
        for a in rl.ACTIONS:
            ns = world.step(s, a, embodiment)
            k = key(ns)
            if k not in seen:
                seen.add(k)
                frontier.append((ns, d + 1))
    return None


def test_ground_truth_delta_matches_bfs():
    task = world.make_push_task()
    s0 = world.reset(task, world.DEMONSTRATOR, 12345)
    expert = world.ground_truth_delta(s0, task.goal_state, world.DEMONSTRATOR)
    optimal = _bfs_steps(s0, task.goal_state, world.DEMONSTRATOR)
    assert optimal is not None
    assert optimal <= expert <= optimal + 2


def test_ground_truth_delta_zero_at_goal():
    task = world.make_push_task()
    assert world.ground_truth_delta(task.goal_state, task.goal_state,
                                    world.ROBOT) == 0


def test_ground_truth_delta_monotone_along_expert_path():
    task = world.make_push_task()
    s = world.reset(task, world.ROBOT, 99)
    d0 = world.ground_truth_delta(s, task.goal_state, world.ROBOT)
    s1 = world.step(s, demos.scripted_expert_action(s, task.goal_state,
                                                    world.ROBOT), world.ROBOT)
    d1 = world.ground_truth_delta(s1, task.goal_state, world.ROBOT)
    assert d1 == d0 - 1


def test_scripted_push_example():
    """Spec'd scenario: object at (0.3, 0.5) pushed to within tol of (0.7, 0.5)."""
    goal = world.WorldState(np.array([0.58, 0.50]), np.array([0.70, 0.50]))
    s = world.WorldState(np.array([0.10, 0.50]), np.array([0.30, 0.50]))
    for _ in range(100):
        if np.linalg.norm(s.object_pos - goal.object_pos) <= world.SUCCESS_TOL:
            break
        a = demos.scripted_expert_action(s, goal, world.DEMONSTRATOR)
        s = world.step(s, a, world.DEMONSTRATOR)
    assert np.linalg.norm(s.object_pos - goal.object_pos) <= world.SUCCESS_TOL


def test_expert_delta_triangle_slack():
    """delta(s, g) should not wildly exceed delta(s, m) + delta(m, g)."""
    task = world.make_push_task()
    g = task.goal_state
    s = world.reset(task, world.ROBOT, 4)
    # midpoint: expert state after half its rollout
    d_total = world.ground_truth_delta(s, g, world.ROBOT)
    m = s.copy()
    for _ in range(d_total // 2):
        m = world.step(m, demos.scripted_expert_action(m, g, world.ROBOT),
                       world.ROBOT)
    via = (world.ground_truth_delta(s, m, world.ROBOT)
           + world.ground_truth_delta(m, g, world.ROBOT))
    assert d_total <= via + 2
