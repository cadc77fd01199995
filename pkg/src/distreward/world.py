"""Deterministic 2-D tabletop world with two embodiments.

Coordinates live in [0,1]^2. The effector can push a free object by contact
and can open/close a drawer by grabbing its handle. Observations are 16x16
grayscale renders; the two embodiments ("demonstrator", "robot") draw
different effector glyphs and move at different speeds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

GRID = 16
CONTACT_RADIUS = 0.07  # effector-object contact distance
GRAB_RADIUS = 0.05
RELEASE_RADIUS = 0.08
DRAWER_X = 0.75  # drawer slides along +y at this x
DRAWER_Y0 = 0.15  # front edge when closed
DRAWER_TRAVEL = 0.35
SUCCESS_TOL = 0.05
DT = 0.1

# Spawn regions for the Push task (disjoint so resets never start in contact).
PUSH_OBJECT_BOX = ((0.35, 0.50), (0.42, 0.58))
PUSH_EFFECTOR_BOX = ((0.10, 0.25), (0.35, 0.65))
DRAWER_EFFECTOR_BOX = ((0.05, 0.35), (0.20, 0.70))
DRAWER_PARKED_OBJECT = (0.12, 0.90)


class TaskKind(enum.Enum):
    PUSH = "push"
    DRAWER_OPEN = "drawer_open"
    DRAWER_CLOSE = "drawer_close"


@dataclass
class WorldState:
    effector_pos: np.ndarray
    object_pos: np.ndarray
    drawer_ext: float = 0.0
    holding: bool = False

    def copy(self):
        return WorldState(
            self.effector_pos.copy(), self.object_pos.copy(), self.drawer_ext, self.holding
        )

    def close_to(self, other, tol=1e-12):
        return (
            np.allclose(self.effector_pos, other.effector_pos, atol=tol)
            and np.allclose(self.object_pos, other.object_pos, atol=tol)
            and abs(self.drawer_ext - other.drawer_ext) <= tol
            and self.holding == other.holding
        )


@dataclass(frozen=True)
class EmbodimentSpec:
    name: str
    glyph_offsets: tuple  # (dy, dx) pixel offsets around the effector pixel
    glyph_intensity: float
    max_step: float
    dt: float = DT


_BLOCK = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
_PLUS = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))

# demonstrator is 2x faster than the robot; the robot's full step (0.07)
# exceeds the pixel pitch 1/15, so every unit-magnitude action is visible
# in the 16x16 render
DEMONSTRATOR = EmbodimentSpec("demonstrator", _BLOCK, 1.0, 0.14)
ROBOT = EmbodimentSpec("robot", _PLUS, 0.8, 0.07)
EMBODIMENTS = {"demonstrator": DEMONSTRATOR, "robot": ROBOT}
EMBODIMENT_IDS = {"demonstrator": 0, "robot": 1}


@dataclass(frozen=True)
class TaskSpec:
    task_kind: TaskKind
    goal_state: WorldState
    success_tol: float = SUCCESS_TOL
    horizon: int = 100
    subgoal_state: WorldState | None = None  # intermediate goal for chaining


def handle_pos(drawer_ext):
    return np.array([DRAWER_X, DRAWER_Y0 + DRAWER_TRAVEL * float(drawer_ext)])


def make_push_task():
    # goal on a pixel-cell center: every object position rendering to that
    # cell lies inside the success disk, so success is visible at 16x16
    goal_obj = np.array([11.0, 7.0]) / (GRID - 1)
    goal_eff = goal_obj - np.array([0.12, 0.0])  # resting spot behind
    goal = WorldState(goal_eff, goal_obj, 0.0, False)
    return TaskSpec(TaskKind.PUSH, goal, horizon=100)


def make_drawer_open_task():
    goal = WorldState(handle_pos(1.0), np.array(DRAWER_PARKED_OBJECT), 1.0, True)
    sub = WorldState(handle_pos(0.0), np.array(DRAWER_PARKED_OBJECT), 0.0, True)
    return TaskSpec(TaskKind.DRAWER_OPEN, goal, horizon=200, subgoal_state=sub)


def make_drawer_close_task():
    goal = WorldState(handle_pos(0.0), np.array(DRAWER_PARKED_OBJECT), 0.0, True)
    sub = WorldState(handle_pos(1.0), np.array(DRAWER_PARKED_OBJECT), 1.0, True)
    return TaskSpec(TaskKind.DRAWER_CLOSE, goal, horizon=200, subgoal_state=sub)


TASKS = {
    "push": make_push_task,
    "drawer_open": make_drawer_open_task,
    "drawer_close": make_drawer_close_task,
}


def reset(task, embodiment, seed):
    """Initial state for a task; deterministic given seed."""
    rng = np.random.default_rng(seed)
    if task.task_kind is TaskKind.PUSH:
        (ox0, ox1), (oy0, oy1) = PUSH_OBJECT_BOX
        (ex0, ex1), (ey0, ey1) = PUSH_EFFECTOR_BOX
        obj = np.array([rng.uniform(ox0, ox1), rng.uniform(oy0, oy1)])
        eff = np.array([rng.uniform(ex0, ex1), rng.uniform(ey0, ey1)])
        return WorldState(eff, obj, 0.0, False)
    (ex0, ex1), (ey0, ey1) = DRAWER_EFFECTOR_BOX
    eff = np.array([rng.uniform(ex0, ex1), rng.uniform(ey0, ey1)])
    ext = 0.0 if task.task_kind is TaskKind.DRAWER_OPEN else 1.0
    return WorldState(eff, np.array(DRAWER_PARKED_OBJECT), ext, False)


def step(state, action, embodiment):
    """One deterministic transition. Action components are clipped to [-1,1]."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    old_eff = state.effector_pos
    eff = np.clip(old_eff + a * embodiment.max_step, 0.0, 1.0)

    ext = state.drawer_ext
    holding = state.holding
    if holding:
        ext = float(np.clip(ext + (eff[1] - old_eff[1]) / DRAWER_TRAVEL, 0.0, 1.0))
    hp = handle_pos(ext)
    gap = float(np.linalg.norm(eff - hp))
    if holding:
        if gap > RELEASE_RADIUS:
            holding = False
    elif gap <= GRAB_RADIUS:
        holding = True

    # The object moves only when the effector ends inside the contact disk.
    # It slides out along the effector's motion direction just far enough to
    # leave the disk, keeping its lateral offset from the motion line, so a
    # straight plow shepherds the object without amplifying small offsets.
    obj = state.object_pos
    seg = eff - old_eff
    seg_sq = float(seg @ seg)
    to_obj = obj - eff
    dist_end = float(np.linalg.norm(to_obj))
    if dist_end < CONTACT_RADIUS:
        if seg_sq > 0.0:
            direction = seg / np.sqrt(seg_sq)
        elif dist_end > 1e-12:
            direction = to_obj / dist_end
        else:
            direction = np.array([1.0, 0.0])
        fwd = float(to_obj @ direction)
        slide = -fwd + np.sqrt(max(0.0, fwd * fwd
                                   + CONTACT_RADIUS**2 - dist_end**2))
        obj = np.clip(obj + direction * slide, 0.0, 1.0)

    return WorldState(eff, obj.copy(), ext, holding)


def render(state, embodiment):
    """Pure 16x16 grayscale render. Intensities quantized to 1/255 steps so
    dataset serialization round-trips exactly."""
    img = np.zeros((GRID, GRID))

    # drawer body: vertical strip ending at the front edge; handle is brighter
    front = DRAWER_Y0 + DRAWER_TRAVEL * state.drawer_ext
    x_px = _to_px(DRAWER_X)
    for y in np.arange(0.02, front - 1e-9, 1.0 / GRID):
        img[_to_px(y), x_px] = max(img[_to_px(y), x_px], 0.35)
    hy, hx = _to_px(front), x_px
    img[hy, hx] = 0.7
    if hx + 1 < GRID:
        img[hy, hx + 1] = 0.7
    if hx - 1 >= 0:
        img[hy, hx - 1] = 0.7

    # object: 2x2 block
    oy, ox = _to_px(state.object_pos[1]), _to_px(state.object_pos[0])
    for dy in (0, 1):
        for dx in (0, 1):
            y, x = oy + dy, ox + dx
            if 0 <= y < GRID and 0 <= x < GRID:
                img[y, x] = max(img[y, x], 0.55)

    # effector glyph
    ey, ex = _to_px(state.effector_pos[1]), _to_px(state.effector_pos[0])
    for dy, dx in embodiment.glyph_offsets:
        y, x = ey + dy, ex + dx
        if 0 <= y < GRID and 0 <= x < GRID:
            img[y, x] = max(img[y, x], embodiment.glyph_intensity)

    return np.round(img * 255.0) / 255.0


def _to_px(coord):
    return int(np.clip(round(float(coord) * (GRID - 1)), 0, GRID - 1))


def glyph_footprint(state, embodiment):
    """Pixel (y, x) set the effector glyph may touch at this state."""
    ey, ex = _to_px(state.effector_pos[1]), _to_px(state.effector_pos[0])
    return {
        (ey + dy, ex + dx)
        for dy, dx in embodiment.glyph_offsets
        if 0 <= ey + dy < GRID and 0 <= ex + dx < GRID
    }


def goal_error(state, task):
    """Distance to success in table units for the task-relevant coordinate."""
    if task.task_kind is TaskKind.PUSH:
        return float(np.linalg.norm(state.object_pos - task.goal_state.object_pos))
    return abs(state.drawer_ext - task.goal_state.drawer_ext) * DRAWER_TRAVEL


def sparse_reward(state, task):
    """1 at success, else 0. Success depends only on goal-relevant coords."""
    return 1.0 if goal_error(state, task) <= task.success_tol else 0.0


def state_reached(state, goal, tol=SUCCESS_TOL):
    """Full-state proximity: effector, object and drawer all within tol
    (drawer measured on front-edge travel)."""
    return (
        float(np.linalg.norm(state.effector_pos - goal.effector_pos)) <= tol
        and float(np.linalg.norm(state.object_pos - goal.object_pos)) <= tol
        and abs(state.drawer_ext - goal.drawer_ext) * DRAWER_TRAVEL <= tol
    )


def ground_truth_delta(s, g, embodiment, tol=SUCCESS_TOL, horizon=400):
    """Steps the scripted expert needs to bring the full state within tol of
    g; returns horizon if unreached. Evaluation oracle only."""
    from . import demos  # deferred: demos depends on world

    state = s.copy()
    for t in range(horizon):
        if state_reached(state, g, tol):
            return t
        action = demos.scripted_expert_action(state, g, embodiment, tol=tol)
        state = step(state, action, embodiment)
    return horizon if not state_reached(state, g, tol) else horizon
