"""Scripted experts, demonstration rollouts and self-supervised samplers."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import world
from .world import (
    CONTACT_RADIUS,
    DRAWER_TRAVEL,
    SUCCESS_TOL,
    EmbodimentSpec,
    TaskSpec,
    WorldState,
    handle_pos,
)

POSITIVE_WINDOW_STEPS = 2  # 0.2 s at dt = 0.1, inclusive
NEGATIVE_WINDOW_STEPS = 4  # 0.4 s, exclusive


@dataclass
class Trajectory:
    frames: np.ndarray  # (T, H, W) intensities in [0, 1]
    dt: float
    embodiment_id: int
    states: list | None = None  # kept in memory for oracles; never serialized

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class TrajectoryDataset:
    trajectories: list
    split: str = "train"

    def __len__(self):
        return len(self.trajectories)

    @property
    def frame_shape(self):
        return self.trajectories[0].frames.shape[1:]

    @property
    def dt(self):
        return self.trajectories[0].dt


@dataclass(frozen=True)
class RegressionSample:
    s: np.ndarray
    g: np.ndarray
    delta: int


@dataclass(frozen=True)
class TripletSample:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def _unit(v):
    n = float(np.linalg.norm(v))
    return v / n if n > 1e-12 else np.zeros_like(v)


def _approach(eff, target, obstacle, avoid_r, max_step):
    """Greedy step toward target, steering tangentially around an obstacle
    disk. Step magnitude is scaled so the effector never overshoots."""
    v = target - eff
    d = float(np.linalg.norm(v))
    if d < 1e-9:
        return np.zeros(2)
    desired = v / d
    scale = min(1.0, d / max_step)
    candidate = eff + desired * scale * max_step
    if obstacle is None or float(np.linalg.norm(candidate - obstacle)) >= avoid_r:
        return desired * scale
    radial = eff - obstacle
    rn = float(np.linalg.norm(radial))
    radial = radial / rn if rn > 1e-9 else -desired
    tangent = np.array([-radial[1], radial[0]])
    if float(np.dot(tangent, desired)) < 0:
        tangent = -tangent
    out = tangent + 0.5 * radial
    return _unit(out)


def scripted_expert_action(state, goal, embodiment, tol=SUCCESS_TOL):
    """Greedy near-optimal action toward a full goal state.

    Priority: match the drawer, then push the object to its goal position
    (approaching from behind), then park the effector.
    """
    eff = state.effector_pos
    max_step = embodiment.max_step

    drawer_gap = abs(goal.drawer_ext - state.drawer_ext) * DRAWER_TRAVEL
    if drawer_gap > tol:
        if not state.holding:
            return _approach(eff, handle_pos(state.drawer_ext), None, 0.0, max_step)
        dy = (goal.drawer_ext - state.drawer_ext) * DRAWER_TRAVEL
        return np.array([0.0, float(np.clip(dy / max_step, -1.0, 1.0))])

    obj = state.object_pos
    to_goal = goal.object_pos - obj
    obj_gap = float(np.linalg.norm(to_goal))
    standoff = CONTACT_RADIUS + 0.02  # approach target behind the object
    avoid_r = CONTACT_RADIUS + 0.005
    if obj_gap > tol:
        push_dir = to_goal / obj_gap
        r = float(np.linalg.norm(obj - eff))
        aligned = float(np.dot(_unit(obj - eff), push_dir)) if r > 1e-9 else -1.0
        if r <= standoff + max_step and aligned >= 0.9:
            # drive at a point just past the contact surface along the push
            # line; the penetration both recenters the effector and advances
            # the object, without overshooting the object goal
            advance = min(max_step, obj_gap)
            target = obj - push_dir * (CONTACT_RADIUS - advance)
            v = target - eff
            d = float(np.linalg.norm(v))
            return (v / d) * min(1.0, d / max_step) if d > 1e-9 else np.zeros(2)
        push_point = obj - push_dir * standoff
        return _approach(eff, push_point, obj, avoid_r, max_step)

    if float(np.linalg.norm(goal.effector_pos - eff)) > tol:
        return _approach(eff, goal.effector_pos, obj, avoid_r, max_step)
    return np.zeros(2)


def rollout_expert(task, embodiment, seed, noise=0.0, speed=1.0, rng=None,
                   idle_tail=0):
    """Roll the scripted expert from reset until task success or horizon.

    Returns a Trajectory whose last pre-tail frame is the success frame.
    """
    state = world.reset(task, embodiment, seed)
    frames = [world.render(state, embodiment)]
    states = [state]
    for _ in range(task.horizon):
        if world.sparse_reward(state, task) == 1.0:
            break
        action = scripted_expert_action(state, task.goal_state, embodiment,
                                        tol=task.success_tol) * speed
        if noise > 0.0 and rng is not None:
            action = action + rng.normal(0.0, noise, 2)
        state = world.step(state, action, embodiment)
        frames.append(world.render(state, embodiment))
        states.append(state)
    for _ in range(idle_tail):
        frames.append(frames[-1].copy())
        states.append(state)
    return Trajectory(np.stack(frames), embodiment.dt,
                      world.EMBODIMENT_IDS[embodiment.name], states)


def generate_demos(task, embodiment, count, seed, noise=0.0,
                   speed_range=(0.7, 1.0), max_idle_tail=10, split="train"):
    """Demonstration videos with per-episode speed scaling, per-step action
    noise, and a random idle tail after success. Deterministic given seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0.0 <= noise <= 0.5:
        raise ValueError("noise must be in [0, 0.5]")
    rng = np.random.default_rng(seed)
    trajectories = []
    for _ in range(count):
        ep_seed = int(rng.integers(0, 2**31 - 1))
        speed = float(rng.uniform(*speed_range))
        tail = int(rng.integers(0, max_idle_tail + 1))
        trajectories.append(
            rollout_expert(task, embodiment, ep_seed, noise=noise, speed=speed,
                           rng=rng, idle_tail=tail)
        )
    return TrajectoryDataset(trajectories, split=split)


def sample_regression_batch(data, batch, rng_seed):
    """(s, g, delta) samples: uniform over trajectories, then uniform over
    the C(T, 2) ordered frame pairs. Trajectories shorter than 2 are skipped."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rng = np.random.default_rng(rng_seed)
    usable = [t for t in data.trajectories if len(t) >= 2]
    if not usable:
        raise ValueError("no trajectory of length >= 2")
    samples = []
    for _ in range(batch):
        traj = usable[int(rng.integers(len(usable)))]
        i, j = rng.choice(len(traj), size=2, replace=False)
        t, u = (int(i), int(j)) if i < j else (int(j), int(i))
        samples.append(RegressionSample(traj.frames[t], traj.frames[u], u - t))
    return samples


def _valid_anchors(length, neg_window):
    return [
        a for a in range(length)
        if a - neg_window - 1 >= 0 or a + neg_window + 1 <= length - 1
    ]


def sample_triplet_batch(data, batch, rng_seed,
                         pos_window=POSITIVE_WINDOW_STEPS,
                         neg_window=NEGATIVE_WINDOW_STEPS):
    """Triplets from single trajectories: positives within +-pos_window
    steps (inclusive), negatives strictly further than neg_window steps."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rng = np.random.default_rng(rng_seed)
    usable = [t for t in data.trajectories if _valid_anchors(len(t), neg_window)]
    if not usable:
        raise ValueError("no trajectory long enough for triplet sampling")
    samples = []
    for _ in range(batch):
        traj = usable[int(rng.integers(len(usable)))]
        length = len(traj)
        anchors = _valid_anchors(length, neg_window)
        a = anchors[int(rng.integers(len(anchors)))]
        positives = [i for i in range(max(0, a - pos_window),
                                      min(length, a + pos_window + 1)) if i != a]
        negatives = [i for i in range(length) if abs(i - a) > neg_window]
        p = positives[int(rng.integers(len(positives)))]
        n = negatives[int(rng.integers(len(negatives)))]
        samples.append(TripletSample(traj.frames[a], traj.frames[p], traj.frames[n]))
    return samples


# --- binary dataset format -------------------------------------------------

MAGIC = b"HOLD"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    """Base class for dataset file problems."""


class BadMagicError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


def save_dataset(data, path):
    """Little-endian binary: magic, version u16, H u16, W u16, dt f32,
    count u32; per trajectory: embodiment id u8, length u32, frame bytes."""
    h, w = data.frame_shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHHfI", FORMAT_VERSION, h, w, data.dt,
                             len(data.trajectories)))
        for traj in data.trajectories:
            fh.write(struct.pack("<BI", traj.embodiment_id, len(traj)))
            fh.write(np.round(traj.frames * 255.0).astype(np.uint8).tobytes())


def _read_exact(fh, n, what):
    raw = fh.read(n)
    if len(raw) != n:
        raise TruncatedError(f"truncated payload while reading {what}")
    return raw


def load_dataset(path, split="train"):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise BadMagicError(f"not a dataset file: {path}")
        version, h, w, dt, count = struct.unpack("<HHHfI",
                                                 _read_exact(fh, 14, "header"))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"unsupported format version {version}")
        trajectories = []
        for _ in range(count):
            emb_id, length = struct.unpack("<BI", _read_exact(fh, 5, "trajectory header"))
            raw = _read_exact(fh, length * h * w, "frames")
            frames = (np.frombuffer(raw, dtype=np.uint8)
                      .reshape(length, h, w).astype(np.float64) / 255.0)
            trajectories.append(Trajectory(frames, float(dt), emb_id))
    return TrajectoryDataset(trajectories, split=split)


def split_dataset(data, holdout, seed):
    """Deterministic train/validation split by trajectory."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data.trajectories))
    hold = set(order[:holdout].tolist())
    train = [t for i, t in enumerate(data.trajectories) if i not in hold]
    val = [t for i, t in enumerate(data.trajectories) if i in hold]
    return (TrajectoryDataset(train, split="train"),
            TrajectoryDataset(val, split="validation"))
