"""Dense rewards from a distance model: baseline-subtracted cumulative form,
the instantaneous alternative, sparse mixing, normalizer calibration, and
subgoal chaining."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import world


@dataclass
class RewardSpec:
    form: str = "cumulative"  # or "instantaneous"
    T: float = 45.0
    mix_sparse: bool = True
    goal_chain: list = field(default_factory=list)  # goal Observations, in order
    switch_threshold: float = 1.0
    switch_streak: int = 3

    def __post_init__(self):
        if self.form not in ("cumulative", "instantaneous"):
            raise ValueError(f"unknown reward form {self.form!r}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.switch_streak < 1:
            raise ValueError("switch_streak must be >= 1")


@dataclass(frozen=True)
class ChainState:
    active_goal_index: int = 0
    consecutive_below: int = 0


def shaped_reward(model, s_next, g, spec):
    """-max(0, d(s', g) - d(g, g)) / T; always <= 0."""
    adjusted = model.distance(s_next, g) - model.distance(g, g)
    return -max(0.0, adjusted) / spec.T


def instantaneous_reward(model, s_t, s_next, g, spec):
    """(d(s, g) - d(s', g)) / T; rewards only the per-step reduction."""
    return (model.distance(s_t, g) - model.distance(s_next, g)) / spec.T


def calibrate_T(model, env_resets, g, mode="auto", fixed=45.0):
    """Normalizer such that initial shaped rewards have scale ~ 1/3.

    auto: T = 3 * mean over resets of max(0, d(s0, g) - d(g, g)).
    fixed: returns the configured constant unchanged.
    """
    if mode == "fixed":
        return float(fixed)
    if len(env_resets) < 10:
        raise ValueError("need >= 10 reset observations to calibrate")
    baseline = model.distance(g, g)
    adjusted = [max(0.0, model.distance(s, g) - baseline) for s in env_resets]
    mean = float(np.mean(adjusted))
    if mean <= 0.0:
        raise ValueError("degenerate model: zero mean initial distance")
    return 3.0 * mean


def calibrate_switch_threshold(model, env_resets, g):
    """Auto subgoal-switch threshold: 10% of the mean initial distance, so
    the d<threshold rule works across distance scales."""
    baseline = model.distance(g, g)
    adjusted = [max(0.0, model.distance(s, g) - baseline) for s in env_resets]
    mean = float(np.mean(adjusted))
    if mean <= 0.0:
        raise ValueError("degenerate model: zero mean initial distance")
    return 0.1 * mean


def advance_chain(chain, d_active, spec):
    """Switch to the next goal once d stays below the threshold for
    switch_streak consecutive steps. Saturates at the last goal."""
    if d_active < spec.switch_threshold:
        streak = chain.consecutive_below + 1
    else:
        streak = 0
    idx = chain.active_goal_index
    if streak >= spec.switch_streak and idx + 1 < len(spec.goal_chain):
        return ChainState(idx + 1, 0)
    return ChainState(idx, streak)


def total_reward(spec, model, s_t, s_next, task, chain, world_state_next=None):
    """Shaped term against the active goal, plus the sparse task reward when
    mixing. Returns (reward, advanced chain state).

    world_state_next is required for the sparse term; s_t / s_next are
    Observations fed to the distance model.
    """
    g = spec.goal_chain[chain.active_goal_index]
    baseline = model.distance(g, g)
    d_active = model.distance(s_next, g) - baseline
    if spec.form == "cumulative":
        r = -max(0.0, d_active) / spec.T
    else:
        r = (model.distance(s_t, g) - baseline - d_active) / spec.T
    if spec.mix_sparse:
        if world_state_next is None:
            raise ValueError("world_state_next required for sparse mixing")
        r += world.sparse_reward(world_state_next, task)
    return r, advance_chain(chain, d_active, spec)
