"""Value-based RL on the robot embodiment over a discrete action set.

Double-estimator Q-learning (online net selects, target net evaluates) with
an epsilon-greedy policy, a bounded replay buffer, and goal-image
conditioning: the value network input is the flattened observation
concatenated with the flattened active goal image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, rewards, world

# noop + 8 compass directions x 2 magnitudes
_DIRS = [(np.cos(a), np.sin(a)) for a in np.arange(8) * (np.pi / 4)]
ACTIONS = np.array([[0.0, 0.0]] + [[m * dx, m * dy] for m in (0.5, 1.0)
                                   for dx, dy in _DIRS])
N_ACTIONS = len(ACTIONS)

HIDDEN = 64


@dataclass
class TrainRunConfig:
    reward_mode: str = "shaped_plus_sparse"  # sparse_only | shaped_only | shaped_plus_sparse | oracle
    max_env_steps: int = 30_000
    eval_every: int = 2_000
    eval_episodes: int = 20
    initial_exploration_steps: int = 1_000
    lr: float = 3e-4
    batch: int = 256
    grad_steps_per_env_step: int = 1
    gamma: float = 0.98
    replay_capacity: int = 50_000
    target_refresh: int = 500
    target_tau: float = 0.0  # >0: Polyak-average the target net every step
    n_step: int = 1  # multi-step return horizon for TD targets
    hidden: int = HIDDEN
    epsilon_final: float = 0.05
    epsilon_decay_frac: float = 0.2  # linear decay over this fraction of steps
    td_clip: float = 1.0  # Huber-style TD-error clip half-width; 0 disables
    lr_final: float = -1.0  # linear lr decay endpoint; <0 keeps lr constant

    def __post_init__(self):
        if self.reward_mode not in ("sparse_only", "shaped_only",
                                    "shaped_plus_sparse", "oracle"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        for name in ("max_env_steps", "eval_every", "eval_episodes",
                     "initial_exploration_steps", "batch",
                     "grad_steps_per_env_step", "replay_capacity",
                     "target_refresh", "n_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LearningCurve:
    seed: int
    reward_mode: str
    env_steps: list = field(default_factory=list)
    mean_return: list = field(default_factory=list)
    success_rate: list = field(default_factory=list)


class ReplayBuffer:
    def __init__(self, capacity, obs_width):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_width), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_width), dtype=np.float32)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity, dtype=np.float64)
        self.done = np.zeros(capacity, dtype=np.float64)
        # discount applied to the bootstrap term: gamma^(steps spanned)
        self.disc = np.zeros(capacity, dtype=np.float64)
        self.size = 0
        self.pos = 0

    def add(self, obs, action, reward, next_obs, done, disc):
        i = self.pos
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = done
        self.disc[i] = disc
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        idx = rng.integers(0, self.size, batch)
        return (self.obs[idx].astype(np.float64), self.action[idx],
                self.reward[idx], self.next_obs[idx].astype(np.float64),
                self.done[idx], self.disc[idx])


class _NStepQueue:
    """Accumulates transitions so the buffer receives n-step returns:
    (s_t, a_t, sum_k gamma^k r_{t+k}, s_{t+n}, done, gamma^n)."""

    def __init__(self, n, gamma):
        self.n = n
        self.gamma = gamma
        self.pending = []  # (obs, action); rewards tracked separately
        self.rewards = []

    def push(self, obs, action, reward, next_obs, terminal, episode_end, buffer):
        self.pending.append((obs, action))
        self.rewards.append(reward)
        if len(self.pending) >= self.n:
            self._emit(0, next_obs, terminal, buffer)
            self.pending.pop(0)
            self.rewards.pop(0)
        if episode_end:
            # timeouts flush with terminal=False so the tail still bootstraps
            self.flush(next_obs, terminal, buffer)

    def _emit(self, start, next_obs, terminal, buffer):
        ret = 0.0
        for k in range(len(self.rewards) - 1, start - 1, -1):
            ret = self.rewards[k] + self.gamma * ret
        span = len(self.rewards) - start
        obs, action = self.pending[start]
        buffer.add(obs, action, ret, next_obs, 1.0 if terminal else 0.0,
                   self.gamma ** span)

    def flush(self, next_obs, terminal, buffer):
        """Emit the shortened tails at an episode boundary."""
        for start in range(len(self.pending)):
            self._emit(start, next_obs, terminal, buffer)
        self.pending.clear()
        self.rewards.clear()


class PolicyNet:
    """Q network over the discrete action set, with a target copy."""

    def __init__(self, obs_width, seed, hidden=HIDDEN):
        rng = np.random.default_rng(seed)
        self.net = nn.mlp("q", (obs_width, hidden, hidden, N_ACTIONS))
        self.params = nn.init_params(self.net, rng)
        # near-zero output layer: initial Q-values start close to uniform so
        # early greedy actions are not locked in by initialization luck
        self.params[f"q/W{len(self.net.widths) - 2}"] *= 0.01
        self.target_params = {k: v.copy() for k, v in self.params.items()}
        self.obs_width = obs_width

    def q_values(self, x, target=False):
        params = self.target_params if target else self.params
        return nn.forward(self.net, params, x)

    def refresh_target(self):
        self.target_params = {k: v.copy() for k, v in self.params.items()}

    def soft_update_target(self, tau):
        for k, v in self.params.items():
            self.target_params[k] = (1.0 - tau) * self.target_params[k] + tau * v


def _policy_input(obs, goal_obs):
    return np.concatenate([np.asarray(obs).ravel(), np.asarray(goal_obs).ravel()])


def _oracle_reward(state, task):
    """Dense upper-bound reward from true positions (never learned)."""
    err = world.goal_error(state, task)
    reach = max(0.0, float(np.linalg.norm(state.effector_pos - state.object_pos))
                - world.CONTACT_RADIUS)
    if task.task_kind is not world.TaskKind.PUSH:
        reach = max(0.0, float(np.linalg.norm(
            state.effector_pos - world.handle_pos(state.drawer_ext))))
    shaped = -(err + 0.5 * reach)
    return shaped + world.sparse_reward(state, task)


class _EpisodeRewards:
    """Per-episode reward bookkeeping for one reward mode."""

    def __init__(self, mode, model, spec, task):
        self.mode = mode
        self.model = model
        self.spec = spec
        self.task = task
        self.chain = rewards.ChainState()

    def reset(self):
        self.chain = rewards.ChainState()

    def active_goal(self):
        if self.mode in ("sparse_only", "oracle"):
            return self.spec.goal_chain[-1]
        return self.spec.goal_chain[self.chain.active_goal_index]

    def step(self, obs, next_obs, next_state):
        if self.mode == "sparse_only":
            return world.sparse_reward(next_state, self.task)
        if self.mode == "oracle":
            return _oracle_reward(next_state, self.task)
        spec = self.spec
        if self.mode == "shaped_only" and spec.mix_sparse:
            spec = rewards.RewardSpec(spec.form, spec.T, False, spec.goal_chain,
                                      spec.switch_threshold, spec.switch_streak)
        elif self.mode == "shaped_plus_sparse" and not spec.mix_sparse:
            spec = rewards.RewardSpec(spec.form, spec.T, True, spec.goal_chain,
                                      spec.switch_threshold, spec.switch_streak)
        r, self.chain = rewards.total_reward(spec, self.model, obs, next_obs,
                                             self.task, self.chain,
                                             world_state_next=next_state)
        return r


def train_policy(task, model, spec, cfg, seed, embodiment=world.ROBOT,
                 verbose=False):
    """Train an epsilon-greedy Q policy; returns (LearningCurve, PolicyNet).

    model may be None for sparse_only / oracle modes; spec.goal_chain must
    hold the goal observation(s) rendered for the training embodiment.
    """
    if cfg.reward_mode in ("shaped_only", "shaped_plus_sparse") and model is None:
        raise ValueError(f"reward mode {cfg.reward_mode} needs a distance model")
    if not spec.goal_chain:
        raise ValueError("goal_chain must be non-empty")

    rng = np.random.default_rng(seed)
    obs_width = 2 * world.GRID * world.GRID
    policy = PolicyNet(obs_width, int(rng.integers(2**31 - 1)),
                       hidden=cfg.hidden)
    buffer = ReplayBuffer(cfg.replay_capacity, obs_width)
    nstep = _NStepQueue(cfg.n_step, cfg.gamma)
    opt = nn.OptimState(lr=cfg.lr)
    rewarder = _EpisodeRewards(cfg.reward_mode, model, spec, task)
    curve = LearningCurve(seed=seed, reward_mode=cfg.reward_mode)

    decay_steps = max(1, int(cfg.epsilon_decay_frac * cfg.max_env_steps))

    state = world.reset(task, embodiment, int(rng.integers(2**31 - 1)))
    rewarder.reset()
    obs = world.render(state, embodiment)
    ep_steps = 0
    for step_i in range(1, cfg.max_env_steps + 1):
        goal_obs = rewarder.active_goal()
        x = _policy_input(obs, goal_obs)
        eps = max(cfg.epsilon_final,
                  1.0 - (1.0 - cfg.epsilon_final) * (step_i / decay_steps))
        if step_i <= cfg.initial_exploration_steps or rng.random() < eps:
            a_idx = int(rng.integers(N_ACTIONS))
        else:
            a_idx = int(np.argmax(policy.q_values(x)))
        next_state = world.step(state, ACTIONS[a_idx], embodiment)
        next_obs = world.render(next_state, embodiment)
        r = rewarder.step(obs, next_obs, next_state)
        ep_steps += 1
        done = (world.sparse_reward(next_state, task) == 1.0
                or ep_steps >= task.horizon)
        terminal = done and world.sparse_reward(next_state, task) == 1.0
        x_next = _policy_input(next_obs, rewarder.active_goal())
        nstep.push(x, a_idx, r, x_next, terminal, done, buffer)

        state, obs = next_state, next_obs
        if done:
            state = world.reset(task, embodiment, int(rng.integers(2**31 - 1)))
            rewarder.reset()
            obs = world.render(state, embodiment)
            ep_steps = 0

        if step_i > cfg.initial_exploration_steps:
            if cfg.lr_final >= 0.0:
                frac = step_i / cfg.max_env_steps
                opt.lr = cfg.lr + (cfg.lr_final - cfg.lr) * frac
            for _ in range(cfg.grad_steps_per_env_step):
                _learn_step(policy, buffer, opt, cfg, rng)
            if cfg.target_tau > 0.0:
                policy.soft_update_target(cfg.target_tau)
            elif step_i % cfg.target_refresh == 0:
                policy.refresh_target()

        if step_i % cfg.eval_every == 0:
            ret, sr = evaluate_policy(policy, task, cfg.eval_episodes,
                                      seed=seed * 7919 + step_i,
                                      rewarder=rewarder, embodiment=embodiment)
            curve.env_steps.append(step_i)
            curve.mean_return.append(ret)
            curve.success_rate.append(sr)
            if verbose:
                print(f"  step {step_i}: return {ret:.3f} success {sr:.2f}")
    return curve, policy


def _learn_step(policy, buffer, opt, cfg, rng):
    obs, action, reward, next_obs, done, disc = buffer.sample(cfg.batch, rng)
    q_next_online = nn.forward(policy.net, policy.params, next_obs)
    best = np.argmax(q_next_online, axis=1)
    q_next_target = nn.forward(policy.net, policy.target_params, next_obs)
    target = reward + disc * (1.0 - done) * q_next_target[
        np.arange(cfg.batch), best]
    q_all, cache = nn.forward_cached(policy.net, policy.params, obs)
    td = q_all[np.arange(cfg.batch), action] - target
    if not np.all(np.isfinite(td)):
        raise nn.NonFiniteError("non-finite TD error")
    upstream = np.zeros_like(q_all)
    # Huber-style gradient: clip the TD error so rare large targets cannot
    # destabilize the value scale
    if cfg.td_clip > 0.0:
        td = np.clip(td, -cfg.td_clip, cfg.td_clip)
    upstream[np.arange(cfg.batch), action] = 2.0 * td / cfg.batch
    grads, _ = nn.backward(policy.net, policy.params, cache, upstream)
    nn.opt_step(policy.params, grads, opt)


def evaluate_policy(policy, task, episodes, seed, rewarder=None,
                    embodiment=world.ROBOT):
    """Greedy rollouts; returns (mean return, success rate). Deterministic
    given (policy, seed). Return is under the rewarder's reward (sparse sum
    when rewarder is None)."""
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    rng = np.random.default_rng(seed)
    goal_fallback = world.render(task.goal_state, embodiment)
    returns, successes = [], 0
    for _ in range(episodes):
        state = world.reset(task, embodiment, int(rng.integers(2**31 - 1)))
        obs = world.render(state, embodiment)
        if rewarder is not None:
            saved_chain = rewarder.chain
            rewarder.reset()
        total = 0.0
        solved = False
        for _ in range(task.horizon):
            goal_obs = (rewarder.active_goal() if rewarder is not None
                        else goal_fallback)
            x = _policy_input(obs, goal_obs)
            a_idx = int(np.argmax(policy.q_values(x)))
            next_state = world.step(state, ACTIONS[a_idx], embodiment)
            next_obs = world.render(next_state, embodiment)
            if rewarder is not None:
                total += rewarder.step(obs, next_obs, next_state)
            else:
                total += world.sparse_reward(next_state, task)
            state, obs = next_state, next_obs
            if world.sparse_reward(state, task) == 1.0:
                solved = True
                break
        returns.append(total)
        successes += solved
        if rewarder is not None:
            rewarder.chain = saved_chain
    return float(np.mean(returns)), successes / episodes


def steps_to_threshold(curve, threshold):
    """First env_steps where success rate reaches threshold and holds at the
    next evaluation point; None if never confirmed."""
    sr = curve.success_rate
    for i in range(len(sr) - 1):
        if sr[i] >= threshold and sr[i + 1] >= threshold:
            return curve.env_steps[i]
    return None
