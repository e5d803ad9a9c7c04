"""Mountain car, pendulum swing-up, and eval-time observation noise."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

MC_X_MIN, MC_X_MAX = -1.2, 0.6
MC_V_MAX = 0.07
MC_GOAL = 0.5
MC_HORIZON = 1000

PEND_MAX_SPEED = 8.0
PEND_MAX_TORQUE = 2.0
PEND_DT = 0.05
PEND_G = 10.0
PEND_M = 1.0
PEND_L = 1.0
PEND_HORIZON = 200


@dataclass
class StepResult:
    """``done`` ends the episode; ``truncated`` marks a horizon cut (no terminal state)."""

    observation: np.ndarray
    reward: float
    done: bool
    state: tuple = ()
    truncated: bool = False


class NoisyObservation(np.ndarray):
    """Marks an observation carrying eval-time noise so it can never be stored for training."""


def mc_dynamics(x, v, force):
    """One classical mountain-car update; works on scalars or arrays."""
    v = np.clip(v + force - 0.0025 * np.cos(3.0 * x), -MC_V_MAX, MC_V_MAX)
    x = np.clip(x + v, MC_X_MIN, MC_X_MAX)
    # inelastic left wall
    v = np.where((x <= MC_X_MIN) & (v < 0), 0.0, v)
    return x, v


def mc_force(action, continuous):
    if continuous:
        a = float(np.asarray(action).reshape(-1)[0])
        if not -1.0 <= a <= 1.0:
            raise ValueError(f"continuous action {a} outside [-1, 1]")
        return 0.0015 * a
    if action not in (0, 1, 2):
        raise ValueError(f"discrete action {action!r} not in {{0, 1, 2}}")
    return 0.001 * (action - 1)


def mc_step(state, action, continuous=False) -> StepResult:
    """Advance (x, v). A state already at the goal is absorbing and reports done."""
    x, v = state
    if x >= MC_GOAL:
        return StepResult(np.array([x, v]), 0.0, True, (x, v))
    x2, v2 = mc_dynamics(x, v, mc_force(action, continuous))
    x2, v2 = float(x2), float(v2)
    return StepResult(np.array([x2, v2]), -1.0, x2 >= MC_GOAL, (x2, v2))


def angle_normalize(theta):
    return ((theta + math.pi) % (2 * math.pi)) - math.pi


def pendulum_obs(theta, omega):
    return np.array([math.cos(theta), math.sin(theta), omega])


def pendulum_step(state, torque) -> StepResult:
    """Swing-up pendulum; theta = 0 is upright."""
    theta, omega = state
    u = float(np.asarray(torque).reshape(-1)[0])
    if not -PEND_MAX_TORQUE <= u <= PEND_MAX_TORQUE:
        warnings.warn(f"torque {u} clipped to [-2, 2]", RuntimeWarning, stacklevel=2)
        u = min(max(u, -PEND_MAX_TORQUE), PEND_MAX_TORQUE)
    th = angle_normalize(theta)
    reward = -(th * th + 0.1 * omega * omega + 0.001 * u * u)
    omega2 = omega + (
        3 * PEND_G / (2 * PEND_L) * math.sin(theta) + 3.0 / (PEND_M * PEND_L**2) * u
    ) * PEND_DT
    omega2 = min(max(omega2, -PEND_MAX_SPEED), PEND_MAX_SPEED)
    theta2 = angle_normalize(theta + omega2 * PEND_DT)
    return StepResult(pendulum_obs(theta2, omega2), float(reward), False, (theta2, omega2))


def pendulum_energy(theta, omega):
    """Energy of the uniform-rod pendulum the update integrates (I = m l^2 / 3)."""
    return 0.5 * PEND_M * PEND_L**2 / 3.0 * omega**2 + PEND_M * PEND_G * PEND_L / 2.0 * math.cos(theta)


class Env:
    """Minimal episodic interface: reset(rng) -> obs, step(action) -> StepResult.

    Actions are always in [-1, 1]^action_dim; each env rescales internally.
    """

    name = ""
    obs_dim = 0
    action_dim = 1
    horizon = 0

    def __init__(self):
        self.t = 0
        self.state = None

    def reset(self, rng) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> StepResult:
        raise NotImplementedError


class PendulumEnv(Env):
    name = "pendulum"
    obs_dim = 3
    horizon = PEND_HORIZON

    def reset(self, rng):
        self.t = 0
        self.state = (rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0))
        return pendulum_obs(*self.state)

    def step(self, action):
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        res = pendulum_step(self.state, PEND_MAX_TORQUE * a)
        self.state = res.state
        self.t += 1
        res.truncated = res.done = self.t >= self.horizon
        return res


class MountainCarEnv(Env):
    name = "mountain_car"
    obs_dim = 2
    horizon = MC_HORIZON

    def reset(self, rng):
        self.t = 0
        self.state = (rng.uniform(-0.6, -0.4), 0.0)
        return np.array(self.state)

    def step(self, action):
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        res = mc_step(self.state, a, continuous=True)
        self.state = res.state
        self.t += 1
        if not res.done and self.t >= self.horizon:
            res.truncated = res.done = True
        return res


ENVS = {PendulumEnv.name: PendulumEnv, MountainCarEnv.name: MountainCarEnv}


def make_env(name) -> Env:
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def add_observation_noise(obs, sigma, rng):
    """obs + N(0, sigma^2 I). Only ever applied to what the policy sees at eval time."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    obs = np.asarray(obs, dtype=np.float64)
    if sigma == 0:
        return obs.copy()
    noisy = obs + sigma * rng.standard_normal(obs.shape)
    return noisy.view(NoisyObservation)


def rollout_return(env: Env, policy, sigma, episodes, seed):
    """Episode returns of ``policy(obs) -> action`` with eval-time noise ``sigma``.

    Env resets and noise draws come from separate streams so that a fixed
    seed gives the same start states at every sigma.
    """
    env_rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    returns = []
    for _ in range(episodes):
        obs = env.reset(env_rng)
        total, done = 0.0, False
        while not done:
            seen = add_observation_noise(obs, sigma, noise_rng)
            res = env.step(policy(seen))
            total += res.reward
            obs, done = res.observation, res.done
        returns.append(total)
    return np.array(returns)


LOW, MEDIUM, HIGH = "low", "medium", "high"
LEVELS = (LOW, MEDIUM, HIGH)
NOISE_GRID = tuple(float(s) for s in np.round(np.logspace(-3, 1, 17), 6))


@dataclass
class NoiseSpec:
    levels: dict[str, float]
    seed: int = 0
    flags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(LEVELS) - set(self.levels)
        if missing:
            raise ValueError(f"noise levels missing {sorted(missing)}")
        if not self.flags:
            lo, mid, hi = (self.levels[k] for k in LEVELS)
            if not 0 <= lo < mid < hi:
                raise ValueError(f"noise levels must satisfy 0 <= low < medium < high, got {self.levels}")

    def __getitem__(self, level):
        return self.levels[level]


def tune_noise_levels(env: Env, policies, baseline_policy=None, grid=NOISE_GRID,
                      episodes=5, seed=0):
    """Pick low/medium/high eval-noise levels from return degradation.

    Degradation at sigma is ``(R(0) - R(sigma)) / (R(0) - R_baseline)``: the
    fraction of a policy's headroom over the baseline (default: uniform
    random actions) that the noise destroys. low is the largest grid sigma
    below medium where every policy keeps > 95%; medium is the smallest
    sigma with mean degradation in [0.2, 0.7]; high is the smallest sigma
    where every policy loses > 90%. Bands nobody satisfies fall back to a
    grid boundary and are flagged.
    """
    grid = sorted(grid)
    if not policies:
        raise ValueError("need at least one trained policy")
    if baseline_policy is None:
        act_rng = np.random.default_rng([seed, 2])
        baseline_policy = lambda obs: act_rng.uniform(-1.0, 1.0, size=env.action_dim)  # noqa: E731
    base = rollout_return(env, baseline_policy, 0.0, episodes, seed).mean()
    degr = []
    for policy in policies:
        clean = rollout_return(env, policy, 0.0, episodes, seed).mean()
        headroom = clean - base
        if headroom <= 1e-9:
            degr.append(None)
            continue
        row = [(clean - rollout_return(env, policy, s, episodes, seed).mean()) / headroom for s in grid]
        degr.append(np.array(row))

    if all(d is None for d in degr):
        flags = {k: "degenerate: no headroom over baseline" for k in LEVELS}
        return NoiseSpec({k: grid[0] for k in LEVELS}, seed, flags)
    d = np.array([x for x in degr if x is not None])
    worst, mean, best = d.max(axis=0), d.mean(axis=0), d.min(axis=0)
    flags = {}

    hi_idx = next((i for i in range(len(grid)) if best[i] > 0.9), None)
    if hi_idx is None:
        flags[HIGH] = "unattainable: returns never collapse on grid"
        hi_idx = len(grid) - 1
    mid_idx = next((i for i in range(hi_idx) if 0.2 <= mean[i] <= 0.7), None)
    if mid_idx is None:
        flags[MEDIUM] = "unattainable: no grid sigma in the [0.2, 0.7] band"
        mid_idx = max(hi_idx - 1, 0)
    lows = [i for i in range(mid_idx) if worst[i] < 0.05]
    if lows:
        lo_idx = lows[-1]
    else:
        flags[LOW] = "unattainable: degradation >= 5% at every grid sigma"
        lo_idx = 0
    levels = {LOW: grid[lo_idx], MEDIUM: grid[mid_idx], HIGH: grid[hi_idx]}
    return NoiseSpec(levels, seed, flags)
