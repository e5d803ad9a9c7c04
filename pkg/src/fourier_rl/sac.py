"""Soft actor-critic with ReLU / LFF / CLFF twin critics and a ReLU tanh-Gaussian actor."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import Env, NoisyObservation, make_env, rollout_return
from .fourier import FourierSpec, build_critic, estimate_beta
from .nn import IDENTITY, RELU, AdamState, Mlp, adam_step, dense_layer

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def substream(seed, name):
    """Independent generator for one named consumer of a run's randomness."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class SacConfig:
    critic: FourierSpec
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    temperature_lr: float = 1e-4
    discount: float = 0.99
    target_update_period: int = 2
    initial_temperature: float = 0.1
    batch_size: int = 256
    warmup_steps: int = 10_000
    tau: float = 0.005
    weight_decay: float = 0.0
    buffer_capacity: int = 100_000
    actor_hidden: tuple[int, ...] = (1024, 1024)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValueError("discount must be in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.target_update_period < 1:
            raise ValueError("target_update_period must be >= 1")
        self.actor_hidden = tuple(int(w) for w in self.actor_hidden)


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool


class TaintedObservationError(ValueError):
    pass


class ReplayBuffer:
    """FIFO ring buffer with uniform sampling over the filled region."""

    def __init__(self, obs_dim, action_dim, capacity):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.dones = np.zeros(self.capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done):
        if isinstance(s, NoisyObservation) or isinstance(s2, NoisyObservation):
            raise TaintedObservationError("noise-perturbed observations must not enter the replay buffer")
        i = self.cursor
        self.obs[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_obs[i] = s2
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, t: Transition):
        self.add(t.s, t.a, t.r, t.s2, t.done)

    def sample(self, rng, n):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


@dataclass
class PolicySample:
    action: np.ndarray
    log_prob: np.ndarray
    # kept for the reparameterised backward pass
    cache: object
    u: np.ndarray
    eps: np.ndarray
    std: np.ndarray
    ls_raw: np.ndarray


def build_actor(obs_dim, action_dim, hidden, rng) -> Mlp:
    layers, width = [], obs_dim
    for h in hidden:
        layers.append(dense_layer(rng, width, h, RELU))
        width = h
    layers.append(dense_layer(rng, width, 2 * action_dim, IDENTITY))
    return Mlp(layers)


def squash_log_std(raw):
    return LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (np.tanh(raw) + 1.0)


def sample_action(actor: Mlp, obs, rng) -> PolicySample:
    """tanh(mean + std * eps) with its log-density under the squashed Gaussian."""
    cache = actor.forward(obs)
    k = actor.out_dim // 2
    mean, ls_raw = cache.output[:, :k], cache.output[:, k:]
    std = np.exp(squash_log_std(ls_raw))
    eps = rng.standard_normal(mean.shape)
    u = mean + std * eps
    a = np.tanh(u)
    # log(1 - tanh(u)^2) in a form that stays finite for large |u|
    log_det = 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    logp = (-0.5 * eps * eps - np.log(std) - _HALF_LOG_2PI - log_det).sum(axis=1)
    return PolicySample(a, logp, cache, u, eps, std, ls_raw)


def deterministic_action(actor: Mlp, obs):
    out = actor(np.atleast_2d(obs))
    return np.tanh(out[:, : actor.out_dim // 2])


def policy_output_grad(sample: PolicySample, dl_dlogp, dl_da):
    """Gradient wrt the actor's raw output for a loss L(log_prob, action).

    ``dl_dlogp`` has shape (B,), ``dl_da`` (B, action_dim). eps is held fixed.
    """
    a, std, eps = sample.action, sample.std, sample.eps
    dlogp = dl_dlogp[:, None]
    one_m_a2 = 1.0 - a * a
    d_mean = dlogp * 2.0 * a + dl_da * one_m_a2
    d_logstd = dlogp * (-1.0 + 2.0 * a * std * eps) + dl_da * one_m_a2 * std * eps
    t = np.tanh(sample.ls_raw)
    d_raw = d_logstd * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t)
    return np.concatenate([d_mean, d_raw], axis=1)


def critic_target(r, done, next_q1, next_q2, next_log_prob, alpha, discount):
    """y = r + discount * (1 - done) * (min(Q1', Q2') - alpha * log pi(a'|s'))."""
    next_q = np.minimum(next_q1, next_q2)
    assert np.all(next_q <= next_q1) and np.all(next_q <= next_q2)
    return r + discount * (1.0 - done) * (next_q - alpha * next_log_prob)


def polyak_update(target: Mlp, online: Mlp, tau):
    for pt, p in zip(target.params(), online.params()):
        pt *= 1.0 - tau
        pt += tau * p


@dataclass
class SacAgent:
    config: SacConfig
    obs_dim: int
    action_dim: int
    actor: Mlp
    q1: Mlp
    q2: Mlp
    q1_target: Mlp
    q2_target: Mlp
    log_alpha: np.ndarray
    actor_opt: AdamState
    q1_opt: AdamState
    q2_opt: AdamState
    alpha_opt: AdamState
    updates: int = 0
    target_entropy: float = field(init=False)

    def __post_init__(self):
        self.target_entropy = -float(self.action_dim)

    @classmethod
    def create(cls, config: SacConfig, obs_dim, action_dim, rng=None) -> "SacAgent":
        if config.critic.input_dim != obs_dim + action_dim:
            raise ValueError(
                f"critic input_dim {config.critic.input_dim} != obs_dim + action_dim = {obs_dim + action_dim}"
            )
        rng = rng if rng is not None else substream(config.seed, "init")
        actor = build_actor(obs_dim, action_dim, config.actor_hidden, rng)
        q1 = build_critic(config.critic, rng)
        q2 = build_critic(config.critic, rng)
        log_alpha = np.array([math.log(config.initial_temperature)])
        return cls(
            config, obs_dim, action_dim, actor, q1, q2, q1.copy(), q2.copy(), log_alpha,
            AdamState.for_params(actor.params(), lr=config.actor_lr),
            AdamState.for_params(q1.params(), lr=config.critic_lr),
            AdamState.for_params(q2.params(), lr=config.critic_lr),
            AdamState.for_params([log_alpha], lr=config.temperature_lr),
        )

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def act(self, obs, rng):
        return sample_action(self.actor, np.atleast_2d(obs), rng).action[0]

    def act_deterministic(self, obs):
        return deterministic_action(self.actor, obs)[0]

    def beta_hat(self) -> float:
        return estimate_beta(self.q1.layers[0], self.config.critic.input_dim).beta_hat


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class StepLosses:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    alpha: float
    entropy: float


def train_step(agent: SacAgent, buffer: ReplayBuffer, rng) -> StepLosses:
    """One critic, actor and temperature update, then the periodic target sync."""
    cfg = agent.config
    s, a, r, s2, done = buffer.sample(rng, cfg.batch_size)
    n = len(r)
    alpha = agent.alpha

    # critic
    nxt = sample_action(agent.actor, s2, rng)
    x2 = np.concatenate([s2, nxt.action], axis=1)
    tq1 = agent.q1_target(x2)[:, 0]
    tq2 = agent.q2_target(x2)[:, 0]
    y = critic_target(r, done, tq1, tq2, nxt.log_prob, alpha, cfg.discount)
    x = np.concatenate([s, a], axis=1)
    c1 = agent.q1.forward(x)
    c2 = agent.q2.forward(x)
    e1 = c1.output[:, 0] - y
    e2 = c2.output[:, 0] - y
    critic_loss = float(np.mean(e1 * e1) + np.mean(e2 * e2))
    g1, _ = agent.q1.backward(c1, (2.0 / n * e1)[:, None])
    g2, _ = agent.q2.backward(c2, (2.0 / n * e2)[:, None])
    adam_step(agent.q1.params(), g1, agent.q1_opt, cfg.weight_decay)
    adam_step(agent.q2.params(), g2, agent.q2_opt, cfg.weight_decay)

    # actor: minimise alpha * log pi - min(Q1, Q2)
    pi = sample_action(agent.actor, s, rng)
    xa = np.concatenate([s, pi.action], axis=1)
    a1 = agent.q1.forward(xa)
    a2 = agent.q2.forward(xa)
    qa1, qa2 = a1.output[:, 0], a2.output[:, 0]
    use1 = qa1 <= qa2
    qmin = np.where(use1, qa1, qa2)
    actor_loss = float(np.mean(alpha * pi.log_prob - qmin))
    dq1 = np.where(use1, -1.0 / n, 0.0)[:, None]
    dq2 = np.where(use1, 0.0, -1.0 / n)[:, None]
    _, gx1 = agent.q1.backward(a1, dq1, param_grads=False)
    _, gx2 = agent.q2.backward(a2, dq2, param_grads=False)
    dl_da = (gx1 + gx2)[:, agent.obs_dim :]
    dout = policy_output_grad(pi, np.full(n, alpha / n), dl_da)
    ga, _ = agent.actor.backward(pi.cache, dout)
    adam_step(agent.actor.params(), ga, agent.actor_opt)

    # temperature: alpha * (entropy - target_entropy)
    entropy = float(-np.mean(pi.log_prob))
    alpha_loss = alpha * (entropy - agent.target_entropy)
    adam_step([agent.log_alpha], [np.array([alpha_loss])], agent.alpha_opt)

    agent.updates += 1
    if agent.updates % cfg.target_update_period == 0:
        polyak_update(agent.q1_target, agent.q1, cfg.tau)
        polyak_update(agent.q2_target, agent.q2, cfg.tau)

    if not (math.isfinite(critic_loss) and math.isfinite(actor_loss) and math.isfinite(alpha_loss)):
        raise TrainingDivergence(
            f"non-finite loss at update {agent.updates}: critic={critic_loss} actor={actor_loss} alpha={alpha_loss}"
        )
    return StepLosses(critic_loss, actor_loss, alpha_loss, alpha, entropy)


def evaluate(agent: SacAgent, env: Env, sigma=0.0, episodes=10, seed=0):
    """Mean and std return of the deterministic policy tanh(mean) under obs noise sigma."""
    returns = rollout_return(env, agent.act_deterministic, sigma, episodes, seed)
    return float(returns.mean()), float(returns.std())


@dataclass
class EpisodeLog:
    step: int
    episode_return: float
    critic_loss: float
    actor_loss: float
    alpha: float
    beta_hat: float


@dataclass
class EvalLog:
    step: int
    level: str
    sigma: float
    mean_return: float
    std_return: float


@dataclass
class RunResult:
    agent: SacAgent
    buffer: ReplayBuffer
    episodes: list[EpisodeLog]
    evals: list[EvalLog]


def train(env: Env, config: SacConfig, total_steps, eval_every=10_000, eval_episodes=10,
          noise_levels=None, on_eval=None) -> RunResult:
    """Run SAC for ``total_steps`` environment steps.

    Exploration is uniform-random for the first ``warmup_steps`` steps, after
    which one gradient update follows every environment step. Every
    ``eval_every`` steps the deterministic policy is evaluated at sigma = 0
    and each level in ``noise_levels`` (a {name: sigma} mapping), and
    ``on_eval(step, agent, buffer)`` is called.
    """
    seed = config.seed
    env_rng = substream(seed, "env")
    explore_rng = substream(seed, "policy")
    sampler_rng = substream(seed, "sampler")
    agent = SacAgent.create(config, env.obs_dim, env.action_dim, substream(seed, "init"))
    buffer = ReplayBuffer(env.obs_dim, env.action_dim, config.buffer_capacity)
    levels = {"none": 0.0}
    levels.update(noise_levels or {})

    episodes, evals = [], []
    obs = env.reset(env_rng)
    ep_return = 0.0
    last = None
    for step in range(1, total_steps + 1):
        if step <= config.warmup_steps:
            action = explore_rng.uniform(-1.0, 1.0, size=env.action_dim)
        else:
            action = agent.act(obs, explore_rng)
        res = env.step(action)
        terminal = res.done and not res.truncated
        buffer.add(obs, action, res.reward, res.observation, terminal)
        ep_return += res.reward
        obs = res.observation
        if res.done:
            episodes.append(EpisodeLog(
                step, ep_return,
                last.critic_loss if last else float("nan"),
                last.actor_loss if last else float("nan"),
                agent.alpha, agent.beta_hat(),
            ))
            obs = env.reset(env_rng)
            ep_return = 0.0
        if step >= config.warmup_steps and len(buffer) >= config.batch_size:
            last = train_step(agent, buffer, sampler_rng)
        if eval_every and step % eval_every == 0:
            eval_env = make_env(env.name)
            for name, sigma in levels.items():
                m, sd = evaluate(agent, eval_env, sigma, eval_episodes, seed=seed + 7919 * step)
                evals.append(EvalLog(step, name, sigma, m, sd))
            if on_eval is not None:
                on_eval(step, agent, buffer)
    return RunResult(agent, buffer, episodes, evals)


@dataclass
class SweepRow:
    beta: float
    seed: int
    early_return: float
    beta_hat: float
    error: str = ""


def sweep_beta(env_name, betas, config: SacConfig, seeds=(0,), total_steps=100_000,
               eval_step=None, eval_episodes=10) -> list[SweepRow]:
    """Train one agent per (beta, seed); record the return at ``eval_step`` and the final beta_hat.

    A failing cell is recorded with its error and the sweep carries on.
    """
    if len(betas) == 0:
        raise ValueError("beta grid is empty")
    eval_step = eval_step or total_steps
    rows = []
    for beta in betas:
        for seed in seeds:
            spec = replace(config.critic, beta=float(beta))
            cfg = replace(config, critic=spec, seed=int(seed))
            env = make_env(env_name)
            early = {}

            def grab(step, agent, _buf, early=early):
                if step == eval_step:
                    early["ret"] = evaluate(agent, make_env(env_name), 0.0, eval_episodes, seed=seed)[0]

            try:
                run = train(env, cfg, total_steps, eval_every=eval_step, eval_episodes=eval_episodes,
                            on_eval=grab)
                rows.append(SweepRow(float(beta), int(seed), early.get("ret", float("nan")),
                                     run.agent.beta_hat()))
            except Exception as exc:  # per-cell failure is recorded, sweep continues
                log.warning("sweep cell beta=%g seed=%d failed: %s", beta, seed, exc)
                rows.append(SweepRow(float(beta), int(seed), float("nan"), float("nan"), repr(exc)))
    return rows
