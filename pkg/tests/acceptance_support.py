"""Shared protocol and on-disk cache for the long SAC runs behind the acceptance checks.

Each run is keyed by its SacConfig, step count and a hash of the modules
that determine training numerics, so edits to that code invalidate the
cache. Set FP_ACCEPTANCE_FRESH=1 to ignore cached runs.

Run ``python3 tests/acceptance_support.py`` to precompute every run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from fourier_rl import checkpoint as ckpt
from fourier_rl.envs import make_env, tune_noise_levels
from fourier_rl.fourier import LFF, RELU_VARIANT, FourierSpec
from fourier_rl.runner import agent_tensors
from fourier_rl.sac import SacConfig, deterministic_action, train

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("FP_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))
NOISE_FIXTURE = Path(__file__).parent / "data" / "pendulum_noise_levels.json"
NUMERIC_MODULES = ("nn.py", "fourier.py", "envs.py", "sac.py")

ENV = "pendulum"
HIDDEN = (64, 64)
BATCH = 128
REPLAY_SAMPLE = 2048

FREQ_BETAS = (0.003, 0.03, 0.3)
FREQ_SEEDS = (0, 1, 2)
FREQ_STEPS = 100_000

EXPR_SEEDS = (0, 1, 2, 3, 4)
EXPR_STEPS = 30_000
EXPR_BETA = 0.03
DECAY = 0.1


def sac_config(variant, beta, seed, steps, weight_decay=0.0):
    env = make_env(ENV)
    spec = FourierSpec(variant, beta, env.obs_dim + env.action_dim, hidden_widths=HIDDEN)
    return SacConfig(spec, batch_size=BATCH, warmup_steps=min(10_000, steps // 5), actor_hidden=HIDDEN,
                     weight_decay=weight_decay, seed=seed)


def code_hash():
    src = ROOT / "src" / "fourier_rl"
    h = hashlib.sha256()
    for name in NUMERIC_MODULES:
        h.update((src / name).read_bytes())
    return h.hexdigest()[:12]


def run_key(cfg: SacConfig, steps):
    blob = json.dumps({"cfg": dataclasses.asdict(cfg), "steps": steps, "env": ENV}, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16] + "-" + code_hash()


def run_or_load(cfg: SacConfig, steps, log=print):
    """Return (meta, tensors) for a trained agent: checkpoint tensors plus a replay sample."""
    d = CACHE / run_key(cfg, steps)
    meta_path, tensor_path = d / "meta.json", d / "agent.fpc1"
    fresh = os.environ.get("FP_ACCEPTANCE_FRESH") == "1"
    if not fresh and meta_path.exists() and tensor_path.exists():
        return json.loads(meta_path.read_text()), ckpt.load(tensor_path)
    d.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    log(f"training {cfg.critic.variant} beta={cfg.critic.beta} wd={cfg.weight_decay} seed={cfg.seed} "
        f"for {steps} steps")
    run = train(make_env(ENV), cfg, steps, eval_every=steps, eval_episodes=5)
    rng = np.random.default_rng([cfg.seed, 99])
    n = len(run.buffer)
    idx = rng.choice(n, size=min(REPLAY_SAMPLE, n), replace=False)
    tensors = agent_tensors(run.agent, steps)
    tensors["replay.obs"] = run.buffer.obs[idx]
    tensors["replay.actions"] = run.buffer.actions[idx]
    final = [e for e in run.evals if e.level == "none"][-1]
    meta = {
        "variant": cfg.critic.variant, "beta_init": cfg.critic.beta, "weight_decay": cfg.weight_decay,
        "seed": cfg.seed, "steps": steps, "beta_hat": run.agent.beta_hat(),
        "final_return": final.mean_return, "seconds": round(time.time() - t0, 1),
    }
    ckpt.save(tensor_path, tensors)
    meta_path.write_text(json.dumps(meta, indent=1))
    return meta, tensors


def frequency_runs(log=print):
    return {(b, s): run_or_load(sac_config(LFF, b, s, FREQ_STEPS), FREQ_STEPS, log)
            for b in FREQ_BETAS for s in FREQ_SEEDS}


def expressivity_runs(log=print):
    out = {}
    for s in EXPR_SEEDS:
        out[("relu", s)] = run_or_load(sac_config(RELU_VARIANT, EXPR_BETA, s, EXPR_STEPS), EXPR_STEPS, log)
        out[("lff", s)] = run_or_load(sac_config(LFF, EXPR_BETA, s, EXPR_STEPS), EXPR_STEPS, log)
        out[("lff_wd", s)] = run_or_load(sac_config(LFF, EXPR_BETA, s, EXPR_STEPS, DECAY), EXPR_STEPS, log)
    return out


def pendulum_noise_levels(runs, log=print):
    """Tuned low/medium/high levels, frozen to a fixture the first time they are produced."""
    if NOISE_FIXTURE.exists():
        return json.loads(NOISE_FIXTURE.read_text())
    env = make_env(ENV)
    policies = []
    for (kind, _), (_, t) in sorted(runs.items()):
        if kind in ("relu", "lff"):
            actor = ckpt.mlp_from_tensors(t, "actor")
            policies.append(lambda obs, actor=actor: deterministic_action(actor, obs)[0])
    log(f"tuning noise levels over {len(policies)} policies")
    spec = tune_noise_levels(env, policies, episodes=5, seed=0)
    data = {"levels": spec.levels, "flags": spec.flags, "policies": len(policies), "episodes": 5}
    NOISE_FIXTURE.parent.mkdir(parents=True, exist_ok=True)
    NOISE_FIXTURE.write_text(json.dumps(data, indent=1) + "\n")
    return data


if __name__ == "__main__":
    which = sys.argv[1:] or ["freq", "expr"]
    if "expr" in which:
        pendulum_noise_levels(expressivity_runs())
    if "freq" in which:
        frequency_runs()
