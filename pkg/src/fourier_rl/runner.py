"""Experiment orchestration behind the CLI subcommands."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from .config import ExperimentConfig
from .diagnostics import REPORT_COLUMNS, diagnose
from .dp import Grid, checkerboard_split, downsample, fit_supervised, value_iteration
from .envs import LEVELS, make_env, tune_noise_levels
from .fourier import LFF, RELU_VARIANT, FourierSpec
from .sac import (
    EvalLog, ReplayBuffer, SacAgent, SacConfig, TrainingDivergence, evaluate, substream, sweep_beta,
    train,
)

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("step", "return", "critic_loss", "actor_loss", "alpha", "beta_hat")
EVAL_COLUMNS = ("step", "sigma_level", "mean_return", "std_return", "sigma")
DIAG_COLUMNS = ("step",) + REPORT_COLUMNS
HIST_COLUMNS = ("bin_left", "bin_right", "count")
SWEEP_COLUMNS = ("beta_init", "beta_final_mean", "beta_final_std", "return_mean", "return_std", "n_ok")
SWEEP_RUN_COLUMNS = ("beta_init", "seed", "return", "beta_final", "error")
FIT_COLUMNS = ("step", "train_mse", "test_mse", "arch")
AGG_COLUMNS = ("step", "sigma_level", "mean_return_mean", "mean_return_std", "seeds")


class RunFailure(RuntimeError):
    """A run died mid-way; its manifest has been marked partial."""


def out_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get("FP_OUT_DIR") or cfg["run"]["out_dir"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, columns, rows):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in columns]
            w.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_json_atomic(path, obj):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def artifact_version() -> str:
    src = Path(__file__).parent
    h = hashlib.sha1()
    for p in sorted(src.glob("*.py")):
        h.update(p.read_bytes())
    return f"{__version__}-g{h.hexdigest()[:7]}"


class Manifest:
    """manifest.json, rewritten atomically at the start and the end of a run."""

    def __init__(self, run_dir: Path, cfg: ExperimentConfig, seed, command):
        self.path = Path(run_dir) / "manifest.json"
        self.started = time.time()
        self.data = {
            "command": command,
            "config_hash": cfg.digest(),
            "seed": seed,
            "version": artifact_version(),
            "started_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "status": "running",
            "files": [],
        }
        _write_json_atomic(self.path, self.data)

    def finish(self, status, error=None):
        run_dir = self.path.parent
        files = []
        for p in sorted(run_dir.rglob("*")):
            if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
                files.append({
                    "path": str(p.relative_to(run_dir)),
                    "bytes": p.stat().st_size,
                    "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                })
        self.data.update(
            status=status,
            finished_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
            wall_seconds=round(time.time() - self.started, 3),
            files=files,
        )
        if error:
            self.data["error"] = error
        _write_json_atomic(self.path, self.data)


# ---------------------------------------------------------------- checkpoints

def agent_tensors(agent: SacAgent, step=0) -> dict:
    t = {
        "meta.obs_dim": np.array(float(agent.obs_dim)),
        "meta.action_dim": np.array(float(agent.action_dim)),
        "meta.step": np.array(float(step)),
        "meta.beta_init": np.array(agent.config.critic.beta),
        "log_alpha": agent.log_alpha,
    }
    t.update(ckpt.mlp_tensors(agent.actor, "actor"))
    for name in ("q1", "q2", "q1_target", "q2_target"):
        t.update(ckpt.mlp_tensors(getattr(agent, name), name))
    return t


def replay_tensors(buffer: ReplayBuffer) -> dict:
    n = len(buffer)
    return {
        "replay.obs": buffer.obs[:n],
        "replay.actions": buffer.actions[:n],
        "replay.rewards": buffer.rewards[:n],
        "replay.next_obs": buffer.next_obs[:n],
        "replay.dones": buffer.dones[:n],
    }


def sac_config(cfg: ExperimentConfig, seed, env=None, **overrides) -> SacConfig:
    env = env or make_env(cfg["env"]["name"])
    four, sac = cfg["fourier"], cfg["sac"]
    spec = FourierSpec(
        four["variant"], four["beta"], env.obs_dim + env.action_dim,
        four["width_multiplier"], four["hidden_widths"],
    )
    kw = dict(sac)
    kw.update(overrides)
    return SacConfig(critic=spec, seed=seed, **kw)


def _diag_rows(step, agent, buffer, cfg, run_dir, sigma):
    d = cfg["diagnostics"]
    rng = substream(agent.config.seed, f"diagnostics-{step}")
    s, a, *_ = buffer.sample(rng, min(d["batch_size"], len(buffer)))
    batch = np.concatenate([s, a], axis=1)
    rep = diagnose(agent.q1, batch, sigma, rng, noise_columns=slice(0, agent.obs_dim),
                   bins=d["bins"], delta=d["delta"])
    h = rep.histogram
    write_csv(run_dir / f"freq_hist_{step}.csv", HIST_COLUMNS,
              [(float(lo), float(hi), int(c)) for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts)])
    return {"step": step, **rep.row()}


def train_one_seed(cfg: ExperimentConfig, seed, run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    manifest = Manifest(run_dir, cfg, seed, "train")
    env = make_env(cfg["env"]["name"])
    sc = sac_config(cfg, seed + cfg["env"]["seed"], env)
    levels = cfg.noise_levels
    diag_sigma = levels.get(cfg["diagnostics"]["noise_level"], 0.0)
    diag_rows = []
    state = {}

    def on_eval(step, agent, buffer):
        state["agent"], state["step"] = agent, step
        diag_rows.append(_diag_rows(step, agent, buffer, cfg, run_dir, diag_sigma))
        ckpt.save(run_dir / "checkpoints" / f"step_{step}.fpc1", agent_tensors(agent, step))

    run_cfg = cfg["run"]
    try:
        result = train(env, sc, run_cfg["total_steps"], eval_every=run_cfg["eval_every"],
                       eval_episodes=run_cfg["eval_episodes"], noise_levels=levels, on_eval=on_eval)
    except TrainingDivergence as exc:
        if "agent" in state:
            ckpt.save(run_dir / "checkpoints" / "diverged.fpc1", agent_tensors(state["agent"], state["step"]))
        manifest.finish("partial", repr(exc))
        raise RunFailure(f"seed {seed}: {exc}") from exc
    except Exception as exc:
        manifest.finish("partial", repr(exc))
        raise RunFailure(f"seed {seed}: {exc}") from exc

    if not result.evals or result.evals[-1].step != run_cfg["total_steps"]:
        on_eval(run_cfg["total_steps"], result.agent, result.buffer)
        eval_env = make_env(env.name)
        step = run_cfg["total_steps"]
        for name, sigma in {"none": 0.0, **levels}.items():
            m, sd = evaluate(result.agent, eval_env, sigma, run_cfg["eval_episodes"], seed=sc.seed + 7919 * step)
            result.evals.append(EvalLog(step, name, sigma, m, sd))
    write_csv(run_dir / "train_log.csv", TRAIN_LOG_COLUMNS,
              [(e.step, e.episode_return, e.critic_loss, e.actor_loss, e.alpha, e.beta_hat) for e in result.episodes])
    write_csv(run_dir / "eval_noise.csv", EVAL_COLUMNS,
              [(e.step, e.level, e.mean_return, e.std_return, e.sigma) for e in result.evals])
    write_csv(run_dir / "diagnostics.csv", DIAG_COLUMNS, diag_rows)
    ckpt.save(run_dir / "replay.fpc1", replay_tensors(result.buffer))
    manifest.finish("complete")
    return result


def aggregate_evals(seed_dirs, out_path):
    groups: dict[tuple, list[float]] = {}
    order = []
    for d in seed_dirs:
        for row in read_csv(Path(d) / "eval_noise.csv"):
            key = (int(row["step"]), row["sigma_level"])
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(float(row["mean_return"]))
    rows = []
    for key in sorted(order, key=lambda k: (k[0], order.index(k))):
        vals = np.array(groups[key])
        rows.append((key[0], key[1], float(vals.mean()), float(vals.std()), len(vals)))
    write_csv(out_path, AGG_COLUMNS, rows)


def cmd_train(cfg: ExperimentConfig) -> Path:
    root = out_root(cfg) / f"train-{cfg.digest()[:10]}"
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(cfg.to_ini())
    seed_dirs = []
    for seed in cfg["run"]["seeds"]:
        d = root / f"seed_{seed}"
        train_one_seed(cfg, seed, d)
        seed_dirs.append(d)
    aggregate_evals(seed_dirs, root / "aggregate_eval.csv")
    return root


def cmd_sweep_beta(cfg: ExperimentConfig) -> Path:
    root = out_root(cfg) / f"sweep-{cfg.digest()[:10]}"
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(cfg.to_ini())
    manifest = Manifest(root, cfg, list(cfg["run"]["seeds"]), "sweep-beta")
    env_name = cfg["env"]["name"]
    base = sac_config(cfg, 0)
    rows = sweep_beta(env_name, cfg["fourier"]["betas"], base, seeds=cfg["run"]["seeds"],
                      total_steps=cfg["run"]["total_steps"], eval_step=cfg["run"]["eval_every"] or None,
                      eval_episodes=cfg["run"]["eval_episodes"])
    write_csv(root / "beta_sweep_runs.csv", SWEEP_RUN_COLUMNS,
              [(r.beta, r.seed, r.early_return, r.beta_hat, r.error) for r in rows])
    write_csv(root / "beta_sweep.csv", SWEEP_COLUMNS, collapse_sweep(rows))
    manifest.finish("complete" if all(not r.error for r in rows) else "partial")
    return root


def collapse_sweep(rows):
    out = []
    for beta in dict.fromkeys(r.beta for r in rows):
        ok = [r for r in rows if r.beta == beta and not r.error]
        bh = np.array([r.beta_hat for r in ok])
        ret = np.array([r.early_return for r in ok])
        if ok:
            out.append((beta, float(bh.mean()), float(bh.std()), float(ret.mean()), float(ret.std()), len(ok)))
        else:
            out.append((beta, math.nan, math.nan, math.nan, math.nan, 0))
    return out


def cmd_dp_fit(cfg: ExperimentConfig) -> Path:
    dp = cfg["dp"]
    root = out_root(cfg) / f"dpfit-{cfg.digest()[:10]}"
    root.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(root, cfg, dp["seed"], "dp-fit")
    grid = Grid(dp["grid"], dp["grid"])
    table = value_iteration(grid, dp["gamma"])
    write_csv(root / "dp_values.csv", ("x", "v", "value"), _surface_rows(grid, table.values))
    fit_table = downsample(table, dp["downsample"])
    block = max(1, dp["block"] // dp["downsample"])
    split = checkerboard_split(fit_table.grid, block)
    write_csv(root / "split.csv", ("x", "v", "train"),
              _surface_rows(fit_table.grid, split.train.astype(int)))
    curves = []
    for arch in (RELU_VARIANT, LFF):
        spec = FourierSpec(arch, dp["beta"], 2)
        res = fit_supervised(spec, fit_table, split, substream(dp["seed"], "init"),
                             steps=dp["steps"], lr=dp["lr"], width=dp["width"], log_every=dp["log_every"])
        curves += [(int(s), float(a), float(b), arch) for s, a, b in zip(res.steps, res.train_mse, res.test_mse)]
        write_csv(root / f"surface_{arch}.csv", ("x", "v", "value"), _surface_rows(fit_table.grid, res.surface))
    write_csv(root / "fit_curve.csv", FIT_COLUMNS, curves)
    manifest.finish("complete")
    return root


def _surface_rows(grid: Grid, values):
    xs, vs = grid.x_centers, grid.v_centers
    for i, x in enumerate(xs):
        for j, v in enumerate(vs):
            val = values[i, j]
            yield (float(x), float(v), val.item() if hasattr(val, "item") else val)


def load_agent_nets(path):
    t = ckpt.load(path)
    return {
        "obs_dim": int(t["meta.obs_dim"]),
        "action_dim": int(t["meta.action_dim"]),
        "step": int(t["meta.step"]),
        "actor": ckpt.mlp_from_tensors(t, "actor"),
        "q1": ckpt.mlp_from_tensors(t, "q1"),
    }


def cmd_diagnose(checkpoint_path, replay_path, sigma, out_dir, batch_size=256, bins=20,
                 delta=0.01, seed=0) -> Path:
    nets = load_agent_nets(checkpoint_path)
    rep = ckpt.load(replay_path)
    obs, act = rep["replay.obs"], rep["replay.actions"]
    if len(obs) == 0:
        raise ValueError("replay file holds no transitions")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(obs), size=min(batch_size, len(obs)), replace=False)
    batch = np.concatenate([obs[idx], act[idx]], axis=1)
    report = diagnose(nets["q1"], batch, sigma, rng, noise_columns=slice(0, nets["obs_dim"]),
                      bins=bins, delta=delta)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "diagnostics.csv", DIAG_COLUMNS, [{"step": nets["step"], **report.row()}])
    h = report.histogram
    write_csv(out_dir / f"freq_hist_{nets['step']}.csv", HIST_COLUMNS,
              [(float(lo), float(hi), int(c)) for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts)])
    return out_dir


def cmd_eval_noise(cfg: ExperimentConfig, checkpoint_path, out_dir, tune=False, seed=0) -> Path:
    """Evaluate a checkpointed actor at sigma = 0 and the configured levels (or tune new levels)."""
    from .sac import deterministic_action

    nets = load_agent_nets(checkpoint_path)
    actor = nets["actor"]
    env = make_env(cfg["env"]["name"])
    policy = lambda obs: deterministic_action(actor, obs)[0]  # noqa: E731
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if tune:
        spec = tune_noise_levels(env, [policy], episodes=cfg["run"]["eval_episodes"], seed=seed)
        write_csv(out_dir / "noise_levels.csv", ("level", "sigma", "flag"),
                  [(k, spec.levels[k], spec.flags.get(k, "")) for k in LEVELS])
        return out_dir
    from .envs import rollout_return

    rows = []
    for name, sigma in {"none": 0.0, **cfg.noise_levels}.items():
        r = rollout_return(env, policy, sigma, cfg["run"]["eval_episodes"], seed)
        rows.append((nets["step"], name, float(r.mean()), float(r.std()), float(sigma)))
    write_csv(out_dir / "eval_noise.csv", EVAL_COLUMNS, rows)
    return out_dir
