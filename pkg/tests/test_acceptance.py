"""Acceptance checks, one test per criterion; each prints a single pass/fail line.

The SAC-based checks (8-10) train agents once and cache them on disk; see
acceptance_support.py.
"""

import math
import time

import numpy as np
import pytest

import acceptance_support as A
from criteria_log import record
from fourier_rl import checkpoint as ckpt
from fourier_rl.config import parse_config
from fourier_rl.diagnostics import cycle_histogram, diagnose, effective_rank, histogram_overlap, representation_frequency
from fourier_rl.dp import Grid, checkerboard_split, downsample, fit_supervised, value_iteration
from fourier_rl.fourier import CLFF, LFF, RELU_VARIANT, FourierSpec, build_critic, build_lff_layer, li_sigma_to_beta
from fourier_rl.nn import COS, IDENTITY, RELU, SIN, Mlp, dense_layer, grad_check, mse_loss
from fourier_rl.runner import cmd_train
from fourier_rl.sac import substream


def test_criterion_01_gradients():
    worst, t0 = 0.0, time.time()
    for i in range(20):
        rng = np.random.default_rng(1000 + i)
        kind = (RELU, SIN, COS, CLFF)[i % 4]
        d = int(rng.integers(2, 6))
        if kind == CLFF:
            spec = FourierSpec(CLFF, float(rng.uniform(0.1, 2.0)), d, width_multiplier=4, hidden_widths=(8, 6))
            net = build_critic(spec, rng)
        else:
            dims = [d, int(rng.integers(3, 9)), int(rng.integers(3, 9)), 1]
            layers = [dense_layer(rng, a, b, act) for a, b, act in zip(dims[:-1], dims[1:], (kind, kind, IDENTITY))]
            for layer in layers:
                layer.weights *= 2.0
            net = Mlp(layers)
        x = rng.normal(size=(6, d))
        worst = max(worst, grad_check(net, x, mse_loss(rng.normal(size=(6, 1)))).max_rel_error)
    dt = time.time() - t0
    ok = worst < 1e-4 and dt < 60
    record(1, ok, f"max relative error {worst:.2e} over 20 nets (< 1e-4), {dt:.1f}s")
    assert ok


def test_criterion_02_initialization():
    spec = FourierSpec(LFF, 0.05, 30, width_multiplier=1112)
    layer = build_lff_layer(spec, np.random.default_rng(0))
    target = math.pi * 0.05 / 30
    rel = abs(layer.weights.std() - target) / target
    b = layer.biases
    # uniformity: range inside [-pi, pi] and decile occupancy within 5% of flat
    counts, _ = np.histogram(b, bins=10, range=(-math.pi, math.pi))
    flat = len(b) / 10
    uniform = b.min() >= -math.pi and b.max() <= math.pi and np.all(np.abs(counts - flat) < 0.05 * flat)
    ok = layer.weights.size >= 10**6 and rel < 0.01 and uniform
    record(2, ok, f"{layer.weights.size} weights, std off by {100 * rel:.3f}% (< 1%), bias range/deciles ok={uniform}")
    assert ok


def test_criterion_03_conversion():
    got = li_sigma_to_beta(0.05, 30)
    ok = got == 3
    record(3, ok, f"li_sigma_to_beta(0.05, 30) = {got!r}")
    assert ok


def brute_frequency(W, X):
    out = []
    for row in W:
        proj = [sum(w * x for w, x in zip(row, xr)) for xr in X]
        out.append((max(proj) - min(proj)) / (2 * math.pi))
    return np.array(out)


def test_criterion_04_frequency_oracle():
    rng = np.random.default_rng(4)
    worst, scale_ok = 0.0, True
    for _ in range(100):
        n, d = (int(v) for v in rng.integers(1, 12, size=2))
        rows = int(rng.integers(1, 40))
        W = rng.normal(scale=rng.uniform(0.1, 5), size=(n, d))
        X = rng.normal(size=(rows, d))
        f = representation_frequency(W, X)
        worst = max(worst, float(np.max(np.abs(f - brute_frequency(W, X)))))
        for k in (0.5, 2.0, 8.0):
            scale_ok &= bool(np.array_equal(representation_frequency(k * W, X), k * f))
    ok = worst <= 1e-12 and scale_ok
    record(4, ok, f"max |f - brute force| = {worst:.1e} (<= 1e-12) on 100 instances; k-scaling exact={scale_ok}")
    assert ok


def gram_srank(F, delta=0.01):
    F = np.asarray(F, dtype=float)
    G = F.T @ F if F.shape[0] >= F.shape[1] else F @ F.T
    s = np.sqrt(np.clip(np.linalg.eigvalsh(G), 0, None))[::-1]
    cum = np.cumsum(s) / s.sum()
    return int(np.argmax(cum >= 1 - delta - 1e-12) + 1)


def test_criterion_05_srank_oracle():
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(100):
        r, c = (int(v) for v in rng.integers(1, 65, size=2))
        k = min(r, c)
        spectrum = np.exp(-rng.uniform(0, 8) * np.linspace(0, 1, k))
        U, _ = np.linalg.qr(rng.normal(size=(r, k)))
        V, _ = np.linalg.qr(rng.normal(size=(c, k)))
        F = (U * spectrum) @ V.T
        mismatches += effective_rank(F)[0] != gram_srank(F)
    ident = effective_rank(np.eye(17))[0] == 17
    rank1 = effective_rank(np.outer(rng.normal(size=30), rng.normal(size=20)))[0] == 1
    ok = mismatches == 0 and ident and rank1
    record(5, ok, f"{mismatches}/100 mismatches vs Gram-eigen oracle; identity exact={ident}, rank-1 exact={rank1}")
    assert ok


@pytest.fixture(scope="module")
def dp_table():
    t0 = time.time()
    table = value_iteration(Grid(200, 200), 0.99)
    return table, time.time() - t0


def test_criterion_06_value_iteration(dp_table):
    table, dt = dp_table
    r = table.residuals
    monotone = bool(np.all(np.diff(r) <= 0))
    term = table.grid.x_centers >= 0.5
    zeros = bool(np.all(table.values[term] == 0))
    rest = table.values[~term]
    bounded = bool(rest.max() <= -1 and rest.min() >= -1 / (1 - 0.99))
    ok = monotone and r[-1] < 1e-6 and dt < 120 and zeros and bounded
    record(6, ok, f"{len(r)} sweeps, final residual {r[-1]:.1e}, {dt:.1f}s, monotone={monotone}, "
                  f"terminal zeros={zeros}, bounds={bounded}")
    assert ok


WARMUP_STEPS = 1600
WARMUP_DOWNSAMPLE = 5


def test_criterion_07_supervised_warmup(dp_table):
    table, _ = dp_table
    coarse = downsample(table, WARMUP_DOWNSAMPLE)
    split = checkerboard_split(coarse.grid, 25 // WARMUP_DOWNSAMPLE)
    t0 = time.time()
    wins, details = 0, []
    for seed in range(5):
        res = {}
        for arch in (RELU_VARIANT, LFF):
            spec = FourierSpec(arch, 10 / math.pi, 2)
            res[arch] = fit_supervised(spec, coarse, split, substream(seed, "init"), steps=WARMUP_STEPS,
                                       lr=1e-4, width=400, log_every=WARMUP_STEPS)
        relu, sin = res[RELU_VARIANT], res[LFF]
        good = sin.test_mse[-1] > relu.test_mse[-1] and sin.train_mse[-1] <= relu.train_mse[-1]
        wins += good
        details.append(f"s{seed}: sin {sin.train_mse[-1]:.2f}/{sin.test_mse[-1]:.2f} "
                       f"relu {relu.train_mse[-1]:.2f}/{relu.test_mse[-1]:.2f}")
    dt = time.time() - t0
    ok = wins == 5 and dt < 15 * 60
    record(7, ok, f"{wins}/5 seeds with sin train <= relu train and sin test > relu test, {dt / 60:.1f} min "
                  f"[train/test MSE: {'; '.join(details)}]")
    assert ok


@pytest.fixture(scope="module")
def freq_runs():
    return A.frequency_runs()


def test_criterion_08_frequency_convergence(freq_runs):
    finals = {b: [freq_runs[(b, s)][0]["beta_hat"] for s in A.FREQ_SEEDS] for b in A.FREQ_BETAS}
    init_spread = math.log10(max(A.FREQ_BETAS)) - math.log10(min(A.FREQ_BETAS))
    centres = [float(np.mean(np.log10(v))) for v in finals.values()]
    spread = max(centres) - min(centres)
    every = np.log10([x for v in finals.values() for x in v])
    all_spread = float(every.max() - every.min())
    grew = all(x > b for b, v in finals.items() for x in v)
    # similarity of the cycle histograms at the two extreme initialisations
    lo, hi = min(A.FREQ_BETAS), max(A.FREQ_BETAS)
    t_lo, t_hi = freq_runs[(lo, 0)][1], freq_runs[(hi, 0)][1]
    batch = np.concatenate([np.concatenate([t["replay.obs"][:128], t["replay.actions"][:128]], axis=1)
                            for t in (t_lo, t_hi)])
    W_lo, W_hi = (ckpt.mlp_from_tensors(t, "q1").layers[0].weights for t in (t_lo, t_hi))
    f_max = float(max(representation_frequency(W_lo, batch).max(), representation_frequency(W_hi, batch).max()))
    overlap = histogram_overlap(cycle_histogram(W_lo, batch, 20, (0, f_max)), cycle_histogram(W_hi, batch, 20, (0, f_max)))
    ok = spread < 0.25 * init_spread and grew
    shown = ", ".join(f"{b}->{np.exp(np.mean(np.log(v))):.3f}" for b, v in finals.items())
    record(8, ok, f"log10 spread of final beta_hat {spread:.3f} vs {0.25 * init_spread:.3f} allowed "
                  f"(per-run spread {all_spread:.3f}); all grew={grew}; geo-mean finals {shown}; "
                  f"cycle-histogram overlap {overlap:.2f}")
    assert ok


@pytest.fixture(scope="module")
def expr_runs():
    runs = A.expressivity_runs()
    return runs, A.pendulum_noise_levels(runs)["levels"]


def matched_batch(*tensor_sets, per=128):
    return np.concatenate([np.concatenate([t["replay.obs"][:per], t["replay.actions"][:per]], axis=1)
                           for t in tensor_sets])


def report(tensors, batch, sigma, seed):
    critic = ckpt.mlp_from_tensors(tensors, "q1")
    return diagnose(critic, batch, sigma, np.random.default_rng([seed, 7]), noise_columns=slice(0, 3))


def test_criterion_09_expressivity(expr_runs):
    runs, levels = expr_runs
    sigma = levels["medium"]
    rank_w = dist_w = cos_w = 0
    rows = []
    for s in A.EXPR_SEEDS:
        t_relu, t_lff = runs[("relu", s)][1], runs[("lff", s)][1]
        batch = matched_batch(t_relu, t_lff)
        r, f = report(t_relu, batch, sigma, s), report(t_lff, batch, sigma, s)
        rank_w += f.effective_rank > r.effective_rank
        dist_w += f.euclid_noise_sq > r.euclid_noise_sq
        cos_w += f.cos_noise < r.cos_noise
        rows.append(f"s{s}: rank {f.effective_rank}/{r.effective_rank} dist {f.euclid_noise_sq:.3g}/"
                    f"{r.euclid_noise_sq:.3g} cos {f.cos_noise:.4f}/{r.cos_noise:.4f}")
    ok = rank_w >= 4 and dist_w >= 4 and cos_w >= 4
    record(9, ok, f"sigma_medium={sigma:g}; LFF beats ReLU on rank {rank_w}/5, distance {dist_w}/5, "
                  f"cosine {cos_w}/5 (need 4/5 each) [LFF/ReLU: {'; '.join(rows)}]")
    assert ok


def test_criterion_10_weight_decay(expr_runs):
    runs, levels = expr_runs
    beta_w = rank_w = 0
    rows = []
    for s in A.EXPR_SEEDS:
        (m0, t0), (m1, t1) = runs[("lff", s)], runs[("lff_wd", s)]
        batch = matched_batch(t0, t1)
        r0, r1 = report(t0, batch, levels["medium"], s), report(t1, batch, levels["medium"], s)
        beta_w += m1["beta_hat"] < m0["beta_hat"]
        rank_w += r1.effective_rank < r0.effective_rank
        rows.append(f"s{s}: beta {m1['beta_hat']:.3f}/{m0['beta_hat']:.3f} rank {r1.effective_rank}/{r0.effective_rank}")
    ok = beta_w >= 4 and rank_w >= 4
    record(10, ok, f"decay lowers beta_hat in {beta_w}/5 and effective rank in {rank_w}/5 seeds (need 4/5) "
                   f"[decay/no-decay: {'; '.join(rows)}]")
    assert ok


REPRO_CONFIG = """
[run]
seeds = 3
total_steps = 1500
eval_every = 500
eval_episodes = 2

[env]
name = pendulum
noise.low = 0.01
noise.medium = 0.1
noise.high = 1.0

[sac]
batch_size = 32
warmup_steps = 500
actor_hidden = 32, 32

[fourier]
variant = clff
hidden_widths = 32, 32
width_multiplier = 10
"""


def test_criterion_11_reproducibility(tmp_path):
    dirs = []
    for name in ("a", "b"):
        cfg = parse_config(REPRO_CONFIG, [f"run.out_dir={tmp_path / name}"])
        dirs.append(cmd_train(cfg))
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.suffix in (".csv", ".fpc1"))
    same = all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files)
    n_csv = sum(f.suffix == ".csv" for f in files)
    first = dirs[0] / "seed_3" / "checkpoints" / "step_1500.fpc1"
    again = tmp_path / "again.fpc1"
    ckpt.save(again, ckpt.load(first))
    round_trip = first.read_bytes() == again.read_bytes()
    ok = same and round_trip and n_csv >= 4
    record(11, ok, f"{n_csv} CSVs and {len(files) - n_csv} checkpoints byte-identical across reruns={same}; "
                   f"save/load/save identical={round_trip}")
    assert ok
