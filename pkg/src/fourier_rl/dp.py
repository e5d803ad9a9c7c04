"""Mountain-car ground truth by value iteration, checkerboard split, supervised fit."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .envs import MC_GOAL, MC_V_MAX, MC_X_MAX, MC_X_MIN, mc_dynamics
from .fourier import LFF, RELU_VARIANT, FourierSpec
from .nn import IDENTITY, RELU, SIN, AdamState, LinearLayer, Mlp, adam_step, dense_layer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    nx: int = 200
    nv: int = 200
    x_bounds: tuple[float, float] = (MC_X_MIN, MC_X_MAX)
    v_bounds: tuple[float, float] = (-MC_V_MAX, MC_V_MAX)

    def __post_init__(self):
        if self.nx < 2 or self.nv < 2:
            raise ValueError("grid needs at least 2 cells per axis")

    @property
    def x_centers(self):
        lo, hi = self.x_bounds
        w = (hi - lo) / self.nx
        return lo + w * (np.arange(self.nx) + 0.5)

    @property
    def v_centers(self):
        lo, hi = self.v_bounds
        w = (hi - lo) / self.nv
        return lo + w * (np.arange(self.nv) + 0.5)

    def snap(self, x, v):
        """Flat index of the cell containing (x, v); out-of-box points go to the edge cell."""
        (xl, xh), (vl, vh) = self.x_bounds, self.v_bounds
        ix = np.clip(np.floor((x - xl) / (xh - xl) * self.nx), 0, self.nx - 1).astype(np.int64)
        iv = np.clip(np.floor((v - vl) / (vh - vl) * self.nv), 0, self.nv - 1).astype(np.int64)
        return ix * self.nv + iv


@dataclass
class ValueTable:
    values: np.ndarray  # (nx, nv): Q(s, a=0)
    gamma: float
    q: np.ndarray  # (nx*nv, n_actions)
    residuals: np.ndarray
    grid: Grid | None = None


class ConvergenceError(RuntimeError):
    def __init__(self, residual, sweeps):
        super().__init__(f"value iteration did not converge: residual {residual:.3e} after {sweeps} sweeps")
        self.residual = residual


def solve_bellman(next_index, terminal, gamma, tol=1e-6, max_sweeps=100_000, reward=-1.0):
    """Synchronous value iteration on a deterministic finite MDP.

    ``next_index[s, a]`` is the successor cell, ``terminal[s]`` marks
    absorbing zero-value cells. Returns (Q, per-sweep sup-norm residuals).
    Synchronous sweeps keep the residual non-increasing (gamma-contraction).
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must be in (0, 1)")
    next_index = np.asarray(next_index)
    terminal = np.asarray(terminal, dtype=bool)
    n, _ = next_index.shape
    q = np.zeros(next_index.shape)
    residuals = []
    nonterm = ~terminal
    for sweep in range(1, max_sweeps + 1):
        v = q.max(axis=1)
        v[terminal] = 0.0
        q_new = reward + gamma * v[next_index]
        q_new[terminal] = 0.0
        res = float(np.max(np.abs(q_new - q))) if nonterm.any() else 0.0
        q = q_new
        residuals.append(res)
        if res < tol:
            return q, np.array(residuals)
    raise ConvergenceError(residuals[-1], max_sweeps)


def mc_transitions(grid: Grid):
    xs, vs = np.meshgrid(grid.x_centers, grid.v_centers, indexing="ij")
    xs, vs = xs.ravel(), vs.ravel()
    nxt = np.empty((xs.size, 3), dtype=np.int64)
    for a in range(3):
        x2, v2 = mc_dynamics(xs, vs, 0.001 * (a - 1))
        nxt[:, a] = grid.snap(x2, v2)
    return nxt, xs >= MC_GOAL


def value_iteration(grid: Grid, gamma=0.99, tol=1e-6, max_sweeps=100_000) -> ValueTable:
    nxt, terminal = mc_transitions(grid)
    q, residuals = solve_bellman(nxt, terminal, gamma, tol, max_sweeps)
    return ValueTable(q[:, 0].reshape(grid.nx, grid.nv), gamma, q, residuals, grid)


def greedy_rollout(grid: Grid, table: ValueTable, x0=-0.5, v0=0.0, horizon=1000):
    """Run the true dynamics under argmax_a Q(snap(s), a). Returns steps to goal or None."""
    x, v = x0, v0
    for t in range(horizon):
        if x >= MC_GOAL:
            return t
        a = int(np.argmax(table.q[grid.snap(x, v)]))
        x, v = mc_dynamics(x, v, 0.001 * (a - 1))
        x, v = float(x), float(v)
    return t + 1 if x >= MC_GOAL else None


@dataclass
class CheckerboardSplit:
    block: int
    train: np.ndarray  # bool (nx, nv)

    @property
    def test(self):
        return ~self.train


def checkerboard_split(grid: Grid, block=25) -> CheckerboardSplit:
    """Blocks of ``block`` x ``block`` cells; even block parity is train."""
    if block < 1 or block >= max(grid.nx, grid.nv):
        raise ValueError(f"block size {block} must be in [1, grid extent)")
    bi = np.arange(grid.nx) // block
    bj = np.arange(grid.nv) // block
    train = (bi[:, None] + bj[None, :]) % 2 == 0
    return CheckerboardSplit(block, train)


@dataclass
class FitResult:
    arch: str
    steps: np.ndarray
    train_mse: np.ndarray
    test_mse: np.ndarray
    surface: np.ndarray


class DivergenceError(RuntimeError):
    pass


def warmup_net(spec: FourierSpec, rng, width=400, depth=2) -> Mlp:
    """ReLU MLP, or a sinusoid-throughout net whose first layer uses the beta init."""
    if spec.variant == RELU_VARIANT:
        layers = [dense_layer(rng, spec.input_dim, width, RELU)]
        act = RELU
    elif spec.variant == LFF:
        w = rng.normal(0.0, spec.weight_std, size=(width, spec.input_dim))
        b = rng.uniform(-math.pi, math.pi, size=width)
        layers = [LinearLayer(w, b, SIN)]
        act = SIN
    else:
        raise ValueError("supervised warmup supports the relu and lff variants only")
    for _ in range(depth - 1):
        layers.append(dense_layer(rng, width, width, act))
    layers.append(dense_layer(rng, width, 1, IDENTITY))
    return Mlp(layers)


def grid_inputs(grid: Grid):
    """Cell centres rescaled to [-1, 1]^2, row order matching values.ravel()."""
    (xl, xh), (vl, vh) = grid.x_bounds, grid.v_bounds
    xs = 2 * (grid.x_centers - xl) / (xh - xl) - 1
    vs = 2 * (grid.v_centers - vl) / (vh - vl) - 1
    gx, gv = np.meshgrid(xs, vs, indexing="ij")
    return np.stack([gx.ravel(), gv.ravel()], axis=1)


def fit_supervised(spec: FourierSpec, table: ValueTable, split: CheckerboardSplit, rng,
                   steps=50_000, lr=1e-4, width=400, log_every=1000) -> FitResult:
    """Full-batch Adam regression of the Q(s, 0) table on the train cells.

    Targets are standardised with train-set statistics for optimisation;
    reported MSEs and the surface are in value units.
    """
    grid = table.grid or Grid(*table.values.shape)
    x = grid_inputs(grid)
    y = table.values.reshape(-1, 1)
    tr = split.train.ravel()
    mu, sd = y[tr].mean(), y[tr].std()
    sd = sd if sd > 0 else 1.0
    x_tr, y_tr = x[tr], (y[tr] - mu) / sd
    x_te, y_te = x[~tr], y[~tr]

    net = warmup_net(spec, rng, width=width)
    params = net.params()
    opt = AdamState.for_params(params, lr=lr)
    rec_steps, rec_tr, rec_te = [], [], []

    def record(step):
        p_tr = net(x_tr) * sd + mu
        p_te = net(x_te) * sd + mu
        rec_steps.append(step)
        rec_tr.append(float(np.mean((p_tr - y[tr]) ** 2)))
        rec_te.append(float(np.mean((p_te - y_te) ** 2)))

    n = len(x_tr)
    for step in range(1, steps + 1):
        cache = net.forward(x_tr)
        diff = cache.output - y_tr
        loss = float(np.mean(diff * diff))
        if not math.isfinite(loss):
            raise DivergenceError(f"{spec.variant} fit diverged at step {step}: loss={loss}")
        grads, _ = net.backward(cache, 2.0 * diff / n)
        adam_step(params, grads, opt)
        if step % log_every == 0 or step == steps:
            record(step)
    surface = (net(x) * sd + mu).reshape(grid.nx, grid.nv)
    return FitResult(spec.variant, np.array(rec_steps), np.array(rec_tr), np.array(rec_te), surface)


def downsample(table: ValueTable, factor: int) -> ValueTable:
    """Keep every ``factor``-th cell on each axis.

    ``factor`` must be odd so the kept fine-cell centres are exactly the
    centres of the coarse grid.
    """
    g = table.grid
    if factor == 1:
        return table
    if factor % 2 == 0 or g.nx % factor or g.nv % factor:
        raise ValueError(f"downsample factor {factor} must be odd and divide the grid")
    keep = (slice(factor // 2, None, factor), slice(factor // 2, None, factor))
    vals = table.values[keep]
    q = table.q.reshape(g.nx, g.nv, -1)[keep].reshape(vals.size, -1)
    sub = Grid(vals.shape[0], vals.shape[1], g.x_bounds, g.v_bounds)
    return ValueTable(vals.copy(), table.gamma, q, table.residuals, sub)
