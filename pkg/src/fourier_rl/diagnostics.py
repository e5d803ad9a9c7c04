"""Representation measurements for a critic's first layer.

Frequencies follow the max-minus-min definition on the bias-free projection
Wx. For CLFF critics the feature matrix is the periodic sin || cos slice;
the raw-input suffix is excluded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .fourier import estimate_beta
from .nn import LinearLayer, Mlp, _activate

log = logging.getLogger(__name__)

SRANK_DELTA = 0.01
QUARTER_CYCLE = 0.25


def representation_frequency(W, dataset):
    """Cycles swept by each neuron's projection over the dataset: (max - min) / 2pi."""
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty 2-D batch")
    if X.shape[1] != W.shape[1]:
        raise ValueError(f"dataset has {X.shape[1]} columns, W expects {W.shape[1]}")
    z = X @ W.T
    return (z.max(axis=0) - z.min(axis=0)) / (2 * math.pi)


@dataclass
class FrequencyHistogram:
    frequencies: np.ndarray
    counts: np.ndarray
    edges: np.ndarray

    @property
    def high_frequency_fraction(self) -> float:
        """Fraction of neurons covering more than a quarter cycle."""
        return float(np.mean(self.frequencies > QUARTER_CYCLE))


def cycle_histogram(W, dataset, bins=20, range_=None) -> FrequencyHistogram:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    f = representation_frequency(W, dataset)
    if range_ is None:
        hi = float(f.max())
        range_ = (0.0, hi if hi > 0 else 1.0)
    counts, edges = np.histogram(f, bins=bins, range=range_)
    # np.histogram drops values outside range; keep every neuron in the mass
    counts[0] += int(np.sum(f < edges[0]))
    counts[-1] += int(np.sum(f > edges[-1]))
    hist = FrequencyHistogram(f, counts, edges)
    log.info("%.1f%% of neurons exceed a quarter cycle", 100 * hist.high_frequency_fraction)
    return hist


def histogram_overlap(a: FrequencyHistogram, b: FrequencyHistogram) -> float:
    """Overlap coefficient sum_i min(p_i, q_i) of two histograms on shared edges."""
    if not np.array_equal(a.edges, b.edges):
        raise ValueError("histograms must share bin edges")
    p = a.counts / a.counts.sum()
    q = b.counts / b.counts.sum()
    return float(np.minimum(p, q).sum())


def effective_rank(features, delta=SRANK_DELTA):
    """srank_delta: fewest top singular values holding a (1 - delta) share of their sum.

    Returns (rank, degenerate); an all-zero matrix gives (0, True).
    """
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    s = np.linalg.svd(np.asarray(features, dtype=np.float64), compute_uv=False)
    total = s.sum()
    if total <= 0:
        return 0, True
    cum = np.cumsum(s) / total
    return int(np.searchsorted(cum, 1.0 - delta) + 1), False


def _row_cosines(a, b):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    cos = np.einsum("ij,ij->i", a[ok], b[ok]) / (na[ok] * nb[ok])
    return np.clip(cos, -1.0, 1.0), int((~ok).sum())


@dataclass
class CosineResult:
    mean: float
    skipped: int

    def __float__(self):
        return self.mean


def cosine_pre_post(layer: LinearLayer, batch) -> CosineResult:
    """Mean row cosine between Wx + b and g(Wx + b); zero-norm rows are skipped and counted."""
    z = layer.preactivation(np.asarray(batch, dtype=np.float64))
    cos, skipped = _row_cosines(z, _activate(z, layer.activation))
    return CosineResult(float(cos.mean()) if cos.size else float("nan"), skipped)


def perturb(batch, sigma, rng, columns=None):
    """Gaussian noise on the given columns (all by default), one draw per entry."""
    batch = np.asarray(batch, dtype=np.float64)
    out = batch.copy()
    cols = slice(None) if columns is None else columns
    if sigma > 0:
        out[:, cols] += sigma * rng.standard_normal(out[:, cols].shape)
    return out


def _features_fn(layer_or_net):
    if isinstance(layer_or_net, Mlp):
        return lambda x: first_layer_features(layer_or_net, x)
    return layer_or_net


def cosine_after_noise(layer, batch, sigma, rng, columns=None) -> CosineResult:
    """Mean cosine between g(Wx + b) and g(W(x + eps) + b), eps paired per row."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    f = _features_fn(layer)
    clean = f(batch)
    noisy = f(perturb(batch, sigma, rng, columns))
    cos, skipped = _row_cosines(clean, noisy)
    return CosineResult(float(cos.mean()) if cos.size else float("nan"), skipped)


@dataclass
class DistanceResult:
    squared: float
    unsquared: float


def euclidean_after_noise(layer, batch, sigma, rng, columns=None) -> DistanceResult:
    """Batch mean of ||g(Wx + b) - g(W(x + eps) + b)||^2, plus the mean unsquared norm."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    f = _features_fn(layer)
    diff = f(batch) - f(perturb(batch, sigma, rng, columns))
    sq = np.einsum("ij,ij->i", diff, diff)
    return DistanceResult(float(sq.mean()), float(np.sqrt(sq).mean()))


def first_layer_features(net: Mlp, x):
    """First-layer post-activations; for concat-input nets only the sin || cos part."""
    layer = net.layers[0]
    z = layer.preactivation(np.asarray(x, dtype=np.float64))
    if net.concat_input:
        return np.concatenate([np.sin(z), np.cos(z)], axis=1)
    return _activate(z, layer.activation)


@dataclass
class DiagnosticsReport:
    beta_hat: float
    histogram: FrequencyHistogram
    effective_rank: int
    cos_pre_post: float
    cos_noise: float
    euclid_noise_sq: float
    euclid_noise: float
    batch_size: int
    sigma: float

    def row(self) -> dict:
        return {
            "beta_hat": self.beta_hat,
            "high_freq_fraction": self.histogram.high_frequency_fraction,
            "mean_frequency": float(self.histogram.frequencies.mean()),
            "effective_rank": self.effective_rank,
            "cos_pre_post": self.cos_pre_post,
            "cos_noise": self.cos_noise,
            "euclid_noise_sq": self.euclid_noise_sq,
            "euclid_noise": self.euclid_noise,
            "batch_size": self.batch_size,
            "sigma": self.sigma,
        }


REPORT_COLUMNS = (
    "beta_hat", "high_freq_fraction", "mean_frequency", "effective_rank", "cos_pre_post",
    "cos_noise", "euclid_noise_sq", "euclid_noise", "batch_size", "sigma",
)


def diagnose(critic: Mlp, batch, sigma, rng, noise_columns=None, bins=20, delta=SRANK_DELTA) -> DiagnosticsReport:
    """Full report for one critic on one (state, action) batch.

    ``noise_columns`` restricts the perturbation to the observation part of
    the critic input.
    """
    batch = np.asarray(batch, dtype=np.float64)
    layer = critic.layers[0]
    d = layer.in_dim
    feats = first_layer_features(critic, batch)
    rank, _ = effective_rank(feats, delta)
    if critic.concat_input:
        z = layer.preactivation(batch)
        cos_pp, _ = _row_cosines(np.concatenate([z, z], axis=1), feats)
        cos_pp = float(cos_pp.mean())
    else:
        cos_pp = cosine_pre_post(layer, batch).mean
    noise_seed = rng.integers(2**63)
    cos_n = cosine_after_noise(critic, batch, sigma, np.random.default_rng(noise_seed), noise_columns)
    dist = euclidean_after_noise(critic, batch, sigma, np.random.default_rng(noise_seed), noise_columns)
    return DiagnosticsReport(
        beta_hat=estimate_beta(layer, d).beta_hat,
        histogram=cycle_histogram(layer.weights, batch, bins),
        effective_rank=rank,
        cos_pre_post=cos_pp,
        cos_noise=cos_n.mean,
        euclid_noise_sq=dist.squared,
        euclid_noise=dist.unsquared,
        batch_size=len(batch),
        sigma=float(sigma),
    )
