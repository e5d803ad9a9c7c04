"""Learned Fourier feature (LFF) and concatenated LFF (CLFF) first layers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import IDENTITY, RELU, SIN, LinearLayer, Mlp, dense_layer

LFF = "lff"
CLFF = "clff"
RELU_VARIANT = "relu"
VARIANTS = (LFF, CLFF, RELU_VARIANT)


@dataclass(frozen=True)
class FourierSpec:
    variant: str
    beta: float
    input_dim: int
    width_multiplier: int = 40
    hidden_widths: tuple[int, ...] = field(default=(1024, 1024))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.width_multiplier < 1:
            raise ValueError("width_multiplier must be >= 1")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    @property
    def first_width(self) -> int:
        """Total output width of the first layer (same for every variant)."""
        return self.width_multiplier * self.input_dim

    @property
    def weight_std(self) -> float:
        return math.pi * self.beta / self.input_dim

    @property
    def clff_rows(self) -> int:
        # sin and cos halves share W; the raw input fills the rest
        return max(1, (self.first_width - self.input_dim) // 2)


@dataclass(frozen=True)
class BetaEstimate:
    beta_hat: float
    sigma_hat: float


def _periodic_weights(spec: FourierSpec, rows, rng):
    return rng.normal(0.0, spec.weight_std, size=(rows, spec.input_dim))


def build_lff_layer(spec: FourierSpec, rng) -> LinearLayer:
    """sin(Wx + b) with W ~ N(0, std=pi*beta/d) and b ~ U(-pi, pi)."""
    if spec.variant != LFF:
        raise ValueError("build_lff_layer needs an LFF spec")
    w = _periodic_weights(spec, spec.first_width, rng)
    b = rng.uniform(-math.pi, math.pi, size=spec.first_width)
    return LinearLayer(w, b, SIN)


def build_clff_layer(spec: FourierSpec, rng) -> LinearLayer:
    """Shared bias-free projection W for (sin(Wx), cos(Wx), x).

    Used as the first layer of an ``Mlp(concat_input=True)``; its output
    width is ``2 * rows + d``.
    """
    if spec.variant != CLFF:
        raise ValueError("build_clff_layer needs a CLFF spec")
    return LinearLayer(_periodic_weights(spec, spec.clff_rows, rng), None, SIN)


def first_layer(spec: FourierSpec, rng) -> tuple[LinearLayer, int]:
    """Return the first layer and the width it feeds into the next layer."""
    if spec.variant == LFF:
        layer = build_lff_layer(spec, rng)
        return layer, layer.out_dim
    if spec.variant == CLFF:
        layer = build_clff_layer(spec, rng)
        return layer, 2 * layer.out_dim + spec.input_dim
    layer = dense_layer(rng, spec.input_dim, spec.first_width, RELU)
    return layer, layer.out_dim


def build_critic(spec: FourierSpec, rng, out_dim=1) -> Mlp:
    """First layer per ``spec.variant``, then ReLU hidden layers, linear head."""
    layer0, width = first_layer(spec, rng)
    layers = [layer0]
    for h in spec.hidden_widths:
        layers.append(dense_layer(rng, width, h, RELU))
        width = h
    layers.append(dense_layer(rng, width, out_dim, IDENTITY))
    return Mlp(layers, concat_input=spec.variant == CLFF)


def estimate_beta(layer: LinearLayer, d: int) -> BetaEstimate:
    """Treat the weights as one Gaussian and invert std = pi*beta/d."""
    w = np.asarray(layer.weights if isinstance(layer, LinearLayer) else layer)
    if w.size == 0:
        raise ValueError("cannot estimate beta from an empty weight matrix")
    sigma = float(np.std(w))
    return BetaEstimate(beta_hat=sigma * d / math.pi, sigma_hat=sigma)


def li_sigma_to_beta(sigma: float, d: int) -> float:
    """Convert a weight std quoted as N(0, sigma) on 2*pi*x inputs to beta.

    Solves 2*pi*sigma = pi*beta/d.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return 2 * d * sigma


def beta_grid(lo_exp=-3.0, hi_exp=0.5, num=8) -> np.ndarray:
    return np.logspace(lo_exp, hi_exp, num)
