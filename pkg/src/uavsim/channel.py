"""Air-to-ground link budget: distance, path loss, small-scale fading, rate.

Large-scale gain is a reference-distance power law with LoS/NLoS exponents;
small-scale fading is Rician on LoS links and Rayleigh on NLoS links, unit
mean power in both branches.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

ALLOCATOR_FADING_MODES = ("instantaneous", "mean")


@dataclass(frozen=True)
class ChannelConfig:
    beta0: float = 1e-5           # linear power gain at 1 m
    alpha_los: float = 2.2
    alpha_nlos: float = 3.5
    kappa: float = 10.0           # linear Rician K-factor
    noise_psd: float = 1e-20      # W/Hz
    # Whether the allocator's SNR coefficient uses the sampled |g|^2 or its
    # unit mean.
    allocator_fading: str = "instantaneous"

    def __post_init__(self):
        if not self.beta0 > 0:
            raise ValueError("beta0 must be positive")
        if not self.noise_psd > 0:
            raise ValueError("noise_psd must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.allocator_fading not in ALLOCATOR_FADING_MODES:
            raise ValueError(f"allocator_fading must be one of {ALLOCATOR_FADING_MODES}")
        if not (self.alpha_nlos >= self.alpha_los >= 2.0):
            warnings.warn(
                f"unusual path-loss exponents: alpha_los={self.alpha_los}, "
                f"alpha_nlos={self.alpha_nlos}", stacklevel=2)


@dataclass(frozen=True)
class LinkBudget:
    """Per-user per-slot channel snapshot."""

    distance: float       # m
    is_los: bool
    large_scale: float    # linear
    fading_power: float   # |g|^2, linear
    snr_coeff: float      # Hz/W, what the allocator consumes


def link_distance(q, w, altitude: float) -> float:
    """3-D distance between the UAV at altitude H and a ground user."""
    dx = float(q[0]) - float(w[0])
    dy = float(q[1]) - float(w[1])
    return math.sqrt(dx * dx + dy * dy + altitude * altitude)


def large_scale_gain(d: float, is_los: bool, cfg: ChannelConfig) -> float:
    """Reference-distance power law, beta0 * d^-alpha."""
    if d < 1.0:
        warnings.warn(f"distance {d} m below the 1 m reference distance", stacklevel=2)
    alpha = cfg.alpha_los if is_los else cfg.alpha_nlos
    return cfg.beta0 * d ** (-alpha)


def sample_fading_power(is_los: bool, cfg: ChannelConfig, rng, size=None):
    """Draw |g|^2 with unit mean: Rician (LoS) or Rayleigh (NLoS).

    The LoS phase and the complex scatter draw are consumed in both branches
    so that fading streams stay aligned across LoS patterns.
    """
    phi = rng.uniform(0.0, 2.0 * math.pi, size=size)
    z = rng.standard_normal(size=(2,) if size is None else (2,) + tuple(np.atleast_1d(size)))
    scatter = (z[0] + 1j * z[1]) / math.sqrt(2.0)
    if is_los:
        mean = math.sqrt(cfg.kappa / (cfg.kappa + 1.0)) * np.exp(1j * phi)
        g = mean + scatter / math.sqrt(cfg.kappa + 1.0)
    else:
        g = scatter
    power = np.abs(g) ** 2
    return float(power) if size is None else power


def achievable_rate(b: float, p: float, a: float) -> float:
    """Shannon rate b*log2(1 + a*p/b) in bit/s; 0 at b=0 by continuity."""
    if b <= 0.0:
        return 0.0
    return b * math.log1p(a * p / b) / math.log(2.0)
