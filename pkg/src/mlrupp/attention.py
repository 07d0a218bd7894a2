"""Lightweight channel/spatial attention (LCBAM) and a CBAM reference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError, UnsupportedError
from .nn import BatchNorm, Conv, Module, Parameter, fan_in_uniform
from .tensor import Rng

DEFAULT_REDUCTION = 16
DEFAULT_SPATIAL_KERNEL = 7


@dataclass(frozen=True)
class ChannelAttentionCfg:
    channels: int
    reduction: int = DEFAULT_REDUCTION
    with_bn: bool = True

    def __post_init__(self):
        if self.channels < 1 or self.reduction < 1:
            raise ConfigError("channels and reduction must be positive")
        if self.channels % self.reduction:
            raise ConfigError(
                f"channels {self.channels} not divisible by reduction {self.reduction}"
            )

    @property
    def hidden(self) -> int:
        return self.channels // self.reduction


@dataclass(frozen=True)
class SpatialAttentionCfg:
    kernel: int = DEFAULT_SPATIAL_KERNEL
    variant: str = "lcbam"

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise UnsupportedError(f"spatial attention kernel must be odd, got {self.kernel}")
        if self.kernel < 1:
            raise ConfigError("kernel must be positive")
        if self.variant not in ("lcbam", "cbam"):
            raise ConfigError(f"unknown spatial attention variant {self.variant!r}")


@dataclass
class AttentionMaps:
    alpha: np.ndarray
    beta: np.ndarray


class ChannelAttention(Module):
    """alpha = sigmoid(W2 relu(BN(W1 avgpool(M)))), W1/W2 bias-free pointwise convs."""

    def __init__(self, cfg: ChannelAttentionCfg, ndim: int = 2, rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        self.w1 = Conv(cfg.channels, cfg.hidden, 1, ndim, "pointwise", bias=False, rng=rng)
        if cfg.with_bn:
            self.bn = BatchNorm(cfg.hidden)
        self.w2 = Conv(cfg.hidden, cfg.channels, 1, ndim, "pointwise", bias=False, rng=rng)

    def forward(self, m):
        m = ad.as_var(m)
        if m.shape[1] != self.cfg.channels:
            raise ShapeError(f"channel attention expects {self.cfg.channels} channels, got {m.shape[1]}")
        h = self.w1(ad.adaptive_avg_pool(m))
        if self.cfg.with_bn:
            h = self.bn(h)
        return ad.sigmoid(self.w2(ad.relu(h)))


class SpatialAttention(Module):
    """beta = sigmoid(conv_k([mean_c; max_c])), a bias-free dense conv from 2 stats channels to 1.

    Weight count is 2 * k**ndim (98 for the 7x7 default).
    """

    def __init__(self, cfg: SpatialAttentionCfg = SpatialAttentionCfg(), ndim: int = 2,
                 rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        self.conv = Conv(2, 1, cfg.kernel, ndim, "dense", padding="same", bias=False, rng=rng)

    def forward(self, m):
        return ad.sigmoid(self.conv(ad.channel_stats_pool(m)))


class LCBAM(Module):
    """Channel gate then spatial gate: out = beta * (alpha * M).

    The spatial gate reads the channel-refined map alpha * M.
    """

    def __init__(self, ch_cfg: ChannelAttentionCfg, sp_cfg: SpatialAttentionCfg = SpatialAttentionCfg(),
                 ndim: int = 2, rng: Rng | None = None):
        super().__init__()
        self.channel = ChannelAttention(ch_cfg, ndim, rng)
        self.spatial = SpatialAttention(sp_cfg, ndim, rng)

    def forward(self, m):
        return self._run(m)[0]

    def _run(self, m):
        m = ad.as_var(m)
        alpha = self.channel(m)
        refined = ad.mul_broadcast(m, alpha)
        beta = self.spatial(refined)
        return ad.mul_broadcast(refined, beta), alpha, beta

    def maps(self, m) -> AttentionMaps:
        _, alpha, beta = self._run(m)
        return AttentionMaps(alpha.data, beta.data)


class CBAMChannel(Module):
    """sigmoid(W1 relu(W0 avg) + W1 relu(W0 max)) with W0, W1 shared by both branches.

    The shared weights are tagged with ``uses=2`` so the per-branch cost
    convention counts them once per descriptor.
    """

    def __init__(self, channels: int, reduction: int = DEFAULT_REDUCTION, ndim: int = 2,
                 rng: Rng | None = None):
        super().__init__()
        cfg = ChannelAttentionCfg(channels, reduction, with_bn=False)
        self.cfg, self.ndim = cfg, ndim
        unit = (1,) * ndim
        self.w0 = Parameter(fan_in_uniform(rng, (cfg.hidden, channels) + unit, channels), uses=2)
        self.w1 = Parameter(fan_in_uniform(rng, (channels, cfg.hidden) + unit, cfg.hidden), uses=2)

    def _mlp(self, d):
        return ad.conv_nd(ad.relu(ad.conv_nd(d, self.w0, kind="pointwise")), self.w1, kind="pointwise")

    def forward(self, m):
        m = ad.as_var(m)
        if m.shape[1] != self.cfg.channels:
            raise ShapeError(f"CBAM expects {self.cfg.channels} channels, got {m.shape[1]}")
        avg = self._mlp(ad.adaptive_avg_pool(m))
        mx = self._mlp(ad.global_max_pool(m))
        return ad.sigmoid(ad.add(avg, mx))


class CBAM(Module):
    def __init__(self, channels: int, reduction: int = DEFAULT_REDUCTION, kernel: int = 7,
                 ndim: int = 2, rng: Rng | None = None):
        super().__init__()
        self.channel = CBAMChannel(channels, reduction, ndim, rng)
        self.spatial = SpatialAttention(SpatialAttentionCfg(kernel, "cbam"), ndim, rng)

    def forward(self, m):
        m = ad.as_var(m)
        refined = ad.mul_broadcast(m, self.channel(m))
        return ad.mul_broadcast(refined, self.spatial(refined))


def channel_attention(m, cfg: ChannelAttentionCfg, rng: Rng | None = None) -> np.ndarray:
    m = ad.as_var(m)
    return ChannelAttention(cfg, m.ndim - 2, rng).eval()(m).data


def spatial_attention(m, cfg: SpatialAttentionCfg = SpatialAttentionCfg(), rng: Rng | None = None) -> np.ndarray:
    m = ad.as_var(m)
    return SpatialAttention(cfg, m.ndim - 2, rng)(m).data


def lcbam(m, ch_cfg: ChannelAttentionCfg, sp_cfg: SpatialAttentionCfg = SpatialAttentionCfg(),
          rng: Rng | None = None) -> np.ndarray:
    """Apply a freshly built LCBAM (eval mode) to ``m``; zero weights when ``rng`` is None."""
    m = ad.as_var(m)
    return LCBAM(ch_cfg, sp_cfg, m.ndim - 2, rng).eval()(m).data


def cbam_reference(m, channels: int, reduction: int = DEFAULT_REDUCTION,
                   rng: Rng | None = None) -> np.ndarray:
    m = ad.as_var(m)
    return CBAM(channels, reduction, 7, m.ndim - 2, rng)(m).data
