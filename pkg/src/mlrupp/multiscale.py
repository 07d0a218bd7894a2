"""Multiscale depthwise blocks: DWCB, MSDC and the M2B inverted-residual block."""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .errors import ConfigError, ShapeError, UnsupportedError
from .nn import BatchNorm, Conv, Module, ModuleList
from .tensor import Rng

DEFAULT_KERNELS = (3, 5, 7)


@dataclass(frozen=True)
class MsdcCfg:
    channels: int
    kernels: tuple[int, ...] = DEFAULT_KERNELS

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernels)
        object.__setattr__(self, "kernels", ks)
        if not ks:
            raise ConfigError("kernel set must be non-empty")
        if len(set(ks)) != len(ks):
            raise ConfigError(f"duplicate kernels in {ks}")
        if any(k % 2 == 0 or k < 1 for k in ks):
            raise UnsupportedError(f"kernels must be odd and positive, got {ks}")


@dataclass(frozen=True)
class M2bCfg:
    in_channels: int
    expansion: float = 2
    groups: int = 2
    kernels: tuple[int, ...] = DEFAULT_KERNELS
    out_channels: int | None = None

    def __post_init__(self):
        MsdcCfg(self.expanded, self.kernels)
        if self.expansion <= 0:
            raise ConfigError("expansion ratio must be positive")
        if self.groups < 1 or self.expanded % self.groups:
            raise ShapeError(
                f"expanded channels {self.expanded} not divisible by {self.groups} shuffle groups"
            )

    @property
    def expanded(self) -> int:
        return int(round(self.expansion * self.in_channels))

    @property
    def out(self) -> int:
        return self.out_channels if self.out_channels is not None else self.in_channels


class DWCB(Module):
    """relu6(BN(depthwise_k(x))) with "same" padding."""

    def __init__(self, channels: int, kernel: int, ndim: int = 2, bias: bool = True,
                 bn: bool = True, rng: Rng | None = None):
        super().__init__()
        if kernel % 2 == 0:
            raise UnsupportedError(f"DWCB kernel must be odd, got {kernel}")
        self.kernel = kernel
        self.dw = Conv(channels, channels, kernel, ndim, "depthwise", bias=bias, rng=rng)
        self.bn = BatchNorm(channels) if bn else None

    def forward(self, x):
        y = self.dw(x)
        if self.bn is not None:
            y = self.bn(y)
        return ad.relu6(y)


class MSDC(Module):
    """x + sum of DWCB_k(x) over the kernel set, summed in ascending k."""

    def __init__(self, cfg: MsdcCfg, ndim: int = 2, bias: bool = True, bn: bool = True,
                 rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        # built in ascending order so init draws and summation order ignore K's ordering
        self.branches = ModuleList(
            [DWCB(cfg.channels, k, ndim, bias, bn, rng) for k in sorted(cfg.kernels)]
        )

    def forward(self, x):
        x = ad.as_var(x)
        if x.shape[1] != self.cfg.channels:
            raise ShapeError(f"MSDC expects {self.cfg.channels} channels, got {x.shape[1]}")
        out = x
        for branch in self.branches:
            out = ad.add(out, branch(x))
        return out


class M2B(Module):
    """BN -> PW_exp -> shuffle -> MSDC (with its residual add) -> ReLU6 -> BN -> PW_proj."""

    def __init__(self, cfg: M2bCfg, ndim: int = 2, rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        e = cfg.expanded
        self.bn_in = BatchNorm(cfg.in_channels)
        self.pw_exp = Conv(cfg.in_channels, e, 1, ndim, "pointwise", bias=True, rng=rng)
        self.msdc = MSDC(MsdcCfg(e, cfg.kernels), ndim, rng=rng)
        self.bn_mid = BatchNorm(e)
        self.pw_proj = Conv(e, cfg.out, 1, ndim, "pointwise", bias=True, rng=rng)

    def forward(self, x):
        x = ad.as_var(x)
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"M2B expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        y = self.pw_exp(self.bn_in(x))
        y = ad.channel_shuffle(y, self.cfg.groups)
        y = ad.relu6(self.msdc(y))
        return self.pw_proj(self.bn_mid(y))


def dwcb_param_count(channels: int, kernel: int, ndim: int, bias: bool = True, bn: bool = True) -> int:
    return kernel ** ndim * channels + (channels if bias else 0) + (2 * channels if bn else 0)


def m2b_param_count(cfg: M2bCfg, ndim: int) -> int:
    c, e, o = cfg.in_channels, cfg.expanded, cfg.out
    msdc = sum(dwcb_param_count(e, k, ndim) for k in cfg.kernels)
    return 2 * c + (c * e + e) + msdc + 2 * e + (e * o + o)


def dwcb(x, kernel: int, rng: Rng | None = None):
    x = ad.as_var(x)
    return DWCB(x.shape[1], kernel, x.ndim - 2, rng=rng).eval()(x).data


def msdc(x, cfg: MsdcCfg, rng: Rng | None = None):
    x = ad.as_var(x)
    return MSDC(cfg, x.ndim - 2, rng=rng).eval()(x).data


def m2b(x, cfg: M2bCfg, rng: Rng | None = None):
    x = ad.as_var(x)
    return M2B(cfg, x.ndim - 2, rng).eval()(x).data
