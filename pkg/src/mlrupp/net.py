"""Toy-scale multiscale residual encoder-decoder with deep supervision, plus SGD."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import LCBAM, ChannelAttentionCfg, SpatialAttentionCfg
from .errors import ConfigError, FormatError, ShapeError
from .multiscale import M2B, DEFAULT_KERNELS, M2bCfg
from .nn import BatchNorm, Conv, ConvTranspose, Module, ModuleList
from .tensor import Rng, Tensor, load_fixture, save_fixture

FULL_CHANNELS = (32, 64, 128, 256)
DS_WEIGHTS = (0.57, 0.29, 0.14)


@dataclass(frozen=True)
class NetCfg:
    """Network geometry and block settings.

    ``channels`` defaults to the full-size widths (32, 64, 128, 256) divided by 8. Spatial extents are
    (H, W, D). Each encoder stage after the first halves every axis whose
    extent is still above 1; axes that already reached 1 keep stride 1.
    """

    extents: tuple[int, int, int] = (32, 32, 16)
    patch: tuple[int, int, int] = (4, 4, 4)
    in_channels: int = 1
    channels: tuple[int, ...] = tuple(c // 8 for c in FULL_CHANNELS)
    blocks: int = 3
    num_classes: int = 3
    ds_weights: tuple[float, ...] = DS_WEIGHTS
    reduction: int = 4
    kernels: tuple[int, ...] = DEFAULT_KERNELS
    spatial_kernel: int = 7
    expansion: float = 2
    groups: int = 2
    attn_bn: bool = True
    final_plain_conv: bool = True

    def __post_init__(self):
        for name in ("extents", "patch", "channels", "kernels", "ds_weights"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if len(self.extents) != 3 or len(self.patch) != 3:
            raise ConfigError("extents and patch need 3 entries (H, W, D)")
        if len(self.channels) != 4:
            raise ConfigError("exactly 4 stage channel widths are required")
        for n, p in zip(self.extents, self.patch):
            if p < 1 or n % p:
                raise ShapeError(f"extent {n} not divisible by patch {p}")
        if any(w < 0 for w in self.ds_weights):
            raise ConfigError("deep-supervision weights must be non-negative")
        if len(self.ds_weights) > 3:
            raise ConfigError("at most 3 deep-supervision weights (one per coarse decoder level)")
        for c in self.channels:
            ChannelAttentionCfg(c, self.reduction)
            M2bCfg(c, self.expansion, self.groups, self.kernels)
        SpatialAttentionCfg(self.spatial_kernel)
        if self.blocks < 1 or self.num_classes < 2:
            raise ConfigError("blocks >= 1 and num_classes >= 2 required")
        self.stage_strides()

    @property
    def embed_extents(self) -> tuple[int, ...]:
        return tuple(n // p for n, p in zip(self.extents, self.patch))

    @property
    def num_patches(self) -> int:
        return int(np.prod(self.embed_extents))

    def stage_strides(self) -> list[tuple[int, ...]]:
        """Downsampling stride per encoder stage (stage 1 is always unit stride)."""
        strides = [(1, 1, 1)]
        ext = self.embed_extents
        for stage in range(2, 5):
            s = []
            for n in ext:
                if n == 1:
                    s.append(1)
                elif n % 2:
                    raise ShapeError(f"odd extent {n} cannot be halved at encoder stage {stage}")
                else:
                    s.append(2)
            strides.append(tuple(s))
            ext = tuple(n // k for n, k in zip(ext, s))
        return strides

    def stage_extents(self) -> list[tuple[int, ...]]:
        out, ext = [], self.embed_extents
        for s in self.stage_strides():
            ext = tuple(n // k for n, k in zip(ext, s))
            out.append(ext)
        return out

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "NetCfg":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown NetCfg keys {sorted(unknown)}")
        return cls(**obj)


def num_patches(extents: Sequence[int], patch: Sequence[int]) -> int:
    for n, p in zip(extents, patch):
        if n % p:
            raise ShapeError(f"extent {n} not divisible by patch {p}")
    return int(np.prod([n // p for n, p in zip(extents, patch)]))


@dataclass
class NetOutput:
    logits: ad.Var
    aux_logits: list[ad.Var] = field(default_factory=list)


class PatchEmbed(Module):
    """Non-overlapping patch projection: dense conv with kernel == stride == patch."""

    def __init__(self, in_channels: int, channels: int, patch, rng: Rng | None = None):
        super().__init__()
        self.patch = tuple(patch)
        self.proj = Conv(in_channels, channels, self.patch, len(self.patch), "dense",
                         stride=self.patch, padding=0, bias=True, rng=rng)

    def forward(self, x):
        x = ad.as_var(x)
        for n, p in zip(x.shape[2:], self.patch):
            if n % p:
                raise ShapeError(f"extent {n} not divisible by patch {p}")
        return self.proj(x)


class ConvBlock(Module):
    """3x3x3 conv -> BN -> ReLU."""

    def __init__(self, channels: int, ndim: int = 3, rng: Rng | None = None):
        super().__init__()
        self.conv = Conv(channels, channels, 3, ndim, "dense", bias=True, rng=rng)
        self.bn = BatchNorm(channels)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))


class AttentionResBlock(Module):
    """x + LCBAM(ConvBlock(x))."""

    def __init__(self, channels: int, cfg: NetCfg, rng: Rng | None = None):
        super().__init__()
        self.conv = ConvBlock(channels, 3, rng)
        self.attn = LCBAM(ChannelAttentionCfg(channels, cfg.reduction, cfg.attn_bn),
                          SpatialAttentionCfg(cfg.spatial_kernel), 3, rng)

    def forward(self, x):
        return ad.add(x, self.attn(self.conv(x)))


class EncoderStage(Module):
    def __init__(self, in_channels: int, channels: int, stride, cfg: NetCfg, rng: Rng | None = None):
        super().__init__()
        self.stride = tuple(stride)
        if any(s > 1 for s in self.stride) or in_channels != channels:
            self.down = Conv(in_channels, channels, self.stride, 3, "dense", stride=self.stride,
                             padding=0, bias=True, rng=rng)
        else:
            self.down = None
        self.blocks = ModuleList([AttentionResBlock(channels, cfg, rng) for _ in range(cfg.blocks)])

    def forward(self, x):
        x = ad.as_var(x)
        if self.down is not None:
            for n, s in zip(x.shape[2:], self.stride):
                if s > 1 and n % s:
                    raise ShapeError(f"odd extent {n} cannot be halved")
            x = self.down(x)
        for block in self.blocks:
            x = block(x)
        return x


class DecoderStage(Module):
    """Transposed conv up to the skip's resolution and width, add the skip, then refine.

    Refinement is LCBAM -> M2B, or a plain 3x3x3 conv + ReLU when ``plain``.
    """

    def __init__(self, in_channels: int, channels: int, stride, cfg: NetCfg, plain: bool = False,
                 rng: Rng | None = None):
        super().__init__()
        self.stride = tuple(stride)
        self.plain = plain
        self.up = ConvTranspose(in_channels, channels, self.stride, 3, self.stride, bias=True, rng=rng)
        if plain:
            self.conv = Conv(channels, channels, 3, 3, "dense", bias=True, rng=rng)
        else:
            self.attn = LCBAM(ChannelAttentionCfg(channels, cfg.reduction, cfg.attn_bn),
                              SpatialAttentionCfg(cfg.spatial_kernel), 3, rng)
            self.m2b = M2B(M2bCfg(channels, cfg.expansion, cfg.groups, cfg.kernels), 3, rng)

    def forward(self, x, skip):
        up = self.up(x)
        skip = ad.as_var(skip)
        if up.shape != skip.shape:
            raise ShapeError(f"skip {skip.shape} does not match upsampled {up.shape}")
        y = ad.add(up, skip)
        if self.plain:
            return ad.relu(self.conv(y))
        return self.m2b(self.attn(y))


class MLRUNet(Module):
    """Patch embedding, 4 encoder stages, 4 decoder stages, head and aux heads.

    Decoder stages 1-3 undo the three encoder downsamplings with skips from
    encoder stages 3, 2, 1. Decoder stage 4 fuses the patch-embedding output at
    the same resolution. Aux heads tap decoder stages 1-3, coarse to fine.
    """

    def __init__(self, cfg: NetCfg, rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.channels
        strides = cfg.stage_strides()
        self.embed = PatchEmbed(cfg.in_channels, c1, cfg.patch, rng)
        widths = [c1, c1, c2, c3, c4]
        self.encoders = ModuleList(
            [EncoderStage(widths[i], widths[i + 1], strides[i], cfg, rng) for i in range(4)]
        )
        self.decoders = ModuleList([
            DecoderStage(c4, c3, strides[3], cfg, rng=rng),
            DecoderStage(c3, c2, strides[2], cfg, rng=rng),
            DecoderStage(c2, c1, strides[1], cfg, rng=rng),
            DecoderStage(c1, c1, (1, 1, 1), cfg, plain=cfg.final_plain_conv, rng=rng),
        ])
        self.head_conv = Conv(c1, c1, 3, 3, "dense", bias=True, rng=rng)
        self.head_out = Conv(c1, cfg.num_classes, 1, 3, "pointwise", bias=True, rng=rng)
        self.aux_heads = ModuleList([
            Conv(w, cfg.num_classes, 1, 3, "pointwise", bias=True, rng=rng)
            for w in (c3, c2, c1)[: len(cfg.ds_weights)]
        ])

    def forward(self, x) -> NetOutput:
        return self.run(x)[0]

    def run(self, x):
        """Forward pass that also returns the named intermediate activations."""
        x = ad.as_var(x)
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected [B, {self.cfg.in_channels}, H, W, D], got {x.shape}")
        trace = [("input", x)]
        e0 = self.embed(x)
        trace.append(("patch_embed", e0))
        skips, h = [], e0
        for i, enc in enumerate(self.encoders):
            h = enc(h)
            skips.append(h)
            trace.append((f"encoder{i + 1}", h))
        dec_outs = []
        for i, (dec, skip) in enumerate(zip(self.decoders, [skips[2], skips[1], skips[0], e0])):
            h = dec(h, skip)
            dec_outs.append(h)
            trace.append((f"decoder{i + 1}", h))
        logits = self.head_out(ad.relu(self.head_conv(h)))
        trace.append(("logits", logits))
        aux = [head(d) for head, d in zip(self.aux_heads, dec_outs[:3])]
        for i, a in enumerate(aux):
            trace.append((f"aux{i + 1}", a))
        return NetOutput(logits, aux), trace

    def shape_chain(self, batch: int = 1) -> list[tuple[str, tuple[int, ...]]]:
        x = np.zeros((batch, self.cfg.in_channels) + tuple(self.cfg.extents))
        was = self.training
        self.eval()
        try:
            _, trace = self.run(x)
        finally:
            self.train(was)
        return [(name, tuple(v.shape)) for name, v in trace]


def expected_shape_chain(cfg: NetCfg, batch: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    """Shape chain from stride geometry alone (no forward pass)."""
    c1, c2, c3, c4 = cfg.channels
    I = cfg.num_classes
    ext = cfg.stage_extents()
    e0 = cfg.embed_extents
    chain = [("input", (batch, cfg.in_channels) + tuple(cfg.extents)), ("patch_embed", (batch, c1) + e0)]
    for i, (c, e) in enumerate(zip((c1, c2, c3, c4), ext)):
        chain.append((f"encoder{i + 1}", (batch, c) + e))
    for i, (c, e) in enumerate(zip((c3, c2, c1, c1), (ext[2], ext[1], ext[0], e0))):
        chain.append((f"decoder{i + 1}", (batch, c) + e))
    chain.append(("logits", (batch, I) + e0))
    for i, e in enumerate((ext[2], ext[1], ext[0])[: len(cfg.ds_weights)]):
        chain.append((f"aux{i + 1}", (batch, I) + e))
    return chain


# ---------------------------------------------------------------- loss with deep supervision

def downsample_labels(labels: np.ndarray, extents: Sequence[int]) -> np.ndarray:
    """Nearest-neighbour resampling of ``[B, *S]`` integer labels to ``extents``."""
    idx = []
    for n, m in zip(labels.shape[1:], extents):
        idx.append(np.minimum(((np.arange(m) + 0.5) * n / m).astype(int), n - 1))
    return labels[np.ix_(np.arange(labels.shape[0]), *idx)]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes) + labels.shape[1:])
    np.put_along_axis(out, labels[:, None].astype(np.int64), 1.0, axis=1)
    return out


def total_loss(output: NetOutput, labels: np.ndarray, ds_weights: Sequence[float],
               variant: str = "normalized") -> ad.Var:
    """main + sum_i w_i * aux_i, with targets resampled to each head's resolution."""
    I = output.logits.shape[1]
    target = downsample_labels(labels, output.logits.shape[2:])
    loss = ad.seg_loss_logits(output.logits, one_hot(target, I), variant)
    for w, aux in zip(ds_weights, output.aux_logits):
        if w == 0:
            continue
        t = downsample_labels(labels, aux.shape[2:])
        loss = ad.add(loss, ad.scale(ad.seg_loss_logits(aux, one_hot(t, I), variant), w))
    return loss


# ---------------------------------------------------------------- optimiser

def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0, nesterov: bool = False,
             velocity: Sequence[np.ndarray] | None = None):
    """One SGD step; returns ``(new_params, new_velocity)``.

    ``d = g + wd * w``, ``v = momentum * v + d``, step ``d + momentum * v``
    (Nesterov) or ``v``, then ``w - lr * step``.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if velocity is None:
        velocity = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
    new_p, new_v = [], []
    for w, g, v in zip(params, grads, velocity):
        w = np.asarray(w, dtype=np.float64)
        d = np.asarray(g, dtype=np.float64) + weight_decay * w
        v = momentum * v + d
        step = d + momentum * v if nesterov else v
        new_p.append(w - lr * step)
        new_v.append(v)
    return new_p, new_v


class SGD:
    def __init__(self, params, lr: float = 0.01, momentum: float = 0.99, weight_decay: float = 3e-5,
                 nesterov: bool = True):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay, self.nesterov = lr, momentum, weight_decay, nesterov
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new_p, self.velocity = sgd_step([p.data for p in self.params], grads, self.lr, self.momentum,
                                        self.weight_decay, self.nesterov, self.velocity)
        for p, w in zip(self.params, new_p):
            p.data[...] = w

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: Module, directory) -> dict:
    """Write every parameter and buffer as a fixture file plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, value in model.state().items():
        fname = name.replace(".", "__") + ".f64"
        arr = value.reshape((1, 1) + value.shape) if value.ndim else value.reshape(1, 1, 1)
        arr = arr.reshape(arr.shape[:2] + (-1,))  # fixtures need a (batch, channel, width) layout
        save_fixture(Tensor(arr, ("batch", "channel", "width")), directory / fname)
        manifest[name] = {"file": fname, "shape": list(value.shape), "count": int(value.size)}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_checkpoint(model: Module, directory) -> None:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad checkpoint manifest: {exc}") from None
    state = {}
    for name, entry in manifest.items():
        t = load_fixture(directory / entry["file"])
        if t.size != entry["count"]:
            raise FormatError(f"{name}: fixture has {t.size} values, manifest says {entry['count']}")
        state[name] = t.data.reshape(entry["shape"])
    model.load_state(state)
