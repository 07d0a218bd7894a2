"""The registered gradient-check suite: every primitive and composed block at a small shape."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import autodiff as ad
from .attention import CBAM, LCBAM, ChannelAttention, ChannelAttentionCfg, SpatialAttention, SpatialAttentionCfg
from .gradcheck import GradCheckReport, grad_check
from .multiscale import DWCB, M2B, MSDC, M2bCfg, MsdcCfg
from .net import DecoderStage, EncoderStage, MLRUNet, NetCfg, PatchEmbed, total_loss
from .nn import BatchNorm, Conv, ConvTranspose, Module
from .tensor import Rng

PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-5


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    kind: str  # primitive | block
    build: Callable[[Rng], tuple]  # rng -> (node, input_shapes, extra grad_check kwargs)

    @property
    def tol(self) -> float:
        return PRIMITIVE_TOL if self.kind == "primitive" else BLOCK_TOL


class _Fn(Module):
    """Wrap a parameter-free function of Vars as a node."""

    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, *xs):
        return self.fn(*xs)


def _uniform(shape, lo, hi, seed=0):
    return [Rng(seed).uniform(lo, hi, shape)]


# tiny network used for the stage and end-to-end checks
MICRO_NET = NetCfg(extents=(8, 8, 8), patch=(2, 2, 2), channels=(4, 4, 8, 8), blocks=1,
                   num_classes=3, reduction=2, kernels=(3, 5), expansion=1, groups=2)


class _NetLoss(Module):
    def __init__(self, cfg: NetCfg, rng: Rng):
        super().__init__()
        self.net = MLRUNet(cfg, rng)
        self.cfg = cfg
        self.labels = rng.integers(0, cfg.num_classes, (2,) + cfg.extents)

    def forward(self, x):
        return total_loss(self.net(x), self.labels, self.cfg.ds_weights)


def _entries() -> list[SuiteEntry]:
    P, B = "primitive", "block"
    cfg = MICRO_NET
    return [
        SuiteEntry("conv_dense", P, lambda r: (Conv(3, 4, 3, 2, rng=r), [(1, 3, 5, 5)], {})),
        SuiteEntry("conv_dense_strided_3d", P,
                   lambda r: (Conv(2, 3, 3, 3, stride=2, padding=1, rng=r), [(1, 2, 5, 5, 5)], {})),
        SuiteEntry("conv_depthwise", P, lambda r: (Conv(4, 4, 3, 2, "depthwise", rng=r), [(1, 4, 5, 5)], {})),
        SuiteEntry("conv_pointwise", P, lambda r: (Conv(4, 2, 1, 2, "pointwise", rng=r), [(1, 4, 5, 5)], {})),
        SuiteEntry("transposed_conv", P,
                   lambda r: (ConvTranspose(2, 3, 2, 3, stride=2, rng=r), [(1, 2, 3, 3, 3)], {})),
        SuiteEntry("adaptive_avg_pool", P, lambda r: (_Fn(ad.adaptive_avg_pool), [(2, 3, 4, 4)], {})),
        SuiteEntry("global_max_pool", P, lambda r: (_Fn(ad.global_max_pool), [(2, 3, 4, 4)], {})),
        SuiteEntry("channel_stats_pool", P, lambda r: (_Fn(ad.channel_stats_pool), [(2, 4, 4, 4)], {})),
        SuiteEntry("batch_norm", P, lambda r: (BatchNorm(3).train(), [(2, 3, 4, 4)], {})),
        SuiteEntry("relu", P, lambda r: (_Fn(ad.relu), [(2, 3, 4, 4)], {})),
        SuiteEntry("relu6", P, lambda r: (_Fn(ad.relu6), [(2, 3, 4, 4)],
                                          {"inputs": _uniform((2, 3, 4, 4), -2.0, 8.0)})),
        SuiteEntry("sigmoid", P, lambda r: (_Fn(ad.sigmoid), [(2, 3, 4, 4)],
                                            {"inputs": _uniform((2, 3, 4, 4), -4.0, 4.0)})),
        SuiteEntry("channel_shuffle", P, lambda r: (_Fn(lambda x: ad.channel_shuffle(x, 2)), [(1, 4, 3, 3)], {})),
        SuiteEntry("add", P, lambda r: (_Fn(ad.add), [(1, 3, 4, 4), (1, 3, 4, 4)], {})),
        SuiteEntry("mul_broadcast_channel", P, lambda r: (_Fn(ad.mul_broadcast), [(2, 3, 4, 4), (2, 3, 1, 1)], {})),
        SuiteEntry("mul_broadcast_spatial", P, lambda r: (_Fn(ad.mul_broadcast), [(2, 3, 4, 4), (2, 1, 4, 4)], {})),
        SuiteEntry("channel_attention", B, lambda r: (
            ChannelAttention(ChannelAttentionCfg(8, 2), 2, r).eval(), [(1, 8, 6, 6)], {})),
        SuiteEntry("spatial_attention", B, lambda r: (SpatialAttention(SpatialAttentionCfg(7), 2, r), [(1, 8, 6, 6)], {})),
        SuiteEntry("lcbam", B, lambda r: (
            LCBAM(ChannelAttentionCfg(8, 2), SpatialAttentionCfg(7), 2, r).eval(), [(1, 8, 6, 6)], {})),
        SuiteEntry("lcbam_train_3d", B, lambda r: (
            LCBAM(ChannelAttentionCfg(4, 2), SpatialAttentionCfg(3), 3, r).train(), [(2, 4, 3, 3, 3)], {})),
        SuiteEntry("cbam", B, lambda r: (CBAM(8, 2, 7, 2, r), [(1, 8, 6, 6)], {})),
        SuiteEntry("dwcb", B, lambda r: (DWCB(4, 3, 2, rng=r).train(), [(1, 4, 5, 5)], {})),
        SuiteEntry("msdc", B, lambda r: (MSDC(MsdcCfg(4, (3, 5)), 2, rng=r).train(), [(1, 4, 5, 5)], {})),
        SuiteEntry("m2b", B, lambda r: (M2B(M2bCfg(4, 2, 2, (3, 5)), 2, r).train(), [(1, 4, 5, 5)], {})),
        SuiteEntry("patch_embed", B, lambda r: (PatchEmbed(1, 4, (4, 4, 4), r), [(1, 1, 8, 8, 8)], {})),
        SuiteEntry("encoder_stage", B, lambda r: (
            EncoderStage(4, 8, (2, 2, 2), cfg, r).train(), [(2, 4, 4, 4, 4)], {"max_per_tensor": 24})),
        SuiteEntry("decoder_stage", B, lambda r: (
            DecoderStage(8, 4, (2, 2, 2), cfg, rng=r).train(), [(2, 8, 2, 2, 2), (2, 4, 4, 4, 4)],
            {"max_per_tensor": 24})),
        SuiteEntry("net_total_loss", B, lambda r: (
            _NetLoss(cfg, r).train(), [(2, 1) + cfg.extents], {"max_per_tensor": 6})),
    ]


SUITE: list[SuiteEntry] = _entries()


def suite_names() -> list[str]:
    return [e.name for e in SUITE]


@dataclass
class SuiteResult:
    reports: list[tuple[SuiteEntry, GradCheckReport, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for _, r, _ in self.reports)

    def failing(self) -> list[str]:
        return [e.name for e, r, _ in self.reports if not r.passed]

    def to_json(self) -> dict:
        return {
            "pass": self.passed,
            "failing": self.failing(),
            "nodes": [dict(r.to_json(), kind=e.kind, tol=e.tol, seconds=round(t, 3))
                      for e, r, t in self.reports],
        }


def run_suite(only: Sequence[str] | None = None, seed: int = 0, faults: Sequence[str] = ()) -> SuiteResult:
    """Run the registered checks (optionally a subset by name) with optional injected vjp faults."""
    entries = SUITE
    if only:
        unknown = sorted(set(only) - set(suite_names()))
        if unknown:
            raise KeyError(f"unknown suite node(s) {unknown}; known: {suite_names()}")
        entries = [e for e in SUITE if e.name in set(only)]
    result = SuiteResult()
    with ad.inject_fault(*faults):
        for e in entries:
            start = time.perf_counter()
            node, shapes, kwargs = e.build(Rng(seed))
            report = grad_check(node, shapes, seed=seed, tol=e.tol, name=e.name, **kwargs)
            result.reports.append((e, report, time.perf_counter() - start))
    return result


def render_suite(result: SuiteResult) -> str:
    width = max((len(e.name) for e, _, _ in result.reports), default=4)
    lines = []
    for e, r, t in result.reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{e.name.ljust(width)}  {status}  worst {r.worst:.2e}  tol {e.tol:.0e}  {t:6.2f}s")
        for c in r.failures():
            if c.checked == 0:
                lines.append(f"    {c.tensor}: every probe crossed a kink ({c.skipped_kinks} skipped)")
            else:
                lines.append(f"    {c.tensor} index {c.first_failure or c.worst_index} rel_err {c.rel_err:.3e}")
    lines.append(f"{'all' if result.passed else 'FAILED: ' + ', '.join(result.failing())}")
    return "\n".join(lines) + "\n"

