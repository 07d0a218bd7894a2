"""Closed-form parameter/FLOP formulas, exact counting, MAC instrumentation and comparison tables.

FLOPs are counted as multiply-accumulates (one unit per MAC) unless the
``"2x"`` convention is requested, which doubles every FLOP figure.
"""
from __future__ import annotations

import inspect
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .attention import CBAM, LCBAM, CBAMChannel, ChannelAttention, ChannelAttentionCfg, SpatialAttention, SpatialAttentionCfg
from .errors import BindingError, ConfigError
from .multiscale import DWCB, M2B, MSDC, M2bCfg, MsdcCfg
from .nn import Conv, Module, ParamRecord
from .tensor import Rng

FLOP_CONVENTIONS = ("mac", "2x")


@dataclass(frozen=True)
class CostFormula:
    name: str
    params: Callable[..., int] | None
    flops: Callable[..., int] | None
    source: str

    def symbols(self, quantity: str) -> list[str]:
        fn = self.params if quantity == "params" else self.flops
        return list(inspect.signature(fn).parameters) if fn is not None else []


def _div(a: int, b: int) -> int:
    if a % b:
        raise ConfigError(f"{a} is not divisible by {b}")
    return a // b


FORMULAS: dict[str, CostFormula] = {f.name: f for f in [
    CostFormula("cbam_channel", lambda C, r: 4 * _div(C * C, r), lambda C, r: 4 * _div(C * C, r),
                "CBAM shared MLP, avg and max branches each counted: 2(C*C/r + C/r*C)"),
    CostFormula("lcbam_channel", lambda C, r: 2 * _div(C * C, r), lambda C, r: 2 * _div(C * C, r),
                "two bias-free pointwise convs C->C/r->C: 2(C*C/r)"),
    CostFormula("cbam_spatial", lambda: 98, lambda H, W: 98 * H * W,
                "7x7 conv over the 2-channel stats map: 7*7*2*H*W"),
    CostFormula("spatial_kxk", lambda k: 2 * k * k, lambda k, H, W: 2 * k * k * H * W,
                "k x k conv over the 2-channel stats map"),
    CostFormula("lcbam_spatial_3x3", lambda: 18, lambda H, W: 18 * H * W,
                "3x3 over 2 stats channels: 3*3*2*H*W"),
    CostFormula("lcbam_spatial_summary", None, lambda H, W: 9 * H * W,
                "summary-table entry 9HW for the lightweight spatial gate"),
    CostFormula("p_cbam", lambda C, r: 2 * _div(C * C, r) + 98, None,
                "total CBAM parameters 2C^2/r + 98"),
    CostFormula("p_vit", lambda C: 4 * C * C, lambda C, N: 4 * N * C * C + 2 * N * N * C,
                "Q, K, V, O projections 4C^2; MACs 4NC^2 + 2N^2C"),
    CostFormula("p_lcbam", lambda C, r: 2 * _div(C * C, r) + 49 * C, None,
                "multiscale LCBAM parameters 2C^2/r + 49C"),
    CostFormula("p_mscb", lambda C: C * C + 3 * C, None,
                "multiscale conv block parameters C^2 + 3C"),
    CostFormula("msdc_weights", lambda C, K, d: C * sum(k ** d for k in K),
                lambda C, K, d, positions: C * sum(k ** d for k in K) * positions,
                "parallel depthwise branches: C * sum_k k^d"),
    CostFormula("dwcb", lambda C, k, d: k ** d * C + C + 2 * C, None,
                "depthwise k^d*C + bias C + BN 2C"),
    CostFormula("pointwise", lambda Cin, Cout: Cin * Cout, lambda Cin, Cout, positions: Cin * Cout * positions,
                "1x1 conv weights Cin*Cout"),
]}


def eval_formula(f: CostFormula | str, bindings: dict, quantity: str = "params") -> int:
    """Evaluate a formula's params or flops expression with the given symbol bindings."""
    if isinstance(f, str):
        f = FORMULAS[f]
    fn = f.params if quantity == "params" else f.flops
    if fn is None:
        raise BindingError(f"formula {f.name!r} has no {quantity} expression")
    missing = [s for s in f.symbols(quantity) if s not in bindings]
    if missing:
        raise BindingError(f"formula {f.name!r} needs unbound symbol(s) {missing}")
    value = fn(**{s: bindings[s] for s in f.symbols(quantity)})
    value = int(value)
    if value < 0:
        raise ConfigError(f"formula {f.name!r} evaluated negative")
    return value


# ---------------------------------------------------------------- counting oracle

@dataclass
class ParamCount:
    total: int
    weights: int
    bias: int
    bn: int
    records: list[ParamRecord] = field(default_factory=list)

    def breakdown(self) -> list[dict]:
        return [{"name": r.name, "shape": list(r.shape), "count": r.count, "kind": r.kind, "uses": r.uses}
                for r in self.records]


def count_params(block: Module, convention: str = "per_use") -> ParamCount:
    """Sum ParamRecord counts, sorted by name.

    ``per_use`` multiplies each record by the number of branches that apply it
    (CBAM's shared MLP counts twice); ``unique`` counts every tensor once.
    """
    if convention not in ("per_use", "unique"):
        raise ValueError(f"unknown convention {convention!r}")
    records = sorted(block.param_records(), key=lambda r: r.name)
    totals = {"weight": 0, "bias": 0, "bn": 0}
    for r in records:
        totals[r.kind] += r.count * (r.uses if convention == "per_use" else 1)
    return ParamCount(sum(totals.values()), totals["weight"], totals["bias"], totals["bn"], records)


def measure_macs(block: Module, input_shape: Sequence[int], seed: int = 0) -> int:
    """Run one eval-mode forward at ``input_shape`` and return the conv MAC count."""
    x = Rng(seed).uniform(-1.0, 1.0, tuple(input_shape))
    was = block.training
    block.eval()
    try:
        with ad.count_macs() as counter:
            block(x)
    finally:
        block.train(was)
    return counter.total


def vit_attention_cost(C: int, N: int, flop_convention: str = "mac") -> tuple[int, int]:
    """Analytic ViT self-attention cost: params 4C^2, MACs 4NC^2 + 2N^2C."""
    if C < 1 or N < 1:
        raise ConfigError("C and N must be >= 1")
    flops = 4 * N * C * C + 2 * N * N * C
    return 4 * C * C, flops * (2 if flop_convention == "2x" else 1)


# ---------------------------------------------------------------- block configs

BLOCK_TYPES = ("lcbam", "cbam", "channel_attention", "cbam_channel", "spatial_attention",
               "dwcb", "msdc", "m2b", "pointwise")


def build_block(cfg: dict, rng: Rng | None = None) -> tuple[Module, tuple[int, ...]]:
    """Instantiate a block from a JSON config such as ``{"type": "lcbam", "C": 64, "r": 16, "k": 7}``.

    Returns the block and the input shape it is measured at (``H``, ``W`` and
    optional ``D`` default to 32, 32 and absent).
    """
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigError("block config must be an object with a 'type' field")
    kind = cfg["type"]
    if kind not in BLOCK_TYPES:
        raise ConfigError(f"unknown block type {kind!r}; expected one of {BLOCK_TYPES}")
    try:
        C = int(cfg["C"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"block {kind!r} needs an integer 'C'") from None
    r = int(cfg.get("r", 16))
    k = int(cfg.get("k", 7 if kind in ("lcbam", "cbam", "spatial_attention") else 3))
    spatial = tuple(int(cfg[a]) for a in ("H", "W", "D") if a in cfg) or (32, 32)
    if len(spatial) == 1:
        raise ConfigError("give both H and W")
    d = len(spatial)
    with_bn = bool(cfg.get("with_bn", True))
    if kind == "lcbam":
        block = LCBAM(ChannelAttentionCfg(C, r, with_bn), SpatialAttentionCfg(k), d, rng)
    elif kind == "cbam":
        block = CBAM(C, r, k, d, rng)
    elif kind == "channel_attention":
        block = ChannelAttention(ChannelAttentionCfg(C, r, with_bn), d, rng)
    elif kind == "cbam_channel":
        block = CBAMChannel(C, r, d, rng)
    elif kind == "spatial_attention":
        block = SpatialAttention(SpatialAttentionCfg(k), d, rng)
    elif kind == "dwcb":
        block = DWCB(C, k, d, bool(cfg.get("bias", True)), with_bn, rng)
    elif kind == "msdc":
        block = MSDC(MsdcCfg(C, tuple(cfg.get("K", (3, 5, 7)))), d, bool(cfg.get("bias", True)), with_bn, rng)
    elif kind == "m2b":
        block = M2B(M2bCfg(C, cfg.get("t", 2), int(cfg.get("groups", 2)), tuple(cfg.get("K", (3, 5, 7)))), d, rng)
    else:
        block = Conv(C, int(cfg.get("C_out", C)), 1, d, "pointwise", bias=bool(cfg.get("bias", False)), rng=rng)
    return block, (1, C) + spatial


def block_label(cfg: dict) -> str:
    keys = [k for k in sorted(cfg) if k != "type"]
    return cfg["type"] + "(" + ",".join(f"{k}={cfg[k]}" for k in keys) + ")"


# ---------------------------------------------------------------- published figures

@dataclass(frozen=True)
class Figure:
    """A published table entry: exact (symbolic), approximate ("~16K") or qualitative."""

    text: str
    kind: str  # exact | approx | percent | qualitative
    value: float | None = None
    lo: float | None = None
    hi: float | None = None


_SUFFIX = {"K": 1e3, "M": 1e6, "G": 1e9}


def approx_figure(text: str) -> Figure:
    """``~16K`` -> the half-unit rounding interval [15.5K, 16.5K).

    Trailing zeros of an integer are not significant: ``~270M`` is read to two
    figures, [265M, 275M).
    """
    body = text.lstrip("~")
    scale = _SUFFIX.get(body[-1], 1.0)
    number = body[:-1] if body[-1] in _SUFFIX else body
    if "." in number:
        exponent = -len(number.split(".")[1])
    else:
        exponent = len(number) - len(number.rstrip("0")) if number.strip("0") else 0
    half = 0.5 * 10 ** exponent
    v = float(number)
    return Figure(text, "approx", v * scale, (v - half) * scale, (v + half) * scale)


def percent_figure(text: str, value: float, approx: bool) -> Figure:
    if not approx:
        return Figure(text, "percent", value, value, value)
    return Figure(text, "percent", value, value - 5.0, value + 5.0)


def verdict(fig: Figure, ours: float | None) -> str:
    if fig.kind == "qualitative" or ours is None:
        return "qualitative"
    if fig.kind == "exact":
        return "match" if ours == fig.value else "discrepancy"
    if fig.kind == "percent":
        if fig.lo == fig.hi:
            return "match" if math.isclose(ours, fig.value, abs_tol=1e-9) else "discrepancy"
        return "match" if fig.lo <= ours < fig.hi else "discrepancy"
    if fig.lo <= ours < fig.hi:
        return "match"
    # order-of-magnitude check: some value in the rounding interval lies within a factor 2
    if ours > 0 and fig.lo <= 2 * ours and fig.hi >= ours / 2:
        return "approx"
    return "discrepancy"


# ---------------------------------------------------------------- report

@dataclass
class BlockCost:
    name: str
    analytic_params: int | None
    counted_params: int | None
    counted_weights: int | None
    analytic_flops: int | None
    measured_macs: int | None
    notes: list[str] = field(default_factory=list)
    breakdown: dict = field(default_factory=dict)

    @property
    def delta_params(self):
        if self.analytic_params is None or self.counted_weights is None:
            return None
        return self.counted_weights - self.analytic_params

    @property
    def delta_flops(self):
        if self.analytic_flops is None or self.measured_macs is None:
            return None
        return self.measured_macs - self.analytic_flops

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "analytic_params": self.analytic_params,
            "counted_params": self.counted_params,
            "counted_weights": self.counted_weights,
            "delta_params": self.delta_params,
            "analytic_flops": self.analytic_flops,
            "measured_macs": self.measured_macs,
            "delta_flops": self.delta_flops,
            "breakdown": self.breakdown,
            "notes": list(self.notes),
        }


@dataclass
class Cell:
    id: str
    row: str
    column: str
    published: Figure
    ours: float | None
    notes: list[str] = field(default_factory=list)
    variants: list[dict] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return verdict(self.published, self.ours)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "row": self.row,
            "column": self.column,
            "published": self.published.text,
            "published_interval": [self.published.lo, self.published.hi] if self.published.lo is not None else None,
            "ours": self.ours,
            "verdict": self.verdict,
            "notes": list(self.notes),
            "variants": list(self.variants),
        }


@dataclass
class CostReport:
    config: dict
    blocks: list[BlockCost]
    tables: dict[str, list[Cell]]

    def cells(self) -> list[Cell]:
        return [c for cells in self.tables.values() for c in cells]

    def cell(self, cell_id: str) -> Cell:
        for c in self.cells():
            if c.id == cell_id:
                return c
        raise KeyError(cell_id)

    def block(self, name: str) -> BlockCost:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def unexpected_discrepancies(self, allowlist: Sequence[str]) -> list[str]:
        allowed = set(allowlist)
        return [c.id for c in self.cells() if c.verdict == "discrepancy" and c.id not in allowed]

    def to_json(self) -> dict:
        return {
            "config": dict(self.config),
            "blocks": [b.to_json() for b in self.blocks],
            "tables": {name: [c.to_json() for c in cells] for name, cells in self.tables.items()},
        }


def load_allowlist() -> dict[str, str]:
    """Known, documented mismatches between the published tables and exact counts."""
    raw = resources.files("mlrupp").joinpath("data/known_discrepancies.json").read_text()
    return json.loads(raw)["cells"]


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float) and not v.is_integer():
        return f"{v:.4g}"
    return f"{int(v):,}"


def block_cost(name: str, block: Module, input_shape, analytic_params=None, analytic_flops=None,
               convention: str = "per_use", flop_scale: int = 1, notes=()) -> BlockCost:
    pc = count_params(block, convention)
    macs = measure_macs(block, input_shape) * flop_scale
    bc = BlockCost(name, analytic_params, pc.total, pc.weights,
                   None if analytic_flops is None else analytic_flops * flop_scale, macs, list(notes),
                   {"weight": pc.weights, "bias": pc.bias, "bn": pc.bn,
                    "unique_weights": count_params(block, "unique").weights})
    if bc.delta_params not in (None, 0) and not bc.notes:
        bc.notes.append("counted weights differ from the closed form")
    if bc.delta_flops not in (None, 0) and not any("MAC" in n for n in bc.notes):
        bc.notes.append("measured MACs differ from the closed form")
    return bc


def emit_comparison_tables(C: int = 64, H: int = 32, W: int = 32, r: int = 16,
                           expansion: float = 2, flop_convention: str = "mac", seed: int = 0,
                           extra_blocks: Sequence[dict] = ()) -> CostReport:
    """Instantiate every block at (C, H, W, r), count it, and score each published table cell."""
    if flop_convention not in FLOP_CONVENTIONS:
        raise ConfigError(f"flop convention must be one of {FLOP_CONVENTIONS}")
    ChannelAttentionCfg(C, r)
    fs = 2 if flop_convention == "2x" else 1
    rng = Rng(seed)
    HW = H * W
    N = HW
    b = {"C": C, "r": r, "H": H, "W": W, "N": N, "d": 2, "positions": HW}
    x_full = (1, C, H, W)

    lc_ch = ChannelAttention(ChannelAttentionCfg(C, r, with_bn=False), 2, rng)
    lc_ch_bn = ChannelAttention(ChannelAttentionCfg(C, r, with_bn=True), 2, rng)
    cb_ch = CBAMChannel(C, r, 2, rng)
    spatial = {k: SpatialAttention(SpatialAttentionCfg(k), 2, rng) for k in (1, 3, 7)}
    lcbam_k = {k: LCBAM(ChannelAttentionCfg(C, r, True), SpatialAttentionCfg(k), 2, rng) for k in (3, 7)}
    cbam = CBAM(C, r, 7, 2, rng)
    msdc_main = MSDC(MsdcCfg(C, (3, 5, 7)), 2, bias=False, bn=False, rng=rng)
    msdc_alt = MSDC(MsdcCfg(C, (1, 3, 5)), 2, bias=False, bn=False, rng=rng)
    m2b_cfg = M2bCfg(C, expansion, 2, (3, 5, 7))
    m2b = M2B(m2b_cfg, 2, rng)
    m2b_t1 = M2B(M2bCfg(C, 1, 2, (1, 3, 5)), 2, rng)
    dw = DWCB(C, 3, 2, rng=rng)

    blocks = [
        block_cost("lcbam_channel", lc_ch, x_full, eval_formula("lcbam_channel", b),
                   eval_formula("lcbam_channel", b, "flops"), flop_scale=fs),
        block_cost("lcbam_channel_bn", lc_ch_bn, x_full, eval_formula("lcbam_channel", b),
                   eval_formula("lcbam_channel", b, "flops"), flop_scale=fs,
                   notes=[f"BN adds {2 * (C // r)} params (2C/r); weights-only count matches 2C^2/r"]),
        block_cost("cbam_channel", cb_ch, x_full, eval_formula("cbam_channel", b),
                   eval_formula("cbam_channel", b, "flops"), flop_scale=fs,
                   notes=[f"W0/W1 shared by both descriptors: {count_params(cb_ch, 'unique').weights} unique "
                          "weights, counted once per branch"]),
        block_cost("cbam_spatial_k7", spatial[7], (1, 2, H, W), eval_formula("cbam_spatial", b),
                   eval_formula("cbam_spatial", b, "flops"), flop_scale=fs),
    ]
    for k in (7, 3, 1):
        kb = dict(b, k=k)
        note = []
        if k == 3:
            note = [f"3*3*2*H*W = 18HW; the 9HW summary entry would be {9 * HW:,}"]
        blocks.append(block_cost(f"lcbam_spatial_k{k}", spatial[k], (1, C, H, W),
                                 eval_formula("spatial_kxk", kb), eval_formula("spatial_kxk", kb, "flops"),
                                 flop_scale=fs, notes=note))
    lc_analytic = eval_formula("lcbam_channel", b) + 98
    blocks.append(block_cost(
        "lcbam", lcbam_k[7], x_full, lc_analytic,
        eval_formula("lcbam_channel", b, "flops") + eval_formula("cbam_spatial", b, "flops"), flop_scale=fs,
        notes=[f"2-channel 7x7 spatial gate gives 2C^2/r + 98 = {lc_analytic:,}; "
               f"the 2C^2/r + 49C accounting gives {eval_formula('p_lcbam', b):,} "
               "(a per-channel depthwise 7x7 that cannot produce a single-channel map)"]))
    blocks.append(BlockCost(
        "lcbam_49C_accounting", eval_formula("p_lcbam", b), count_params(lcbam_k[7]).total,
        count_params(lcbam_k[7]).weights, None, None,
        [f"closed form 2C^2/r + 49C = {eval_formula('p_lcbam', b):,} vs exact "
         f"{count_params(lcbam_k[7]).weights:,} weights; 49C term is a known inconsistency"]))
    blocks.append(block_cost("cbam", cbam, x_full, eval_formula("cbam_channel", b) + 98,
                             eval_formula("cbam_channel", b, "flops") + eval_formula("cbam_spatial", b, "flops"),
                             flop_scale=fs))
    for name, blk, K in (("msdc_k357", msdc_main, (3, 5, 7)), ("msdc_k135", msdc_alt, (1, 3, 5))):
        kb = dict(b, K=K)
        blocks.append(block_cost(name, blk, x_full, eval_formula("msdc_weights", kb),
                                 eval_formula("msdc_weights", kb, "flops"), flop_scale=fs,
                                 notes=[f"bias and BN off; weights C * sum k^2 = {eval_formula('msdc_weights', kb):,}"]))
    blocks.append(block_cost("dwcb_k3", dw, x_full, 9 * C, 9 * C * HW, flop_scale=fs,
                             notes=[f"bias C and BN 2C on top: k^2*C + 3C = {eval_formula('dwcb', dict(b, k=3)):,}"]))
    e = m2b_cfg.expanded
    m2b_weights = C * e + e * C + e * sum(k * k for k in m2b_cfg.kernels)
    m2b_flops = (2 * C * e + e * sum(k * k for k in m2b_cfg.kernels)) * HW
    blocks.append(block_cost(
        "m2b", m2b, x_full, m2b_weights, m2b_flops, flop_scale=fs,
        notes=[f"t={expansion}: two pointwise layers 2tC^2 plus depthwise tC*sum k^2; "
               f"C^2 + 3C closed form gives {eval_formula('p_mscb', b):,}"]))
    t1_weights = count_params(m2b_t1).weights
    blocks.append(BlockCost(
        "mscb_closed_form", eval_formula("p_mscb", b), count_params(m2b_t1).total, t1_weights, None, None,
        [f"C^2 + 3C = {eval_formula('p_mscb', b):,} for k in {{1,3,5}} does not match any assembly; "
         f"smallest M2B (t=1, k in {{1,3,5}}) has {t1_weights:,} weights"]))
    for cfg in extra_blocks:
        blk, shape = build_block(cfg, rng)
        blocks.append(block_cost(block_label(cfg), blk, shape, flop_scale=fs,
                                 notes=["user-supplied block; counted and measured only"]))
    vp, vf = vit_attention_cost(C, N, flop_convention)
    blocks.append(BlockCost("vit_attention", vp, None, None, vf, None,
                            ["analytic only; no forward implementation"]))

    tables = {"cbam_vs_lcbam": _summary_cells(b, blocks, HW, fs),
              "empirical_cost": _empirical_cells(b, blocks, fs, flop_convention)}
    config = {"C": C, "H": H, "W": W, "r": r, "N": N, "expansion": expansion,
              "flop_convention": flop_convention, "seed": seed, "blocks": [dict(c) for c in extra_blocks]}
    return CostReport(config, blocks, tables)


def _by_name(blocks):
    return {bc.name: bc for bc in blocks}


def _summary_cells(b, blocks, HW, fs) -> list[Cell]:
    bn = _by_name(blocks)
    cb_c, lc_c = bn["cbam_channel"].counted_weights, bn["lcbam_channel"].counted_weights
    cb_s = bn["cbam_spatial_k7"].measured_macs
    k3, k1, k7 = (bn[f"lcbam_spatial_k{k}"].measured_macs for k in (3, 1, 7))
    exact = lambda text, v: Figure(text, "exact", v, v, v)
    red_ch = 100.0 * (1 - lc_c / cb_c)
    red_sp = 100.0 * (1 - k3 / cb_s)
    return [
        Cell("cbam_vs_lcbam.channel.cbam", "Channel Attention", "CBAM",
             exact("4C^2/r", eval_formula("cbam_channel", b)), cb_c,
             ["counted per branch: shared MLP applied to avg and max descriptors"]),
        Cell("cbam_vs_lcbam.channel.lcbam", "Channel Attention", "LCBAM",
             exact("2C^2/r", eval_formula("lcbam_channel", b)), lc_c),
        Cell("cbam_vs_lcbam.channel.reduction", "Channel Attention", "Reduction",
             percent_figure("50% fewer params", 50.0, approx=False), red_ch,
             [f"LCBAM/CBAM param ratio {lc_c / cb_c:.2f}"]),
        Cell("cbam_vs_lcbam.spatial.cbam", "Spatial Attention", "CBAM",
             exact("98HW", 98 * HW * fs), cb_s),
        Cell("cbam_vs_lcbam.spatial.lcbam", "Spatial Attention", "LCBAM",
             exact("9HW", 9 * HW * fs), k3,
             ["ours = 3x3 conv over 2 stats channels = 3*3*2*H*W = 18HW; "
              "9HW drops the factor 2 for the two stats channels"],
             [{"label": "k=7 (implementation default)", "value": k7},
              {"label": "k=1", "value": k1}]),
        Cell("cbam_vs_lcbam.spatial.reduction", "Spatial Attention", "Reduction",
             percent_figure("~90% fewer FLOPs", 90.0, approx=True), red_sp,
             [f"18HW vs 98HW is a {red_sp:.1f}% reduction; ~90% needs the 9HW table entry "
              f"({100 * (1 - 9 / 98):.1f}%)"],
             [{"label": "k=1", "value": 100.0 * (1 - k1 / cb_s)},
              {"label": "k=7 (implementation default)", "value": 100.0 * (1 - k7 / cb_s)}]),
        Cell("cbam_vs_lcbam.total.cbam", "Total", "CBAM", Figure("Moderate", "qualitative"), None,
             [f"params {bn['cbam'].counted_weights:,}, MACs {bn['cbam'].measured_macs:,}"]),
        Cell("cbam_vs_lcbam.total.lcbam", "Total", "LCBAM", Figure("Ultra-lightweight", "qualitative"), None,
             [f"params {lc_c + 18:,} (k=3 spatial), MACs {bn['lcbam_channel'].measured_macs + k3:,}"]),
        Cell("cbam_vs_lcbam.total.reduction", "Total", "Reduction", Figure("Significant", "qualitative"), None,
             [f"MACs reduced {100 * (1 - (bn['lcbam_channel'].measured_macs + k3) / bn['cbam'].measured_macs):.1f}%"]),
    ]


def _empirical_cells(b, blocks, fs, flop_convention) -> list[Cell]:
    bn = _by_name(blocks)
    vit = bn["vit_attention"]
    quad = 2 * b["N"] ** 2 * b["C"] * fs
    lc, cbam, m2b = bn["lcbam"], bn["cbam"], bn["m2b"]
    ml_params = lc.counted_params + m2b.counted_params
    ml_macs = lc.measured_macs + m2b.measured_macs
    closed = eval_formula("p_lcbam", b) + eval_formula("p_mscb", b)
    fig = approx_figure
    cells = [
        Cell("empirical_cost.vit.params", "ViT Attention", "Parameters", fig("~16K"), vit.analytic_params,
             ["4C^2 for the Q, K, V, O projections"]),
        Cell("empirical_cost.vit.flops", "ViT Attention", "FLOPs", fig("~270M"), vit.analytic_flops,
             [f"total 4NC^2 + 2N^2C under the '{flop_convention}' convention"],
             [{"label": "quadratic term 2N^2C", "value": quad, "verdict": verdict(fig("~270M"), quad)},
              {"label": "total, multiply+add counted separately",
               "value": vit.analytic_flops * (1 if fs == 2 else 2),
               "verdict": verdict(fig("~270M"), vit.analytic_flops * (1 if fs == 2 else 2))}]),
        Cell("empirical_cost.cbam.params", "CBAM", "Parameters", fig("~0.6K"),
             cbam.breakdown["unique_weights"],
             ["unique weights 2C^2/r + 98 (shared MLP counted once), the closed form's own convention"],
             [{"label": "per-branch convention", "value": cbam.counted_weights,
               "verdict": verdict(fig("~0.6K"), cbam.counted_weights)}]),
        Cell("empirical_cost.cbam.flops", "CBAM", "FLOPs", fig("~1.2M"), cbam.measured_macs,
             ["measured conv MACs; no stated derivation reaches 1.2M at C=64, H=W=32"]),
        Cell("empirical_cost.lcbam.params", "LCBAM", "Parameters", fig("~12K"), lc.counted_params,
             ["exact count of the 2-channel 7x7 design (incl. BN)",
              f"2C^2/r + 49C accounting gives {eval_formula('p_lcbam', b):,}; neither is near 12K"],
             [{"label": "2C^2/r + 49C", "value": eval_formula("p_lcbam", b),
               "verdict": verdict(fig("~12K"), eval_formula("p_lcbam", b))}]),
        Cell("empirical_cost.lcbam.flops", "LCBAM", "FLOPs", fig("~0.3M"), lc.measured_macs,
             ["measured MACs at k=7; no stated H, W, r derivation for 0.3M"],
             [{"label": "k=3 spatial", "value": bn["lcbam_channel"].measured_macs + bn["lcbam_spatial_k3"].measured_macs}]),
        Cell("empirical_cost.multiscale_lcbam.params", "Multiscale LCBAM", "Parameters", fig("~16K"),
             ml_params, ["LCBAM + M2B (t=2, k in {3,5,7}) exact count"],
             [{"label": "closed forms 2C^2/r + 49C + C^2 + 3C", "value": closed,
               "verdict": verdict(fig("~16K"), closed)}]),
        Cell("empirical_cost.multiscale_lcbam.flops", "Multiscale LCBAM", "FLOPs", fig("~3.5M"),
             ml_macs, ["measured MACs; two pointwise layers alone cost 2tC^2*HW"]),
    ]
    return cells


# ---------------------------------------------------------------- rendering

def render_table(report: CostReport, table: str) -> str:
    cells = report.tables[table]
    header = ["Cell", "Row", "Column", "Published", "Ours", "Verdict"]
    rows = [[c.id.split(".", 1)[1], c.row, c.column, c.published.text, _fmt(c.ours), c.verdict] for c in cells]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    line = lambda cols: "  ".join(col.ljust(w) for col, w in zip(cols, widths)).rstrip()
    out = [table, line(header), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    notes = [f"  [{c.id.split('.', 1)[1]}] {n}" for c in cells for n in c.notes]
    if notes:
        out.append("notes:")
        out += notes
    return "\n".join(out) + "\n"


def render_blocks(report: CostReport) -> str:
    header = ["Block", "Analytic params", "Counted weights", "Counted total", "dParams",
              "Analytic FLOPs", "Measured MACs", "dFLOPs"]
    rows = [[b.name, _fmt(b.analytic_params), _fmt(b.counted_weights), _fmt(b.counted_params),
             _fmt(b.delta_params), _fmt(b.analytic_flops), _fmt(b.measured_macs), _fmt(b.delta_flops)]
            for b in report.blocks]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    line = lambda cols: "  ".join(col.rjust(w) if i else col.ljust(w)
                                  for i, (col, w) in enumerate(zip(cols, widths))).rstrip()
    out = ["blocks", line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]
    return "\n".join(out) + "\n"


def render_report(report: CostReport) -> str:
    cfg = report.config
    head = (f"C={cfg['C']} H={cfg['H']} W={cfg['W']} r={cfg['r']} N={cfg['N']} "
            f"flops={cfg['flop_convention']}\n\n")
    return head + render_blocks(report) + "\n" + "\n".join(render_table(report, t) for t in report.tables)
