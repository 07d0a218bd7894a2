import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlrupp.attention import (
    CBAM,
    LCBAM,
    CBAMChannel,
    ChannelAttention,
    ChannelAttentionCfg,
    SpatialAttention,
    SpatialAttentionCfg,
)
from mlrupp.costs import (
    FORMULAS,
    Figure,
    approx_figure,
    build_block,
    count_params,
    emit_comparison_tables,
    eval_formula,
    load_allowlist,
    measure_macs,
    render_report,
    verdict,
    vit_attention_cost,
)
from mlrupp.errors import BindingError, ConfigError
from mlrupp.multiscale import DWCB
from mlrupp.nn import Conv
from mlrupp.tensor import Rng
from mlrupp.validate import validate

GRID = [(C, r) for C in (16, 32, 64, 128) for r in (1, 2, 4, 8, 16) if C % r == 0]


@pytest.fixture(scope="module")
def report():
    return emit_comparison_tables()


def test_formula_examples():
    assert eval_formula("lcbam_channel", {"C": 64, "r": 16}) == 512
    assert eval_formula("cbam_spatial", {"H": 32, "W": 32}, "flops") == 100352
    assert eval_formula("p_vit", {"C": 64}) == 16384
    assert eval_formula("p_cbam", {"C": 64, "r": 16}) == 610
    assert eval_formula("p_lcbam", {"C": 64, "r": 16}) == 3648
    assert eval_formula("p_mscb", {"C": 64}) == 4288


def test_unbound_symbol():
    with pytest.raises(BindingError, match="r"):
        eval_formula("lcbam_channel", {"C": 64})
    with pytest.raises(BindingError):
        eval_formula("p_mscb", {"C": 64}, "flops")


def test_divisibility():
    with pytest.raises(ConfigError):
        eval_formula("cbam_channel", {"C": 63, "r": 16})


def test_formulas_have_sources():
    for f in FORMULAS.values():
        assert f.source and (f.params or f.flops)


@pytest.mark.parametrize("C,r", GRID)
def test_counted_equals_formula(C, r):
    b = {"C": C, "r": r, "H": 8, "W": 8}
    assert count_params(ChannelAttention(ChannelAttentionCfg(C, r, False))).total == eval_formula("lcbam_channel", b)
    assert count_params(CBAMChannel(C, r)).total == eval_formula("cbam_channel", b)
    assert count_params(SpatialAttention()).total == eval_formula("cbam_spatial", b)
    assert count_params(Conv(C, C // r, 1, 2, "pointwise", bias=False)).total == eval_formula(
        "pointwise", {"Cin": C, "Cout": C // r})
    for k in (1, 3, 5, 7):
        assert count_params(DWCB(C, k, 2)).total == eval_formula("dwcb", {"C": C, "k": k, "d": 2})


def test_count_breakdown_sorted():
    pc = count_params(LCBAM(ChannelAttentionCfg(64, 16)))
    names = [r.name for r in pc.records]
    assert names == sorted(names)
    assert (pc.weights, pc.bias, pc.bn) == (610, 0, 8)
    assert pc.total == 618


def test_dwcb_count_example():
    assert count_params(DWCB(8, 3, 2)).total == 96


@pytest.mark.parametrize("k,expected", [(7, 100352), (3, 18432), (1, 2048)])
def test_spatial_macs(k, expected):
    assert measure_macs(SpatialAttention(SpatialAttentionCfg(k)), (1, 64, 32, 32)) == expected


def test_pointwise_macs():
    assert measure_macs(Conv(4, 2, 1, 2, "pointwise"), (1, 4, 5, 5)) == 200


@given(st.sampled_from(["dense", "depthwise", "pointwise"]), st.sampled_from([1, 3, 5]),
       st.integers(1, 4), st.integers(1, 2), st.integers(3, 7), st.integers(0, 100))
def test_mac_closed_form(kind, k, cin, stride, n, seed):
    if kind == "pointwise":
        k = 1
    cout = cin if kind == "depthwise" else cin + 1
    conv = Conv(cin, cout, k, 2, kind, stride=stride, rng=Rng(seed))
    pad = (k - 1) // 2
    out = (n + 2 * pad - k) // stride + 1
    per_group = 1 if kind == "depthwise" else cin
    assert measure_macs(conv, (2, cin, n, n), seed) == k ** 2 * per_group * cout * out * out * 2


def test_macs_value_independent():
    block = CBAM(16, 4, 7, 2, Rng(0))
    assert measure_macs(block, (1, 16, 9, 9), seed=1) == measure_macs(block, (1, 16, 9, 9), seed=2)


def test_vit_cost():
    assert vit_attention_cost(64, 1024) == (16384, 4 * 1024 * 64 ** 2 + 2 * 1024 ** 2 * 64)
    assert vit_attention_cost(64, 1024)[1] == 150_994_944
    p, f = vit_attention_cost(8, 1)
    assert f - 4 * 8 * 8 == 2 * 8  # single token: quadratic term 2C
    assert vit_attention_cost(64, 1024, "2x")[1] == 2 * 150_994_944
    with pytest.raises(ConfigError):
        vit_attention_cost(0, 3)


def test_approx_figure_intervals():
    f = approx_figure("~270M")
    assert (f.lo, f.hi) == (265e6, 275e6)
    g = approx_figure("~0.6K")
    assert (g.lo, g.hi) == pytest.approx((550, 650))
    h = approx_figure("~12K")
    assert (h.lo, h.hi) == (11500, 12500)


@pytest.mark.parametrize("ours,expected", [(16384, "match"), (9000, "approx"), (30000, "approx"),
                                           (7000, "discrepancy"), (34000, "discrepancy")])
def test_verdict_rules(ours, expected):
    assert verdict(approx_figure("~16K"), ours) == expected


def test_verdict_exact_and_qualitative():
    assert verdict(Figure("4C^2/r", "exact", 1024, 1024, 1024), 1024) == "match"
    assert verdict(Figure("4C^2/r", "exact", 1024, 1024, 1024), 1023) == "discrepancy"
    assert verdict(Figure("Moderate", "qualitative"), 5) == "qualitative"


def test_cbam_vs_lcbam_cells(report):
    cells = {c.id.split(".", 1)[1]: c for c in report.tables["cbam_vs_lcbam"]}
    assert set(cells) == {f"{r}.{c}" for r in ("channel", "spatial", "total") for c in ("cbam", "lcbam", "reduction")}
    assert cells["channel.cbam"].ours == 1024 and cells["channel.lcbam"].ours == 512
    assert cells["channel.reduction"].ours == 50.0 and cells["channel.reduction"].verdict == "match"
    assert cells["spatial.cbam"].ours == 100352 and cells["spatial.cbam"].verdict == "match"
    assert cells["spatial.lcbam"].ours == 18432 and cells["spatial.lcbam"].verdict == "discrepancy"
    red = cells["spatial.reduction"]
    assert red.ours == pytest.approx(100 * (1 - 18 / 98)) and red.verdict == "discrepancy"
    assert red.notes
    assert {v["label"]: v["value"] for v in cells["spatial.lcbam"].variants}["k=1"] == 2048


def test_empirical_cells(report):
    cells = {c.id.split(".", 1)[1]: c for c in report.tables["empirical_cost"]}
    assert set(cells) == {f"{r}.{c}" for r in ("vit", "cbam", "lcbam", "multiscale_lcbam")
                          for c in ("params", "flops")}
    assert cells["vit.params"].ours == 16384 and cells["vit.params"].verdict == "match"
    quad = [v for v in cells["vit.flops"].variants if v["label"].startswith("quadratic")][0]
    assert quad["value"] == 134_217_728 and quad["verdict"] == "approx"
    assert cells["vit.flops"].verdict == "approx"
    assert cells["cbam.params"].verdict == "match"
    assert cells["lcbam.params"].verdict == "discrepancy"
    assert any("49C" in n for n in cells["lcbam.params"].notes)


def test_every_cell_has_verdict(report):
    for c in report.cells():
        assert c.verdict in {"match", "approx", "discrepancy", "qualitative"}
        if c.verdict != "match":
            assert c.notes


def test_allowlist_covers_discrepancies(report):
    allow = load_allowlist()
    assert report.unexpected_discrepancies(allow) == []
    # the allowlist must not carry stale entries
    assert set(allow) == {c.id for c in report.cells() if c.verdict == "discrepancy"}


def test_block_rows(report):
    for b in report.blocks:
        d = b.to_json()
        if d["delta_params"] not in (None, 0) or (b.analytic_params is not None and b.counted_params != b.analytic_params):
            assert d["notes"], b.name
    assert report.block("lcbam_49C_accounting").delta_params == 610 - 3648
    assert report.block("mscb_closed_form").notes


def test_report_schema_and_render(report):
    validate(report.to_json(), "cost_report")
    text = render_report(report)
    assert "cbam_vs_lcbam" in text and "empirical_cost" in text
    assert render_report(emit_comparison_tables()) == text


def test_flop_convention_2x():
    r2 = emit_comparison_tables(flop_convention="2x")
    assert r2.block("cbam_spatial_k7").measured_macs == 2 * 100352
    assert r2.cell("cbam_vs_lcbam.spatial.cbam").verdict == "match"
    with pytest.raises(ConfigError):
        emit_comparison_tables(flop_convention="3x")


def test_build_block():
    block, shape = build_block({"type": "lcbam", "C": 64, "r": 16, "k": 7, "with_bn": True})
    assert isinstance(block, LCBAM) and shape == (1, 64, 32, 32)
    assert count_params(block).total == 618
    block, shape = build_block({"type": "msdc", "C": 8, "K": [3, 5], "H": 4, "W": 4, "D": 4,
                                "bias": False, "with_bn": False})
    assert shape == (1, 8, 4, 4, 4) and count_params(block).total == 8 * (27 + 125)
    with pytest.raises(ConfigError):
        build_block({"type": "vit", "C": 4})
    with pytest.raises(ConfigError):
        build_block({"type": "lcbam"})
    with pytest.raises(ConfigError):
        build_block({"type": "lcbam", "C": 63, "r": 16})


def test_extra_blocks_in_report():
    r = emit_comparison_tables(extra_blocks=[{"type": "dwcb", "C": 8, "k": 3}])
    row = r.block("dwcb(C=8,k=3)")
    assert row.counted_params == 96 and row.measured_macs == 9 * 8 * 32 * 32
    validate(r.to_json(), "cost_report")


@pytest.mark.parametrize("C,H,r", [(16, 8, 4), (32, 16, 8), (128, 16, 16)])
def test_other_sizes(C, H, r):
    rep = emit_comparison_tables(C=C, H=H, W=H, r=r)
    assert rep.cell("cbam_vs_lcbam.channel.reduction").ours == 50.0
    assert rep.cell("cbam_vs_lcbam.spatial.cbam").ours == 98 * H * H
    validate(rep.to_json(), "cost_report")
    assert np.isfinite([c.ours for c in rep.cells() if c.ours is not None]).all()
