"""Closed-form cost formulas checked against counted parameters and measured MACs."""
from mlrupp.costs import FORMULAS, emit_comparison_tables, eval_formula, render_table

for name in ("lcbam_channel", "cbam_channel", "cbam_spatial", "lcbam_spatial_3x3"):
    f = FORMULAS[name]
    print(f"{name:18s} symbols {f.symbols('flops')}: {f.source}")

print("2C^2/r at C=64, r=16:", eval_formula("lcbam_channel", {"C": 64, "r": 16}))

report = emit_comparison_tables()
for b in report.blocks[:8]:
    print(f"{b.name:22s} counted {b.counted_params!s:>6}  measured MACs {b.measured_macs!s:>8}")

print()
print(render_table(report, "cbam_vs_lcbam"))
print(render_table(report, "empirical_cost"))
