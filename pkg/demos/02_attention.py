"""Channel and spatial attention gates and how LCBAM composes them."""
import numpy as np

from mlrupp.attention import (
    CBAM,
    LCBAM,
    ChannelAttentionCfg,
    SpatialAttentionCfg,
    cbam_reference,
    lcbam,
)
from mlrupp.costs import count_params
from mlrupp.tensor import Rng

C, r = 16, 4
m = Rng(0).uniform(-1, 1, (1, C, 12, 12))

# with zero weights both gates sit at sigmoid(0) = 0.5, so the block scales by exactly 1/4
print("zero-weight LCBAM == m/4:", np.array_equal(lcbam(m, ChannelAttentionCfg(C, r)), 0.25 * m))
print("zero-weight CBAM  == m/4:", np.array_equal(cbam_reference(m, C, r), 0.25 * m))

block = LCBAM(ChannelAttentionCfg(C, r), SpatialAttentionCfg(7), 2, Rng(1)).eval()
maps = block.maps(m)
print("alpha", maps.alpha.shape, "range", maps.alpha.min().round(3), maps.alpha.max().round(3))
print("beta ", maps.beta.shape, "range", maps.beta.min().round(3), maps.beta.max().round(3))

for name, b in [("LCBAM", block), ("CBAM", CBAM(C, r, 7, 2, Rng(1)))]:
    pc = count_params(b)
    print(f"{name:5s} params: {pc.total} ({pc.weights} weights, {pc.bn} batch-norm)")
