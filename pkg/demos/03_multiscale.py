"""Depthwise multiscale convolution and the inverted-residual M2B block."""
import numpy as np

from mlrupp import autodiff as ad
from mlrupp.multiscale import M2B, M2bCfg, MsdcCfg, m2b_param_count, msdc
from mlrupp.tensor import Rng

x = Rng(0).uniform(-1, 1, (1, 8, 6, 6, 6))

# zero-initialised depthwise branches add nothing, so MSDC starts as the identity
print("MSDC(zero init) is identity:", np.array_equal(msdc(x, MsdcCfg(8, (3, 5, 7))), x))

# label each channel with its index to see where the shuffle sends it
tags = ad.Var(np.arange(8.0).reshape(1, 8, 1, 1, 1))
print("channel order after shuffle(groups=2):", ad.channel_shuffle(tags, 2).data.ravel().astype(int))
v = ad.Var(x)
print("unshuffle restores:", np.array_equal(ad.channel_unshuffle(ad.channel_shuffle(v, 2), 2).data, x))

cfg = M2bCfg(8, 2, 2, (3, 5, 7))
block = M2B(cfg, 3, Rng(2)).eval()
y = block(x)
print("M2B out", y.shape, "params", m2b_param_count(cfg, 3), "==", block.num_params())

with ad.count_macs() as macs:
    block(x)
print("M2B MACs at 6^3:", macs.total)
