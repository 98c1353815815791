"""
Outer arithmetic fusion, step by step
=====================================

Two small embeddings go through the four outer operations, get stacked into
a 4-channel map, and are squeezed back to one channel by a 3x3 convolution.
"""
import numpy as np

from moadnet import fusion
from moadnet import tensor as T

np.set_printoptions(precision=3, suppress=True)

# a slide embedding W and an omic embedding o
w = np.array([0.5, -1.0, 2.0])
o = np.array([1.5, 0.25, -0.75])

###############################################################################
# Prepending a constant before the outer product keeps each input visible:
# row 0 of the product map is [1; o] and column 0 is [1; W].
stack = fusion.moab_tensor(w, o).data
for name, channel in zip(fusion.OUTER_KINDS, stack):
    print(f"{name}:\n{channel}\n")

###############################################################################
# The convolution mixes the channels; with stride 1 and padding 1 the spatial
# size is unchanged, so a 256-dim pair becomes a 257 x 257 map.
cfg = fusion.FusionConfig(mode="moab", n_out=2)
params = fusion.init_fusion_params(cfg, 3, 3, T.make_rng(0))
reduced = T.conv2d(fusion.moab_tensor(w, o), params["moab.conv.weight"], stride=1, padding=1)
print("reduced map shape:", reduced.shape)
print("logits:", fusion.moab_fuse(w, o, cfg, params).data)

###############################################################################
# Head widths of the three late-fusion aggregators at full scale.
for mode in fusion.FUSION_MODES:
    print(f"{mode:5s} head input width at 256 dims: {fusion.FusionConfig(mode=mode, n_out=4).head_width(256, 256)}")
