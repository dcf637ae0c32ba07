# Channel shuffle and the channel shuffle module
#
# A pyramid of four feature maps (strides 4, 8, 16, 32) is brought to one
# resolution, stacked along channels, shuffled so that every group of channels
# draws from every level, split again and sent back to each level's size.

import numpy as np

from shufflepose import tensor as T
from shufflepose.csm import LEVELS, ShuffleSpec, csm_forward, identity_csm, shuffle_permutation, shuffled_features
from shufflepose.tensor import Tensor

# The permutation for 8 channels in 2 groups.  Entry i names the source
# channel that lands in output slot i.

print(shuffle_permutation(ShuffleSpec(2, 8)))

# The same thing as reshape -> transpose -> flatten on channel indices:

print(np.arange(8).reshape(2, 4).T.reshape(-1))

# With 4 levels of D = 4 channels and g = 4, the 16 stacked channels are
# dealt out so each 4-channel block holds one channel from each level.

spec = ShuffleSpec(4, 16)
perm = shuffle_permutation(spec)
print("source level of each shuffled channel:")
print((perm // 4 + 2).reshape(4, 4))

# Run the module on a random pyramid.  Each output level keeps its spatial
# size and doubles its channels: shuffled features next to the originals.

rng = np.random.default_rng(0)
pyramid = {lvl: Tensor(rng.standard_normal((1, 4, 16 >> (lvl - 2), 24 >> (lvl - 2)))) for lvl in LEVELS}
out = csm_forward(pyramid, spec, identity_csm(4))
for lvl in LEVELS:
    print(f"level {lvl}: in {pyramid[lvl].shape} -> out {out[lvl].shape}")

# With a single group the shuffle is the identity, and average pooling undoes
# nearest upsampling, so the shuffled half reproduces the input pyramid.

noop = shuffled_features(pyramid, ShuffleSpec(1, 16), identity_csm(4))
print("g=1 max deviation:", max(np.abs(noop[lvl].data - pyramid[lvl].data).max() for lvl in LEVELS))

# With g = 4 the first channel at level 2 is level 2's own channel 0, the
# second is level 3's channel 0 brought up to level-2 resolution, and so on.

mixed = shuffled_features(pyramid, spec, identity_csm(4))
up3 = T.upsample_nearest(pyramid[3], 2).data
print("level-2 slot 1 equals upsampled level-3 channel 0:", np.array_equal(mixed[2].data[0, 1], up3[0, 0]))
