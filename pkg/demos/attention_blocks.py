# Spatial and channel attention inside a residual bottleneck
#
# The residual branch output X' is reweighted by a spatial gate (one weight per
# position) and a channel gate (one weight per channel) before it is added to
# the identity path.  The two orders give two blocks: spatial first (SCARB)
# and channel first (CSARB).

import numpy as np

from shufflepose.attention import (
    channel_weights, csarb, init_channel, init_spatial, scarb, spatial_weights, zero_channel, zero_spatial,
)
from shufflepose.layers import init_bottleneck, residual_bottleneck, residual_branch
from shufflepose.tensor import Tensor

rng = np.random.default_rng(0)
c = 8
x = Tensor(rng.standard_normal((1, c, 6, 6)))
bottleneck = init_bottleneck(rng, c, c)
spatial, channel = init_spatial(rng, c), init_channel(rng, c)
spatial.bias.data[:] = 0.5

# Gates are sigmoids, so they stay strictly between 0 and 1.

beta = spatial_weights(residual_branch(x, bottleneck), spatial)
alpha = channel_weights(residual_branch(x, bottleneck), channel)
print("spatial gate shape", beta.shape, "range", beta.data.min().round(3), beta.data.max().round(3))
print("channel gate shape", alpha.shape, "range", alpha.data.min().round(3), alpha.data.max().round(3))

# Each gate is computed from the map it multiplies, so the two orders differ.

a, b = scarb(x, bottleneck, spatial, channel), csarb(x, bottleneck, spatial, channel)
print("max |SCARB - CSARB|:", np.abs(a.data - b.data).max())

# With all attention parameters at zero both gates are sigmoid(0) = 0.5, the
# branch is scaled by a quarter and the two orders agree exactly.

z = scarb(x, bottleneck, zero_spatial(c), zero_channel(c))
print("zero gates, SCARB == CSARB:", np.array_equal(z.data, csarb(x, bottleneck, zero_spatial(c), zero_channel(c)).data))
quarter = np.maximum(x.data + 0.25 * residual_branch(x, bottleneck).data, 0)
print("zero gates, max deviation from relu(x + F(x)/4):", np.abs(z.data - quarter).max())

# For comparison, the plain bottleneck adds the full branch.

print("plain block output mean:", residual_bottleneck(x, bottleneck).data.mean().round(4))
