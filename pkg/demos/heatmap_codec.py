# Heatmap targets, quarter-offset decoding and flip averaging
#
# Keypoints live in input pixels; heatmaps live on a grid four times coarser.

import numpy as np

from shufflepose.codec import COCO_FLIP_PAIRS, decode, encode, flip_average

# One visible keypoint at (x, y) = (40, 24) and one invisible keypoint.

kps = np.array([[40.0, 24.0, 2.0], [10.0, 10.0, 0.0]])
hm = encode(kps, 16, 12, sigma=2.0)
row, col = (int(v) for v in np.unravel_index(hm[0].argmax(), hm[0].shape))
print("peak of channel 0 at grid row", row, "col", col, "value", hm[0].max())
print("invisible channel is empty:", not hm[1].any())

# Decoding takes the argmax and nudges it a quarter cell toward the second
# highest response.  Here the runner-up sits one cell to the right.

grid = np.zeros((1, 8, 8))
grid[0, 3, 3], grid[0, 3, 4] = 0.9, 0.8
d = decode(grid)
print("decoded (x, y) in input px:", d.keypoints[0, :2], "score", d.scores[0])

# A Gaussian centred on a grid point has four equal neighbours; the lowest
# flat index wins the tie, so decoding lands within a quarter cell (one input
# pixel) of the truth.

print("roundtrip of (40, 24):", decode(encode(kps[:1], 16, 12)).keypoints[0, :2])

# Flip averaging runs the model on the image and on its mirror, mirrors the
# second result back, swaps left/right joint channels and averages.  A toy
# "model" that copies the mean image into every channel is mirror-consistent,
# so averaging leaves it unchanged.

rng = np.random.default_rng(0)
image = rng.standard_normal((1, 3, 8, 6))


def toy(batch):
    return np.repeat(batch.mean(axis=1, keepdims=True), 17, axis=1)


print("toy model unchanged by flip averaging:", np.allclose(flip_average(toy, image, COCO_FLIP_PAIRS), toy(image)))
