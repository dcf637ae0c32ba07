# Finite-difference checks of the reverse-mode gradients
#
# Each case builds a scalar loss, computes analytic gradients with one backward
# pass and compares a sample of coordinates with central differences
# (step 1e-5).  A coordinate passes when the two agree to a relative 1e-5,
# with an absolute floor of 1e-8.

from shufflepose import gradsuite

print("available cases:", ", ".join(gradsuite.case_names()))

for result in gradsuite.run_suite(["conv2d_3x3_pad1", "channel_shuffle", "scarb", "csm_forward"]):
    print(result.line())

# The full model at desk scale (128x96 input, 16 channels) samples two
# coordinates per parameter tensor.  Its largest relative error can exceed
# 1e-5 on a coordinate with a tiny gradient; that coordinate still passes
# because its absolute error is under the 1e-8 floor.

print(gradsuite.run_suite(["forward_loss_128x96_D16"])[0].line())
