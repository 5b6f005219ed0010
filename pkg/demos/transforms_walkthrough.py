"""A tour of the transform stack: what GDN1 does to activations, how the
analysis and synthesis convolutions reshape an image, and the exact
transpose relationship between the two convolution types.

Run as: python3 demos/transforms_walkthrough.py
"""

import numpy as np

from arcodec.model import (Gdn1Params, ModelConfig, analysis_forward,
                           conv2d_forward, gdn1_forward, igdn1_forward,
                           init_parameters, synthesis_forward,
                           tconv2d_forward)

rng = np.random.default_rng(0)

# -- GDN1: divisive normalization without squares or roots --------------------
# Each channel is divided by an affine mix of every channel's magnitude:
#   y_c = x_c / (beta_c + sum_k gamma_ck |x_k|)
# Large activations shrink their own channel and their neighbors.

p = Gdn1Params(beta_raw=np.array([1.0, 1.0]),
               gamma_raw=np.array([[0.5, 0.1], [0.1, 0.5]]))
x = np.zeros((2, 1, 1))
for scale in (0.1, 1.0, 10.0, 100.0):
    x[0, 0, 0] = scale
    y = gdn1_forward(x, p)
    print(f"input {scale:6.1f} -> channel 0 output {y[0, 0, 0]:.4f}")
print("outputs saturate: the denominator grows with the input,")
print("so GDN1 acts as a learned, channel-coupled gain control.\n")

# IGDN1 multiplies by the same affine term. Without cross-channel
# coupling the pair is an exact inverse; with coupling it is a learned
# approximate inverse that training tightens.
x = rng.normal(size=(2, 4, 4))
diag = Gdn1Params(beta_raw=np.array([1.0, 2.0]), gamma_raw=np.zeros((2, 2)))
z = igdn1_forward(gdn1_forward(x, diag), diag)
print(f"gamma = 0:   igdn1(gdn1(x)) off by {np.max(np.abs(z - x)):.1e}")
z = igdn1_forward(gdn1_forward(x, p), p)
print(f"gamma != 0:  igdn1(gdn1(x)) off by {np.max(np.abs(z - x)):.1e} "
      f"(approximate by design)\n")

# -- shape bookkeeping ---------------------------------------------------------
# Every layer halves the spatial extent with stride-2 5x5 kernels, and
# there are hidden_layers_m + 2 of them per side.

config = ModelConfig(width_n=32, hidden_layers_m=1, input_size=64)
params = init_parameters(config, seed=1)
image = rng.uniform(size=(3, 64, 64))

latent = analysis_forward(image, params, config)
recon = synthesis_forward(latent, params, config)
print(f"image {image.shape} -> latent {latent.shape} -> image {recon.shape}")
factor = 2 ** (config.hidden_layers_m + 2)
print(f"spatial reduction 2^(M+2) = {factor}x per side\n")

# -- transposed convolution is literally the transpose -------------------------
# With the weight's first two axes swapped, the transposed convolution
# satisfies the adjoint identity <conv(x), y> == <x, tconv(y)>.

x = rng.normal(size=(1, 3, 8, 8))
w = rng.normal(size=(4, 3, 5, 5)) * 0.2
y = rng.normal(size=(1, 4, 4, 4))
zero = np.zeros(4)
lhs = float((conv2d_forward(x, w, zero) * y).sum())
rhs = float((tconv2d_forward(y, w.transpose(1, 0, 2, 3), np.zeros(3)) * x).sum())
print(f"<conv(x, w), y> = {lhs:.10f}")
print(f"<x, tconv(y, w^T)> = {rhs:.10f}")
print(f"relative gap {abs(lhs - rhs) / abs(lhs):.2e}")
print("the synthesis path upsamples with the exact adjoint operation")
