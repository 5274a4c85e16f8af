"""
One diagonal SSM, two ways to run it
====================================

A discretized diagonal state-space layer can be unrolled as a recurrence or
applied as a causal convolution with the kernel ``K[l] = 2 Re(C A_bar^l B_bar)``.
This script builds a small layer and checks that both views agree.
"""

import math

import torch

from acoustic_ssm.embedder import SSMKernel, discretize_zoh, ssm_kernel

# %%
# A scalar hand case first. With lambda = -1, Delta = ln 2 and B = C = 1 the
# zero-order hold gives A_bar = 1/2 and B_bar = 1/2, so the kernel halves at
# every step.
a_bar, b_bar = discretize_zoh(-1.0, math.log(2.0), 1.0)
k = ssm_kernel(a_bar, b_bar, torch.tensor(1.0 + 0j, dtype=torch.complex128), 4, pair_factor=1.0)
print("A_bar", complex(a_bar), "B_bar", complex(b_bar))
print("kernel", k.tolist())

# %%
# Now a layer with 4 channels and 16 conjugate-pair modes, driven by noise.
torch.manual_seed(0)
layer = SSMKernel(4, 16)
u = torch.randn(1, 4, 200)
with torch.no_grad():
    outputs = {mode: layer(u, mode) for mode in ("direct", "fft", "recurrent")}

for mode in ("fft", "recurrent"):
    diff = (outputs[mode] - outputs["direct"]).abs().max().item()
    print(f"{mode:>9s} vs direct: max |diff| = {diff:.2e}")

# %%
# The kernel decays because every Re(lambda) is negative, which keeps
# |A_bar| < 1 for any positive step size.
with torch.no_grad():
    K = layer.kernel(200)
print("|K| at l = 0, 50, 199:", K[:, [0, 50, 199]].abs().max(0).values.tolist())
