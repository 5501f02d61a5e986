# %% [markdown]
# # Frequency-domain edges and the encoder
#
# Physical edges act on a window as diagonal operators on its DFT. Derivation
# and integration are exact inverses away from DC.

# %%
import numpy as np

from nbge import EncoderConfig, NBgE, build_bond_matrix, compile_dual_graph, dc_motor
from nbge.spectral import dft, idft, make_operator

n, fs = 600, 100.0
t = np.arange(n) / fs
x = np.sin(2 * np.pi * 0.5 * t)
integrated = idft(make_operator("integrate", 1.0, n, fs)(dft(x, fs)))
print("max deviation from -cos/(2 pi 0.5):", np.max(np.abs(integrated + np.cos(2 * np.pi * 0.5 * t) / np.pi)))

# %% [markdown]
# The encoder starts from the physical operators on each edge and learns a
# complex weight per retained frequency. Its output keeps one row per
# variable node.

# %%
g = compile_dual_graph(build_bond_matrix(dc_motor()), {0: (1, "e"), 1: (6, "f")})
enc = NBgE.init(g, EncoderConfig(n_in=100, n_layers=3, fs=fs), 0)
windows = np.random.default_rng(0).normal(size=(4, 2, 100))
h = enc.forward(windows)
print("embedding shape:", h.shape, "parameters:", enc.n_params)
