# %% [markdown]
# # Bags, labels and feature files
#
# A slide is a bag of patch descriptors. Here we build a small synthetic
# cohort, write it to disk and read it back.

# %%
import tempfile
from pathlib import Path

import numpy as np

from milmix.io import SyntheticSpec, generate_synthetic, load_dataset, save_dataset

spec = SyntheticSpec(n_bags_per_class=6, P=32, D=8, class_separation=4.0, inter_wsi_sigma=1.0, intra_wsi_sigma=0.5, seed=1)
data = generate_synthetic(spec)
print(len(data), "bags, D =", data.D, "classes:", data.class_names)
print("first bag:", data.bags[0].id, data.bags[0].features.shape)

# %% [markdown]
# Class means sit `class_separation` apart; per-bag offsets blur that a
# little in the averaged bag centroids.

# %%
centroids = np.stack([b.features.mean(axis=0) for b in data.bags])
y = data.hard_labels()
gap = np.linalg.norm(centroids[y == 0].mean(axis=0) - centroids[y == 1].mean(axis=0))
print(f"distance between class centroids: {gap:.2f}")

# %% [markdown]
# Round trip through the binary container (binary32, so values change
# by at most half an ulp of single precision).

# %%
with tempfile.TemporaryDirectory() as tmp:
    manifest = save_dataset(data, tmp)
    print(sorted(p.name for p in Path(tmp).iterdir())[:3], "...")
    back = load_dataset(manifest)
err = max(np.max(np.abs(a.features - b.features) / np.maximum(np.abs(a.features), 1e-30)) for a, b in zip(data.bags, back.bags))
print(f"max relative round-trip error: {err:.1e}")
