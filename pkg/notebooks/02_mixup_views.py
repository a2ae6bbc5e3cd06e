# %% [markdown]
# # Augmented views of a training set
#
# Each epoch sees a fresh view. The operators below all act on descriptors,
# never on pixels.

# %%
import numpy as np

from milmix import AugmentConfig, RngStream, SyntheticSpec, generate_synthetic
from milmix.augment import augment_epoch
from milmix.augment import intra_mixup, random_sampling

data = generate_synthetic(SyntheticSpec(n_bags_per_class=4, P=16, D=4, seed=3))
rng = RngStream(0, 2)

# %% [markdown]
# Intra-bag mixing keeps a bag inside its own per-coordinate bounding box
# and pulls rows towards each other. The multilinear mode draws one weight
# per coordinate instead of one per row.

# %%
bag = data.bags[0]
for multilinear in (False, True):
    out = intra_mixup(bag, multilinear, rng.child(int(multilinear)))
    inside = np.all(out.features >= bag.features.min(0)) and np.all(out.features <= bag.features.max(0))
    print("multilinear" if multilinear else "linear     ", "inside box:", inside, "row std:", out.features.std(0).round(3))
print("original    row std:", bag.features.std(0).round(3))

# %% [markdown]
# Inter-bag mixing with interpolated labels produces soft targets.

# %%
view = augment_epoch(data, AugmentConfig(kind="inter_v2"), rng.child(10))
for lab in view.labels[:4]:
    print(lab.probs.round(3))

# %% [markdown]
# Selective application: with beta = 0.5 about half the bags are mixed.

# %%
mixed = []
for epoch in range(200):
    v = augment_epoch(data, AugmentConfig(kind="intra_linear", beta=0.5), rng.child(100 + epoch))
    mixed.append(np.mean([not np.array_equal(np.sort(a.features, 0), np.sort(b.features, 0)) for a, b in zip(data.bags, v.bags)]))
print(f"fraction of bags mixed per epoch: {np.mean(mixed):.3f}")

# %%
print("random sampling q=0.3 keeps", random_sampling(bag, 0.3, rng.child(7)).P, "of", bag.P, "rows")
