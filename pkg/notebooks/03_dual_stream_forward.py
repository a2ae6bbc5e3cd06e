# %% [markdown]
# # One forward pass, looked at closely
#
# The instance stream finds the most suspicious patch per class; the
# embedding stream attends to all patches relative to that one.

# %%
import numpy as np

from milmix import ModelConfig, RngStream, one_hot
from milmix.model import init
from milmix.model import backward, forward, loss

g = np.random.default_rng(0)
X = g.normal(size=(10, 6))
X[7] += 3.0  # one stand-out patch

net = init(ModelConfig(D=6, H=8, E=8).with_preset("2/2"), RngStream(0, 1))
tr = forward(net, X)
print("critical patch per class:", tr.critical_indices)
print("attention of class 1 (rounded):", tr.attention_weights[1].round(3))
print("instance / embedding / fused logits:", tr.logits_inst.round(3), tr.logits_emb.round(3), tr.logits_fused.round(3))

# %% [markdown]
# Shuffling the patches does not change the prediction.

# %%
perm = g.permutation(10)
print("max logit change under shuffling:", np.abs(forward(net, X[perm]).logits_fused - tr.logits_fused).max())

# %% [markdown]
# Spot-check one gradient entry against a central difference.

# %%

y = one_hot(1, 2)
grads = backward(net, X, y, tr)
h = 1e-5
W = net.params["W_v"]
W[2, 3] += h
up = loss(forward(net, X), y)
W[2, 3] -= 2 * h
down = loss(forward(net, X), y)
W[2, 3] += h
print(f"analytic {grads['W_v'][2, 3]:.8f}  numeric {(up - down) / (2 * h):.8f}")
