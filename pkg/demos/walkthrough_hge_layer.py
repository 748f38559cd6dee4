"""
One HGE layer, by hand
======================

Six items sit in two categories of three. A layer scores every item against
its category key, keeps only positive scores, softmaxes them within the
category and hands every member the same weighted average of member
embeddings. Skip connections add that average back onto each item.
"""

import numpy as np

from hgerec import HgeLayer, HgeModel, MfModel, SparseIncidence, hge_item_embeddings, hge_layer_forward

np.set_printoptions(precision=4, suppress=True)

# %%
# Items and categories
# --------------------
# ``from_assignment`` takes the category index of each item.

e = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [-1.0, 2.0], [0.25, -0.5], [2.0, 1.0]])
fine = SparseIncidence.from_assignment([0, 0, 0, 1, 1, 1], 2)
print("category sizes", fine.sizes)

# %%
# Category keys (w1) and item keys (w2)
# -------------------------------------
# The layer stores (I + K) * h numbers instead of an I x K weight matrix.

w1 = np.array([[1.0, 0.5], [0.2, -1.0]])
w2 = np.array([[0.3, 0.1], [-0.4, 0.2], [0.6, 0.8], [0.5, 0.5], [-1.0, 0.1], [0.0, -0.3]])
layer = HgeLayer(fine, w1, w2, level=0)
scores, weights = layer.weights()
print("scores ", scores)
print("weights", weights)

# %%
# Items 1, 3 and 4 score below zero and get weight 0. The remaining weights
# in each category sum to one, so the layer output is a convex combination of
# member embeddings and is the same for every member.

print(hge_layer_forward(layer, e))

# %%
# Stacking levels
# ---------------
# A coarser level groups all six items. Levels run finest first and each one
# sees the output of the one before it.

coarse = SparseIncidence.from_assignment([0] * 6, 1)
top = HgeLayer(coarse, np.array([[0.7, 0.7]]),
               np.array([[0.1, 0.0], [0.2, 0.3], [-0.5, -0.5], [0.9, -0.2], [0.0, 0.4], [0.3, 0.3]]), level=1)
users = np.array([[1.0, -0.5], [0.25, 0.75]])
model = HgeModel(MfModel(users, e), [layer, top])
print("item embeddings with skip\n", hge_item_embeddings(model))

# %%
# Without skip connections every item collapses onto the top-level average,
# which is why the ablation hurts ranking quality.

for lay in model.layers:
    lay.skip = False
print("item embeddings without skip\n", hge_item_embeddings(model))

# %%
# Gating everything off (all category keys zero) turns the model back into
# plain matrix factorisation.

for lay in model.layers:
    lay.skip = True
    lay.w1[:] = 0
print("equals MF:", np.array_equal(model.score_matrix([0, 1], range(6)), MfModel(users, e).score_matrix([0, 1], range(6))))
