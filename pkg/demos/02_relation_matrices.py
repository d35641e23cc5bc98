"""How the batch-relation machinery sees a mini-batch.

Builds a toy batch of feature vectors with two obvious clusters, prints the
Gram matrix, its row-normalized relation matrix, and shows what the relation
consistency loss measures when the batch is perturbed.
"""

import numpy as np

from relcon import losses
from relcon import tensor as T

rng = np.random.default_rng(3)

# two clusters of three samples each, in a 4-d feature space
center_a = np.array([2.0, 0.0, 1.0, 0.0])
center_b = np.array([0.0, 2.0, 0.0, 1.0])
feats = np.stack([center_a + 0.1 * rng.normal(size=4) for _ in range(3)]
                 + [center_b + 0.1 * rng.normal(size=4) for _ in range(3)])

gram = losses.gram_matrix(T.constant(feats)).data
relation = losses.relation_matrix(T.constant(feats)).data

np.set_printoptions(precision=3, suppress=True)
print("Gram matrix (inner-product similarities):")
print(gram)
print("\nrow-normalized relation matrix (block structure = clusters):")
print(relation)

# scale invariance: relations depend on the similarity *structure*, not scale
scaled = losses.relation_matrix(T.constant(37.0 * feats)).data
print("\nmax |relation(37 A) - relation(A)| =", np.abs(scaled - relation).max())

# a perturbed view of the same batch: relation loss quantifies the disturbance
perturbed = feats + 0.15 * rng.normal(size=feats.shape)
loss = losses.src_loss(T.constant(feats), perturbed).item()
print(f"\nrelation consistency loss between clean and perturbed views: {loss:.5f}")

dist = losses.distance_matrix(relation,
                              losses.relation_matrix(T.constant(perturbed)).data)
print("amplified absolute distance matrix (what the diagnostic dumps show):")
print(dist)

# compare with the direct feature-consistency alternative
fc = losses.feature_consistency_loss(T.constant(feats), perturbed).item()
print(f"\nfeature-consistency MSE on the same pair: {fc:.5f}")
print("(the relation loss only cares about pairwise structure, so rescaling")
print(" both views leaves it unchanged while the feature MSE scales quadratically)")
