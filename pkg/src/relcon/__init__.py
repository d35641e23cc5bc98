"""relcon: semi-supervised self-ensembling with sample-relation consistency.

A desk-scale numpy library implementing mean-teacher style training with a
batch-relation consistency regularizer, the baseline family it is compared
against (supervised, self-training, pi, temporal ensembling, mean teacher,
feature consistency), synthetic datasets, evaluation metrics, and a config
driven experiment harness.
"""

from . import data, losses, metrics, models, perturb, tensor, trainer

__all__ = ["data", "losses", "metrics", "models", "perturb", "tensor", "trainer"]
__version__ = "0.1.0"
