"""Prototypical triplet loss, cover-catalog lookup and live song identification."""

from .errors import *  # noqa: F401,F403
from .metric import (  # noqa: F401
    EmbeddingBatch,
    TripletConfig,
    compute_prototypes,
    loss_prototypical,
    loss_standard,
    pairwise_distances,
)

__version__ = "0.1.0"
