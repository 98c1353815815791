"""Dual early/late fusion of slide patch embeddings and omic profiles."""
from .tensor import Tensor, backward, make_rng, no_grad

__version__ = "0.1.0"
