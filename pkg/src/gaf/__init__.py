"""Generative attention features for temporal action analysis.

Frame-level attention from a conditional VAE, segment-level attention
from a small temporal conv stack, an anchor-free boundary head, and the
training/evaluation tooling to run the whole loop on synthetic sequences.
"""

__version__ = "0.1.0"
