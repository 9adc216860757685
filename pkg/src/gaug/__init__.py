"""Generator-conditioned data augmentation toolkit.

Embedding stores with exact cosine k-NN neighborhoods, a gated augmentation
module that substitutes real samples with conditional generations (soft
labels, truncated latents, separate transform routing), SSL multi-view
plumbing, and a stratified evaluation suite (per-class Fréchet distance,
neighborhood corruption, invariance scoring).
"""

__version__ = "0.1.0"
