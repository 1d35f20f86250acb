"""Weakly-supervised temporal action localization toolkit.

Trains a snippet classifier from video-level labels, mines hard snippets
around predicted action boundaries, refines their embeddings with a
contrastive loss, and localizes action intervals by thresholding + NMS.
"""

__version__ = "0.1.0"
