"""Desk-scale two-stage object reenactment pipeline.

Stage I rolls out coarse multi-view-anchored object frames driven by latent
motion embeddings; Stage II refines them with a flow-matching video model
conditioned on multi-view references, with an optional geometry-aware
attention bias at inference time.  Everything runs on a small float64
autodiff engine and a procedurally generated synthetic world with known
ground-truth pose.
"""

__version__ = "0.1.0"
