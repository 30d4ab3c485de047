"""Confidence-weighted relative-pose-graph engine.

Pairwise pose edges with per-component confidences are fused into global
trajectories, either causally (bounded keyframe bank, outlier gating,
segment resets) or offline (all-pair aggregation plus pose-graph
refinement).  A synthetic oracle with loss-calibrated confidences stands
in for the learned pairwise pose head.
"""

__version__ = "0.1.0"
