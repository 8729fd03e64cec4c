"""Geometry-aware point-cloud memory engine and 3D-reconstruction benchmark toolkit.

Core pieces: pinhole geometry and back-projection, Umeyama/ICP point-cloud
alignment, a 2D memory bank with an incrementally merged 3D cache,
frustum-overlap reference retrieval, stitched-pair constrained attention at
toy scale, parametric camera trajectories, reconstruction metrics
(F1/AUC/RotErr/TransErr/ATE), a toy distribution-matching distillation
trainer, and an end-to-end synthetic pipeline behind pluggable
generator/reconstructor ports.
"""

__version__ = "0.1.0"
