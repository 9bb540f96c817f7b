"""Crystal instance segmentation and size measurement.

Flow-field based instance segmentation for crystal micrographs: per-instance
center-pointing vector fields, gradient-flow tracking, multi-scale prediction
with attention-weighted fusion, plus the matching evaluation metrics and a
synthetic polycrystal generator for end-to-end validation.
"""

__version__ = "0.1.0"
