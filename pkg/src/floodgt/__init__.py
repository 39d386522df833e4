"""Flood susceptibility mapping with an edge-weighted graph transformer.

The package covers the full desk-scale pipeline: tabular ingestion with
collinearity screening, balanced sampling, cosine-similarity k-NN graph
construction, Laplacian positional encodings, training and MC-dropout
inference of the graph-transformer classifier, binary and spatial
autocorrelation metrics, ordinary-kriging rasterization with natural-breaks
classification, future-scenario substitution, and railway-track exposure
accounting.
"""

__version__ = "0.1.0"

from .errors import (
    MissingArtifactError,
    NumericalError,
    ParseError,
    TrainingDivergence,
    ValidationError,
)

__all__ = [
    "MissingArtifactError",
    "NumericalError",
    "ParseError",
    "TrainingDivergence",
    "ValidationError",
    "__version__",
]
