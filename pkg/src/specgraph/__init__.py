"""Gaussian-process graph classifiers on spectral features.

Two models are provided:

* FT-GP: cumulative Fourier energy profiles of node signals fed to a
  variational GP classifier.
* WT-GP: norms of spectral-wavelet filtered node signals, with the filter
  scales learned jointly with the kernel hyperparameters.
"""

from specgraph.graph import (
    Graph,
    SpectralDecomposition,
    build_normalized_laplacian,
    decompose,
    eigendecompose,
    graph_fourier_transform,
)

__all__ = [
    "Graph",
    "SpectralDecomposition",
    "build_normalized_laplacian",
    "decompose",
    "eigendecompose",
    "graph_fourier_transform",
]

__version__ = "0.1.0"
