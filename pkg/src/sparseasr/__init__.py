"""Sparse hierarchical auditory features and isolated word recognition.

Two complete recognition systems plus the evaluation machinery to compare
them under additive noise:

* a sparse system: gammatone cochleogram front-end, ICA-learned dictionary
  hierarchy, high-dimensional binary features, Bernoulli-mixture HMMs;
* a conventional baseline: 39-dimensional MFCC features, Gaussian-mixture
  HMMs.
"""

from sparseasr.errors import (
    ConfigurationError,
    DataFormatError,
    InvalidInputError,
    NumericError,
    SparseAsrError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DataFormatError",
    "InvalidInputError",
    "NumericError",
    "SparseAsrError",
    "__version__",
]
