"""Weighted matrix factorization with text-conditioned bias correction.

Subpackages map to the pipeline stages: ``data`` (ingestion, splits,
synthetic generators), ``textprep`` (vocabulary and encoding), ``encoder``
(the CNN/averaging text models), ``sam`` (bias-correction weights),
``factorization`` (training), ``experiment`` (metrics and harness), and
``cli`` (command-line entry point).  ``kernels.BACKEND`` reports whether
the compiled ridge kernel or the NumPy fallback is active.
"""

from . import data, encoder, experiment, factorization, kernels, sam, textprep
from .errors import DataError, DebiasMFError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "data",
    "textprep",
    "encoder",
    "sam",
    "factorization",
    "experiment",
    "kernels",
    "DebiasMFError",
    "DataError",
    "NumericalError",
    "__version__",
]
