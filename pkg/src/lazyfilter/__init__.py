"""Privacy-preserving filtering of poor training batches in federated learning.

Participants score each other's batches with a cheap "lazy" influence sign
and release the votes through permanent randomized response. The center then
rejects batches whose vote sum falls below a 2-means threshold.
"""

from lazyfilter.errors import ArchitectureMismatch, InvalidInput, NumericalError, StageError

__version__ = "0.1.0"

__all__ = ["ArchitectureMismatch", "InvalidInput", "NumericalError", "StageError", "__version__"]
