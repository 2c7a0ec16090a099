"""Context-aware argument component classification for multi-party discussions.

Classifies argumentative discourse units (claims, evidence, warrants) with
two kinds of discussion context: neighbouring ADUs regardless of speaker
(local context) and the earlier ADUs of the same speaker (speaker context).
"""

from argctx.errors import ArgctxError, DataError, NumericalError, UsageError

__version__ = "0.1.0"

__all__ = [
    "ArgctxError",
    "DataError",
    "NumericalError",
    "UsageError",
    "__version__",
]
