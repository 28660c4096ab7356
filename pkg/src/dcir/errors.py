"""Exception hierarchy shared across the engine.

Everything raised on bad *data* (malformed files, inconsistent bundles,
degenerate queries) derives from :class:`DataError` so the CLI can map it
to a single exit code, distinct from usage errors.
"""


class DataError(Exception):
    """Base class for all data-level failures."""


class FormatError(DataError):
    """File does not follow the declared binary/JSON format."""


class CorruptionError(DataError):
    """File header and payload disagree (truncated or oversized)."""


class NormalizationError(DataError):
    """A vector that must be unit-norm is not."""


class BundleError(DataError):
    """Cross-file consistency check failed while assembling a bundle."""


class CapabilityError(DataError):
    """The requested operation needs a capability the setup lacks."""


class DegenerateQueryError(DataError):
    """A composed query collapsed to the zero vector."""
