"""Exception hierarchy shared across the package.

Two broad families matter to callers: ``DataError`` (bad inputs, malformed
files, contract violations on user data) and ``ProviderError`` (an encoder
backend or its cache is unusable). The CLI maps them to exit codes 2 and 3.
"""


class TsrcdfError(Exception):
    """Base class for all package errors."""


class DataError(TsrcdfError):
    """Input data violates a documented contract."""


class ProviderError(TsrcdfError):
    """An embedding provider or encoder service is unavailable or refused."""


# corpus ---------------------------------------------------------------

class MalformedRecord(DataError):
    """A dataset record could not be parsed (message names the line)."""


class UnknownLabel(DataError):
    """A label string is outside the accepted vocabulary."""


class EmptyText(DataError):
    """A requirement text is empty after whitespace trimming."""


class DuplicateId(DataError):
    """Two records in one dataset share an id."""


class NTooLarge(DataError):
    """Requested sample size exceeds the dataset."""


class TooFewSamples(DataError):
    """Dataset too small for the requested fold count."""


# embeddings -----------------------------------------------------------

class DimMismatch(DataError):
    """Vector dimensions disagree where they must match."""


class HeaderMismatch(DataError):
    """A vector store file was opened with the wrong (model_id, dim)."""


class CorruptFile(DataError):
    """A binary file fails its length/structure checks."""


class ProviderUnavailable(ProviderError):
    """The provider cannot serve embeddings (network, missing text, ...)."""


class FinetuneRejected(ProviderError):
    """The encoder service declined a fine-tune request (e.g. HTTP 507)."""


# mlp / loss -----------------------------------------------------------

class ShapeMismatch(DataError):
    """Array arguments have incompatible shapes."""


class NonFiniteActivation(TsrcdfError):
    """Forward pass produced NaN/Inf activations."""


class CacheMismatch(TsrcdfError):
    """backward() was called with a cache from a different forward()."""


class InvalidDistribution(DataError):
    """A probability vector is not strictly positive or does not sum to 1."""


class AllCountsZero(DataError):
    """Class weights requested for all-zero label counts."""


# trainer --------------------------------------------------------------

class InsufficientData(DataError):
    """Not enough examples for the configured batch size / split."""


class NonFiniteLoss(TsrcdfError):
    """Training aborted on a NaN/Inf loss (message names epoch and batch)."""


# metrics --------------------------------------------------------------

class LengthMismatch(DataError):
    """golds and preds differ in length."""


class CodeOutOfRange(DataError):
    """A class code falls outside [0, C)."""


class EmptyMatrix(DataError):
    """A metrics report was requested for an empty confusion matrix."""
