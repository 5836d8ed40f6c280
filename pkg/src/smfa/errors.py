"""Exception taxonomy shared by all workbench modules."""


class SmfaError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SmfaError):
    """Invalid or inconsistent configuration values."""


class ShapeMismatch(SmfaError):
    """Tensor shapes incompatible with the requested operation."""


class NonFinite(SmfaError):
    """A NaN or Inf appeared where only finite values are allowed."""


class IndexOutOfRange(SmfaError):
    """A class/target index outside the valid range."""


class NotScalar(SmfaError):
    """backward() was asked to differentiate a non-scalar value."""


class TokenOutOfRange(SmfaError):
    """A question token id outside the model's question vocabulary."""


class FeatureDimMismatch(SmfaError):
    """Feature vector length disagrees with the model's feature_dim."""


class SchemaMismatch(SmfaError):
    """Layer name sets or per-layer shapes disagree between weight maps."""


class DigestMismatch(SmfaError):
    """A recorded base-model digest does not match the actual weights."""


class FormatError(SmfaError):
    """Malformed checkpoint file (bad magic, version, header, or offsets)."""


class IoError(SmfaError):
    """Filesystem failure while reading or writing an artifact."""


class VocabOverflow(SmfaError):
    """The generated dataset would exceed the configured token budget."""


class RatioTooLarge(SmfaError):
    """Forget ratio selects more profiles than exist."""


class EmptyPool(SmfaError):
    """Refusal pool has no sequences to sample from."""


class EmptyData(SmfaError):
    """An operation requiring data items received none."""


class DivergedLoss(SmfaError):
    """Training loss became NaN/Inf; aborted with diagnostics."""


class LengthMismatch(SmfaError):
    """Prediction and reference lists differ in length."""


class UnknownMethod(SmfaError):
    """Unrecognized unlearning method name."""


class TargetNotReached(SmfaError):
    """Original-model training finished below its fit targets."""
