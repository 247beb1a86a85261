"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration errors exit 2, data
errors exit 3 and verification failures exit 4.
"""


class SarcasmDetectError(Exception):
    pass


class ConfigError(SarcasmDetectError, ValueError):
    """Invalid configuration or unknown option."""


class DimensionError(SarcasmDetectError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(SarcasmDetectError, ValueError):
    """A call violated a precondition that is not about shapes."""


class NonFiniteError(SarcasmDetectError, FloatingPointError):
    """A forward or update step produced NaN or Inf."""


class DataError(SarcasmDetectError, ValueError):
    """Malformed input data: manifests, tensor files, samples."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or of an unsupported version."""


class TrainingError(SarcasmDetectError, RuntimeError):
    pass


class GradCheckError(SarcasmDetectError, AssertionError):
    """Autodiff and finite-difference gradients disagree."""
