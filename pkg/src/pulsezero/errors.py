"""Exception types shared across the toolkit."""


class PulseZeroError(Exception):
    """Base class for all toolkit-specific errors."""


class DimensionError(PulseZeroError, ValueError):
    """Matrix/vector shapes are incompatible or non-square."""


class InvalidInputError(PulseZeroError, ValueError):
    """Input contains NaN/Inf or is otherwise malformed."""


class DomainError(PulseZeroError, ValueError):
    """A scalar argument is outside its admissible range."""


class NumericalFailureError(PulseZeroError, RuntimeError):
    """A numerical routine produced an unacceptable result (e.g. lost unitarity)."""


class EpisodeCompleteError(PulseZeroError, RuntimeError):
    """step() was called on an environment already past its horizon."""


class NodeExhaustedError(PulseZeroError, RuntimeError):
    """Tree selection entered a node whose subtree is fully explored."""


class SearchSpaceExhausted(PulseZeroError):
    """Every distinct action sequence has been emitted; nothing new to find."""


class TrainingDivergenceError(PulseZeroError, RuntimeError):
    """Network training produced non-finite values or an exploding gradient."""


class CheckpointMismatchError(PulseZeroError, RuntimeError):
    """A checkpoint was produced by an incompatible architecture or config."""


class ConfigError(PulseZeroError, ValueError):
    """Experiment configuration failed validation; message carries the field path."""


class ExportError(PulseZeroError, ValueError):
    """Solution-set export/import failed (e.g. inhomogeneous pulse lengths)."""
