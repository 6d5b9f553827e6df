"""Exception types shared across the toolkit."""


class ALTError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(ALTError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ALTError, FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class ContractError(ALTError, ValueError):
    """A call violated an operation precondition."""


class ConfigError(ALTError, ValueError):
    """Invalid or inconsistent configuration."""


class InputError(ALTError, ValueError):
    """Unusable input data (empty audio, utterance too short, ...)."""


class EmptyTargetError(InputError):
    """Text is empty after normalization."""


class InfeasibleAlignmentError(ALTError, ValueError):
    """The CTC target cannot be aligned to the available frames."""


class UndefinedWERError(ALTError, ValueError):
    """WER is undefined for an empty reference."""
