"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the command-line front end can map
failures to process status without inspecting messages.
"""


class A3SNError(Exception):
    exit_code = 1


class UsageError(A3SNError):
    """Bad command-line arguments or out-of-range selectors."""


class DimensionError(A3SNError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(A3SNError, ValueError):
    """A setting violates its documented range or a cross-field constraint."""


class ContractError(A3SNError, ValueError):
    """A caller broke an operation's precondition (e.g. non-scalar loss)."""


class BackwardError(A3SNError, RuntimeError):
    """Backward was requested on a graph that has already been consumed."""


class DataError(A3SNError, ValueError):
    exit_code = 2


class EmptyInputError(DataError):
    """An operation received zero rows / zero unmasked positions."""


class EncodingError(DataError):
    """An example cannot be laid out within ``max_len``."""


class CheckpointError(DataError):
    """A checkpoint file is malformed or does not match the expected shapes."""


class NumericError(A3SNError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericError):
    """Training produced a non-finite loss or gradient."""
