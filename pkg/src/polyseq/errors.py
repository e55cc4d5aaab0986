"""Exception types shared across the package."""

from __future__ import annotations


class PolyseqError(Exception):
    """Base class for all package errors."""


class SmilesSyntaxError(PolyseqError, ValueError):
    """Malformed or unsupported SMILES input."""

    def __init__(self, position: int, message: str) -> None:
        super().__init__(f"{message} (at position {position})")
        self.position = position
        self.message = message


class TokenizeError(PolyseqError, ValueError):
    def __init__(self, position: int, message: str = "unrecognized character") -> None:
        super().__init__(f"{message} at byte offset {position}")
        self.position = position
        self.message = message


class SchemaError(PolyseqError, ValueError):
    """Record or file does not match the dataset schema."""


class ShapeError(PolyseqError, ValueError):
    def __init__(self, op: str, expected, actual) -> None:
        super().__init__(f"{op}: expected shape {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class GraphError(PolyseqError, RuntimeError):
    """Backward called on something that is not a scalar loss."""


class StateError(PolyseqError, RuntimeError):
    """Optimizer state is missing for a parameter."""


class ParameterNameError(PolyseqError, NameError):
    """A parameter name does not encode a recognizable layer."""


class DegenerateBatch(PolyseqError, ValueError):
    """A batch has no supervised positions."""


class DegenerateLabels(UserWarning):
    """All labels equal; R2 is undefined."""


class NumericalError(PolyseqError, FloatingPointError):
    """Loss or parameters became non-finite."""


class ConfigError(PolyseqError, ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class CheckpointError(PolyseqError, ValueError):
    pass


class EmptySplit(PolyseqError, ValueError):
    pass


class RowError(PolyseqError, ValueError):
    def __init__(self, line: int, column: str | None, message: str) -> None:
        where = f"line {line}" + (f", column '{column}'" if column else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column
        self.message = message


class DatasetError(PolyseqError, ValueError):
    """One or more rows failed validation."""

    def __init__(self, errors: list[RowError]) -> None:
        lines = "\n".join(f"  {e}" for e in errors[:20])
        more = f"\n  ... and {len(errors) - 20} more" if len(errors) > 20 else ""
        super().__init__(f"{len(errors)} bad row(s):\n{lines}{more}")
        self.errors = errors
