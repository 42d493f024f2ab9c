"""Exception hierarchy.

Every error raised by the package derives from ``TrustALError`` so callers
(the CLI in particular) can map failures to exit codes without catching
unrelated exceptions.
"""


class TrustALError(Exception):
    pass


class ParseError(TrustALError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(TrustALError):
    pass


class LabelError(TrustALError):
    pass


class AcquisitionError(TrustALError):
    pass


class BudgetError(AcquisitionError):
    pass


class PreconditionError(TrustALError):
    pass


class ShapeError(TrustALError, ValueError):
    pass


class TrainingError(TrustALError):
    pass


class SelectionError(TrustALError):
    pass


class AnalysisError(TrustALError):
    pass


class ComparisonError(AnalysisError):
    pass


class ConfigError(TrustALError):
    """Bad configuration. ``key`` names the offending dotted key, if known."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class ArgumentError(TrustALError, ValueError):
    pass


class GenerationIndexError(TrustALError, IndexError):
    pass
