"""Exception hierarchy. ``category`` is the machine-readable tag the CLI prints."""


class ParkSlamError(Exception):
    category = "Error"


class DegenerateCorner(ParkSlamError, ValueError):
    category = "DegenerateCorner"


class InvalidFactor(ParkSlamError, ValueError):
    category = "InvalidFactor"


class SingularSystem(ParkSlamError, ArithmeticError):
    category = "SingularSystem"


class SolverFailure(ParkSlamError, RuntimeError):
    category = "SolverFailure"


class EmptyCandidates(ParkSlamError, ValueError):
    category = "EmptyCandidates"


class DegenerateHomography(ParkSlamError, ValueError):
    category = "DegenerateHomography"


class NoConvergence(ParkSlamError, RuntimeError):
    category = "NoConvergence"


class SpecOverlap(ParkSlamError, ValueError):
    category = "SpecOverlap"


class InfeasiblePath(ParkSlamError, ValueError):
    category = "InfeasiblePath"


class LengthMismatch(ParkSlamError, ValueError):
    category = "LengthMismatch"


class VersionMismatch(ParkSlamError, ValueError):
    category = "VersionMismatch"


class ParseError(ParkSlamError, ValueError):
    category = "ParseError"

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class IoFailure(ParkSlamError, OSError):
    category = "IoFailure"


class InvalidMap(ParkSlamError, ValueError):
    category = "InvalidMap"


class EmptyDataset(ParkSlamError, ValueError):
    category = "EmptyDataset"


class ConfigError(ParkSlamError, ValueError):
    category = "ConfigError"
