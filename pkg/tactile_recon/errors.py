class ReconstructionError(Exception):
    """Base class for every failure the toolkit reports to the user."""

    exit_code = 2


class UsageError(ReconstructionError):
    """Bad combination of command-line flags or configuration values."""

    exit_code = 1


class DataFormatError(ReconstructionError):
    """Malformed or incomplete input data (CSV, STL, PLY, JSON, grids)."""

    exit_code = 2


class NumericalError(ReconstructionError):
    """Degenerate geometry or a numerical procedure that cannot proceed."""

    exit_code = 3


class GeometryError(NumericalError):
    """Control-point construction failed for a pair of contacts."""

    def __init__(self, message: str, edge: tuple | None = None):
        if edge is not None:
            message = f"{message} (edge {edge})"
        super().__init__(message)
        self.edge = edge
