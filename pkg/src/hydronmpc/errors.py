"""Exception hierarchy shared by all modules."""


class HydroNmpcError(Exception):
    """Base class for all package errors."""


class ConfigError(HydroNmpcError):
    """Invalid configuration, dimensions, or missing inputs (CLI exit code 1)."""


class ContractError(HydroNmpcError):
    """A call-site contract was violated (mismatched cache, bad lengths, ...)."""


class TrainingError(HydroNmpcError):
    """Training diverged or received non-finite gradients."""


class PredictionError(HydroNmpcError):
    """Predictor received or produced non-finite values."""


class SimulationError(HydroNmpcError):
    """Plant simulation received non-finite inputs."""


class FormatError(HydroNmpcError):
    """A serialized artifact (checkpoint, packet) is malformed."""


class ProtocolError(HydroNmpcError):
    """UDP link failure: socket cannot bind or the peer never answered."""
