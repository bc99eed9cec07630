class FcucError(RuntimeError):
    """Base error; `exit_code` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(FcucError):
    exit_code = 2


class SeriesError(FcucError):
    exit_code = 3


class SimulationError(FcucError):
    exit_code = 4


class DatasetError(FcucError):
    exit_code = 5


class TrainingError(FcucError):
    exit_code = 6


class ModelBuildError(FcucError):
    exit_code = 7


class SolverError(FcucError):
    exit_code = 8


class EvaluationError(FcucError):
    exit_code = 9


class ManifestError(FcucError):
    exit_code = 10
