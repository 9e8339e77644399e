"""Exception types shared across the toolkit."""


class ProtoAdaptError(Exception):
    """Base class for all toolkit-specific failures."""


class ConfigError(ProtoAdaptError):
    """An invalid configuration value."""


class ShapeError(ProtoAdaptError):
    """Array dimensions do not match what an operation requires."""


class AdaptationError(ProtoAdaptError):
    """A prototype or clustering operation received unusable inputs."""


class TrainingError(ProtoAdaptError):
    """Training aborted, e.g. because gradients became non-finite."""


class LabelsUnavailableError(ProtoAdaptError):
    """An operation needed ground-truth labels that were masked on export."""


class TaskFormatError(ProtoAdaptError):
    """A task or model file failed to parse.

    Carries the 1-based line number when the failure is tied to a line.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IncompleteLabelingError(ProtoAdaptError):
    """Cluster labeling was attempted with answers missing for some clusters."""

    def __init__(self, clusters):
        self.clusters = sorted(clusters)
        super().__init__(f"no answer for cluster(s) {self.clusters}")
