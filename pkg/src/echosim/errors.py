"""Exception hierarchy shared by all echosim modules."""


class EchoSimError(Exception):
    """Base class for all echosim errors."""


class FormatError(EchoSimError):
    """Malformed binary container (bad magic, dims, or payload size)."""


class MetadataError(EchoSimError):
    """Sidecar metadata missing or inconsistent with the tensor."""


class GeometryError(EchoSimError):
    """Degenerate or self-intersecting mesh geometry."""


class ContainmentError(EchoSimError):
    """Point lies outside the queried cell, or the inverse map diverged."""


class MetricError(EchoSimError):
    """A metric is undefined for the given inputs (e.g. no valid entries)."""


class StageError(EchoSimError):
    """Pipeline failure, labeled with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
