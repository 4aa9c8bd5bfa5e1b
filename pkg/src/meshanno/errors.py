"""Exception types shared across the toolkit."""


class PlyParseError(ValueError):
    """Raised when a PLY stream is malformed or violates mesh invariants."""


class SidecarError(ValueError):
    """Raised when a texel sidecar line is malformed or out of range."""


class SessionLockError(RuntimeError):
    """Raised when a tile session is already locked by another writer."""


class PipelineStageError(RuntimeError):
    """Raised when a pipeline stage fails; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
