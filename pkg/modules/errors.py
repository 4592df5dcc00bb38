"""
SurfMorph Errors
Exception hierarchy shared by all pipeline modules
"""


class SurfaceError(Exception):
    """Base class for all surface-morphometry errors"""


class ConfigError(SurfaceError):
    """Invalid parameters or pipeline configuration"""


class VolumeFormatError(SurfaceError):
    """Unreadable or inconsistent volume file"""


class GridMismatchError(SurfaceError):
    """Two inputs do not share the same grid or physical frame"""


class GeometryError(SurfaceError):
    """A geometric precondition does not hold"""


class MeshingError(SurfaceError):
    """Surface reconstruction failed"""


class ExportError(SurfaceError):
    """Artifact cannot be written in the requested format"""


class StageError(SurfaceError):
    """A pipeline stage failed"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
