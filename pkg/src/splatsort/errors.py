"""Exception types shared across the package."""


class SceneFormatError(ValueError):
    """A scene, camera, image, flow, or point file violates its format."""


class ConfigError(ValueError):
    """A run configuration is malformed or references missing inputs."""


class DataError(RuntimeError):
    """Input data passed validation but failed during processing."""
