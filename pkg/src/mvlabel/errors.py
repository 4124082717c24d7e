"""Exception hierarchy.

Everything raised for bad user input derives from :class:`InputError`, which
the command line maps to exit code 2.
"""


class MVLabelError(Exception):
    """Base class for all package errors."""


class InputError(MVLabelError):
    """Invalid or inconsistent input data."""


class InvalidCameraError(InputError):
    pass


class InvalidPoseError(InputError):
    pass


class DimensionError(InputError):
    pass


class ModeMismatchError(InputError):
    pass


class SceneFormatError(InputError):
    """A scene file is missing, unreadable or malformed."""


class ValidationError(InputError):
    """A cross-reference inside a scene does not resolve."""


class GenerationError(MVLabelError):
    """The synthetic scene generator cannot satisfy its configuration."""
