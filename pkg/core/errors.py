
class JTreeKitError(Exception):
    """Base class for every error raised by the pipeline."""


# ------------------------------------------------------------------
# Chemistry
# ------------------------------------------------------------------

class SmilesSyntaxError(JTreeKitError):
    pass


class UnsupportedAtom(JTreeKitError):
    pass


class ValenceError(JTreeKitError):
    pass


class KekulizationError(JTreeKitError):
    pass


class WidthMismatch(JTreeKitError):
    pass


# ------------------------------------------------------------------
# Trees and sequences
# ------------------------------------------------------------------

class EmptyDataset(JTreeKitError):
    pass


class UnencodableTree(JTreeKitError):
    pass


class DanglingPosition(JTreeKitError):
    pass


class UnknownJunctionId(JTreeKitError):
    pass


class MissingEOS(JTreeKitError):
    pass


# ------------------------------------------------------------------
# Numerics and models
# ------------------------------------------------------------------

class ShapeMismatch(JTreeKitError):
    pass


class NonFinite(JTreeKitError):
    pass


class FeatureOutOfRange(JTreeKitError):
    pass


class BadRange(JTreeKitError):
    pass


class MaxLenExceeded(JTreeKitError):
    pass


# ------------------------------------------------------------------
# Assembly and evaluation
# ------------------------------------------------------------------

class NoValidAttachment(JTreeKitError):
    pass


class EmptyTree(JTreeKitError):
    pass


class EmptySet(JTreeKitError):
    pass


class DegenerateData(JTreeKitError):
    pass


# ------------------------------------------------------------------
# Command line
# ------------------------------------------------------------------

class ConfigError(JTreeKitError):
    exit_code = 1


class ArtifactExists(JTreeKitError):
    exit_code = 1


class MissingArtifact(JTreeKitError):
    exit_code = 2
