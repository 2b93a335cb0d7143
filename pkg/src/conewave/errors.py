"""Exception types shared across the package.

Each exception carries an ``exit_code`` used by the command-line driver:
2 for invalid input, 3 for solver blow-up, 4 for failed detection
preconditions.
"""


class ConewaveError(Exception):
    exit_code = 1


class ValidationError(ConewaveError, ValueError):
    """Invalid configuration or argument.

    ``field`` names the offending configuration entry when known.
    """

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ZeroCovector(ValidationError):
    pass


class CharacteristicInterface(ValidationError):
    pass


class NotSpacelike(ValidationError):
    pass


class PulseClipped(ValidationError):
    pass


class UnderResolved(ValidationError):
    pass


class OutOfDomain(ConewaveError):
    exit_code = 4


class TangentialIncidence(ConewaveError):
    exit_code = 4


class NoIntersection(ConewaveError):
    exit_code = 4


class EmptyTube(ConewaveError):
    exit_code = 4


class DegenerateReference(ConewaveError):
    exit_code = 4


class BlowUp(ConewaveError):
    exit_code = 3

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class NoContraction(ConewaveError):
    exit_code = 3


class SnapshotError(ConewaveError):
    exit_code = 2


class BadMagic(SnapshotError):
    pass


class HeaderMismatch(SnapshotError):
    pass


class TruncatedPayload(SnapshotError):
    pass
