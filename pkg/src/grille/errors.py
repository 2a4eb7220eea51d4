"""Exception types shared across the toolkit."""


class GrilleError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(GrilleError, ValueError):
    """An argument violates a documented precondition."""


class EmptyCapacityError(GrilleError):
    """A grille cannot be derived because the mask has no known cells."""


class CapacityExceededError(GrilleError):
    """The message is longer than the grille can carry."""


class KeyPairingError(GrilleError):
    """Grille key and completion mask do not belong together."""


class KeyFormatError(GrilleError):
    """A key file could not be parsed or fails validation.

    ``offset`` is the byte offset of the problem when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class DegenerateKeyError(GrilleError):
    """Toy-cipher key lies on the X axis."""


class UndefinedLineError(GrilleError):
    """Toy-cipher ciphertext coincides with the key point."""


class NoIntersectionError(GrilleError):
    """Toy-cipher decryption line is parallel to the X axis."""


class TrainingDivergedError(GrilleError):
    """Adversarial training produced a non-finite loss."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class SearchDivergedError(GrilleError):
    """Latent search produced a non-finite loss; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
