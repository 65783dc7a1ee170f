class MPDropoutError(Exception):
    pass


class ParameterError(MPDropoutError, ValueError):
    """An argument lies outside its admissible range."""


class SizeError(ParameterError):
    pass


class GeometryError(MPDropoutError, ValueError):
    """Shapes, windows or filters that do not fit together."""


class PreconditionError(MPDropoutError, ValueError):
    """Input violates an operation precondition (e.g. negative activations)."""


class FormatError(MPDropoutError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ArchParseError(MPDropoutError, ValueError):
    def __init__(self, message, token=None):
        if token is not None:
            message = f"{message}: {token!r}"
        super().__init__(message)
        self.token = token


class TrainingDivergedError(MPDropoutError, RuntimeError):
    pass
