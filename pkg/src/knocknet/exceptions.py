"""Exception hierarchy shared by all knocknet modules."""


class KnockNetError(ValueError):
    """Base class for every error raised on purpose by this package."""


class InvalidGeometryError(KnockNetError):
    pass


class OutOfBandError(KnockNetError):
    """A frequency lies outside (0, Nyquist) for the given sampling."""


class CoverageError(KnockNetError):
    """A signal does not cover the requested crank-angle interval."""


class ShapeError(KnockNetError):
    pass


class DomainError(KnockNetError):
    """A value lies outside the mathematical domain of an operation."""


class ConfigurationError(KnockNetError):
    pass


class ParseError(KnockNetError):
    def __init__(self, message, path=None, row=None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{':'.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.row = row


class RankError(KnockNetError):
    pass


class DegenerateFitError(KnockNetError):
    pass


class ModelFileError(KnockNetError):
    """A model container is truncated, corrupt or of the wrong version."""


class UnsupportedModeError(ModelFileError):
    pass
