"""Exception hierarchy. CLI exit codes are attached to each class."""


class AcousticSSMError(Exception):
    exit_code = 1


class ConfigError(AcousticSSMError):
    exit_code = 1


class DataError(AcousticSSMError):
    exit_code = 2


class DecodeError(DataError):
    pass


class UnsupportedFormatError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class ShapeError(AcousticSSMError, ValueError):
    exit_code = 2


class NumericError(AcousticSSMError):
    exit_code = 3


class CheckpointError(AcousticSSMError):
    exit_code = 2


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
