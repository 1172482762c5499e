"""Exception types shared across the package."""


class DimensionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class RankError(ValueError):
    def __init__(self, message, column):
        super().__init__(message)
        self.column = column


class UnsupportedActivationError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NonContinuousAugmentationError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
