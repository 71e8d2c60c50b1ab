"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad parameter values, unknown keys, mismatched grids."""


class BlowUpError(RuntimeError):
    """A trajectory left the admissible range (nonfinite or above the blow-up threshold)."""

    def __init__(self, message: str, member: int | None = None, step: int | None = None,
                 time: float | None = None):
        super().__init__(message)
        self.member = member
        self.step = step
        self.time = time


class EnsembleRejectedError(RuntimeError):
    """Too many ensemble members blew up for the statistics to be trusted."""

    def __init__(self, message: str, n_blowups: int, n_total: int):
        super().__init__(message)
        self.n_blowups = n_blowups
        self.n_total = n_total
