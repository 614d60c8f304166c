"""Exception hierarchy."""


class SimkitError(Exception):
    """Base class for all simkit failures."""


class ModelError(SimkitError, ValueError):
    """Invalid model, parameter or RPV specification."""


class IntegrationError(SimkitError, RuntimeError):
    """An IVP integration could not be completed.

    ``t`` holds the time reached when the failure occurred.
    """

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (at t={t:.17g})")
        self.t = t


class ConvergenceError(SimkitError, RuntimeError):
    """An iterative solve stopped without meeting its tolerance.

    ``best`` carries the best iterate (or partial result) that was reached.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
