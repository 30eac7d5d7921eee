"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the set an operation is defined on."""


class ValidationError(ValueError):
    """An object fails one of its structural invariants."""


class PreconditionError(ValueError):
    """A check was asked to run while its premise does not hold."""


class UnsupportedBackendError(TypeError):
    """The semigroup backend cannot perform the requested operation."""


class HorizonFailure(RuntimeError):
    """A search or limit did not settle within the finite horizon it was given.

    ``best`` carries whatever partial evidence was gathered.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
