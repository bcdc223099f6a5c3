class HessianLabError(Exception):
    pass


class ArgumentError(HessianLabError, ValueError):
    pass


class DomainError(HessianLabError, ValueError):
    """Spectrum outside the cone an operator is defined on.

    ``index`` is the first sigma_j that failed (when known) and ``point`` the
    flat index of the offending spectrum in a batch.
    """

    def __init__(self, message, index=None, point=None):
        super().__init__(message)
        self.index = index
        self.point = point


class DataError(HessianLabError, ValueError):
    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points if points is not None else []


class ConstructionError(HessianLabError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NonConvergenceError(HessianLabError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
