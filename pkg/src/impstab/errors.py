"""Exception hierarchy shared by all impstab modules."""


class ImpstabError(Exception):
    """Base class for errors raised by impstab."""


class InvalidArgumentError(ImpstabError, ValueError):
    pass


class InvalidBasisError(InvalidArgumentError):
    """The control matrices are not linearly independent."""


class RefinementError(ImpstabError):
    """Newton refinement of an eigenvalue did not converge."""

    def __init__(self, eigenvalue, iterations):
        self.eigenvalue = eigenvalue
        self.iterations = iterations
        super().__init__(
            f"Newton refinement of eigenvalue {eigenvalue:.6g} did not converge "
            f"in {iterations} iterations"
        )


class DefectiveSpectrumError(ImpstabError):
    """Two retained eigenvalues coincide to tolerance; Jordan blocks are unsupported."""


class EmptyWindowError(ImpstabError):
    pass


class NormalizationSingularError(ImpstabError):
    pass


class CostEvaluationError(ImpstabError):
    pass


class InfeasibleError(ImpstabError):
    """No feasible controller was found and the probe map has deficient rank.

    The best (infeasible) controller found is attached as ``controller`` and
    the rank diagnostic as ``rank``.
    """

    def __init__(self, message, controller=None, rank=None):
        super().__init__(message)
        self.controller = controller
        self.rank = rank


class ConfigError(ImpstabError):
    """A configuration file failed validation; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class CacheMissError(ImpstabError):
    pass


class TrajectoryFormatError(ImpstabError, ValueError):
    """A trajectory CSV could not be parsed; ``line`` is 1-based."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
