"""Exception types raised across the package."""


class PLMMError(Exception):
    """Base class for all errors raised by plmmlab."""


class IllConditioned(PLMMError):
    """Root polishing could not reach the residual tolerance."""


class NotConsistent(PLMMError):
    """The method does not satisfy rho(1) = 0 and rho'(1) = sigma(1)."""


class SigmaVanishesAtOne(PLMMError):
    pass


class CommonRootOnCircleRepeated(PLMMError):
    pass


class DegenerateDenominator(PLMMError):
    pass


class NewtonDivergence(PLMMError):
    pass


class ReferenceFailure(PLMMError):
    pass


class DerivativeUnavailable(PLMMError):
    pass


class SingularVandermonde(PLMMError):
    pass


class RankDeficient(PLMMError):
    pass


class ConfigError(PLMMError):
    """An experiment configuration could not be resolved."""
