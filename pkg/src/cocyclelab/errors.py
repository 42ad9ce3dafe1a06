"""Exception types raised by the numerical pipelines."""


class CocycleLabError(Exception):
    """Base class for all library errors."""


class NumericalFailure(CocycleLabError):
    """Base class for failures of the numerics (CLI exit code 3)."""


class StepFailure(NumericalFailure):
    """Adaptive step size fell below the minimum step."""


class Divergence(NumericalFailure):
    """State norm exceeded the configured bound."""


class ComplexSpectrum(NumericalFailure):
    """Equilibrium has non-real eigenvalues."""


class NonTransversal(CocycleLabError):
    """Vector field is tangent to a cross-section somewhere on its rectangle."""


class OutsideSection(CocycleLabError):
    """Point lies outside the section bounds or inside the singular band."""


class DegenerateProjection(NumericalFailure):
    """Flow direction is (nearly) parallel to the section plane."""


class InsufficientSamples(CocycleLabError):
    pass


class FoliationEstimateUnavailable(CocycleLabError):
    pass


class AllCensored(CocycleLabError):
    pass


class SingularMatrix(NumericalFailure):
    pass


class DimensionMismatch(CocycleLabError):
    pass


class ConfigError(CocycleLabError):
    """Invalid run configuration (CLI exit code 2)."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
