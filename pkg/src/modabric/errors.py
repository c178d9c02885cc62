"""Exception types shared across the package."""


class ModabricError(Exception):
    """Base class for package errors."""


class ShapeError(ModabricError, ValueError):
    """Operand shapes do not conform."""


class SequenceTooShortError(ShapeError):
    """A convolution input is shorter than the filter width."""


class NonFiniteError(ModabricError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ApplicabilityError(ModabricError, ValueError):
    """An attribute was requested for a product type it does not apply to."""


class SamplingError(ModabricError, ValueError):
    """Negative or instance sampling cannot satisfy its constraints."""


class ColdUserError(ModabricError, ValueError):
    """A user vector was requested for a customer with no history."""


class DegenerateVectorError(ModabricError, ValueError):
    """Cosine similarity against a zero-norm vector."""


class ValidationError(ModabricError, ValueError):
    """Input data or configuration failed validation."""
