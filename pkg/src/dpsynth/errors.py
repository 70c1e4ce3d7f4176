"""Exception types. Everything derives from ValueError so callers can catch broadly."""


class ValidationError(ValueError):
    """An argument or input file violates a documented precondition."""


class FormatError(ValidationError):
    """A TensorFile or manifest is malformed."""


class CalibrationError(ValueError):
    """No noise multiplier inside the search bracket meets the privacy target."""


class BudgetError(RuntimeError):
    """Accounted epsilon exceeds the configured target."""


class SingularityError(ZeroDivisionError):
    """Inverting a diffusion step with a zero signal coefficient."""


class SizeError(ValidationError):
    """An exhaustive enumeration would exceed its size guard."""


class GroupingError(ValidationError):
    """A class has fewer records than requested groups."""
