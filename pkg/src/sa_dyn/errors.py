"""Exception hierarchy.

Validation errors mean the caller handed in something that violates a
precondition; numerical errors mean the computation itself broke down.
The CLI maps the two families to exit codes 1 and 2.
"""


class SADynError(Exception):
    pass


class ValidationError(SADynError, ValueError):
    pass


class NumericalError(SADynError, ArithmeticError):
    pass


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DivisibilityError(ValidationError):
    pass


class HeadCountError(ValidationError):
    pass


class NotOnSphere(ValidationError):
    def __init__(self, index, norm):
        self.index = index
        self.norm = norm
        super().__init__(f"row/oscillator {index} has norm {norm!r}, expected 1")


class NonFiniteLogits(NumericalError):
    pass


class NonFiniteMap(NumericalError):
    pass


class DegenerateRow(NumericalError):
    def __init__(self, index, norm):
        self.index = index
        self.norm = norm
        super().__init__(f"row {index} has norm {norm!r} below eps_floor")


class NoConvergence(NumericalError):
    def __init__(self, message, last_estimate, last_vector):
        self.last_estimate = last_estimate
        self.last_vector = last_vector
        super().__init__(message)


class EigFailure(NumericalError):
    pass


class EnergyOverflow(NumericalError):
    """Raised when an exponent exceeds the double-precision range.

    ``log_magnitude`` holds log(sum exp(...)), so the energy is
    ``-exp(log_magnitude)``.
    """

    def __init__(self, log_magnitude):
        self.log_magnitude = log_magnitude
        super().__init__(f"energy overflows; log|E| = {log_magnitude!r}")


class DivergedAt(NumericalError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"integration produced non-finite state at t={t!r}")


class TangentCollapse(NumericalError):
    def __init__(self, index, step):
        self.index = index
        self.step = step
        super().__init__(f"tangent direction {index} collapsed at step {step}")
