"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain of a function (non-finite, bad parameter)."""


class PoleError(ArithmeticError):
    """Evaluation too close to a pole of a meromorphic function."""


class SingularityError(ArithmeticError):
    """Integration path or evaluation point hits a branch point."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class ContractError(ValueError):
    """A precondition of an operation does not hold."""
