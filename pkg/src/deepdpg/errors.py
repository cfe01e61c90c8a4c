"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid layer spec, training config or experiment config."""


class ContractError(RuntimeError):
    """A caller broke an interface precondition (mismatched cache, architecture...)."""


class NumericalError(ArithmeticError):
    """A non-finite value showed up where an update would consume it."""


class InsufficientDataError(ValueError):
    """Not enough stored transitions to draw the requested minibatch."""


class PlannerError(RuntimeError):
    """The iLQG backward pass could not regularize the action Hessian."""
