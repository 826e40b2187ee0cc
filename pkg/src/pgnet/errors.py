"""Error types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class ContractViolation(RuntimeError):
    """An internal invariant that callers must uphold was broken."""


class NumericFault(ArithmeticError):
    """A tensor produced NaN or Inf with finiteness checks enabled."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or has an unsupported version."""
