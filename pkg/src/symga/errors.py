"""Exception hierarchy shared across the package."""


class SymgaError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class GameValidationError(SymgaError, ValueError):
    pass


class KernelRowNotStochastic(GameValidationError):
    def __init__(self, state, joint_action, total):
        self.state = state
        self.joint_action = joint_action
        self.total = total
        super().__init__(
            f"kernel row at state {state}, joint action {joint_action} sums to {total!r}"
        )


class NegativeProbability(GameValidationError):
    pass


class EmptyStateOrActionSet(GameValidationError):
    pass


class InvalidDistribution(GameValidationError):
    pass


class NonFiniteCost(GameValidationError):
    pass


class ShapeMismatch(SymgaError, ValueError):
    pass


class CombinatorialBlowup(SymgaError):
    def __init__(self, size, cap):
        self.size = size
        self.cap = cap
        super().__init__(f"enumeration of {size} items exceeds cap {cap}")


class IndeterminateMargin(SymgaError):
    """A satisfaction margin is too close to the threshold to decide at the solver tolerance."""

    def __init__(self, player, state, margin, slack):
        self.player = player
        self.state = state
        self.margin = margin
        self.slack = slack
        super().__init__(
            f"player {player}, state {state}: margin {margin:.3e} within slack {slack:.3e}"
        )


class AllGapsZero(SymgaError):
    pass


class NotSymmetric(SymgaError):
    pass


class NoTargetEquilibrium(SymgaError):
    pass


class ConfigError(SymgaError, ValueError):
    pass


class ParseError(ConfigError):
    pass


class RangeError(ConfigError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"{field} out of range")
