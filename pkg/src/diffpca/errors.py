"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid configuration (bad field, unknown key, inconsistent shapes)."""


class InstrumentModelMismatch(ConfigError):
    """Instrument evaluated on a path produced by an incompatible model."""


class NumericalError(ArithmeticError):
    """A numerical failure: non-finite intermediate, failed decomposition."""


class NonFiniteError(NumericalError):
    """A recorded value became non-finite.

    Carries the offending node id (and path row, when evaluating a block).
    """

    def __init__(self, message, node_id=None, row=None):
        super().__init__(message)
        self.node_id = node_id
        self.row = row


class BudgetError(RuntimeError):
    """A simulation budget was exceeded; carries the budget that would be needed."""

    def __init__(self, message, required):
        super().__init__(message)
        self.required = required
