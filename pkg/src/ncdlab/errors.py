"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violated an operation's calling contract."""


class DomainError(ValueError):
    """An input was outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A run configuration file could not be parsed or validated."""


class NonFiniteLossError(RuntimeError):
    """A loss term evaluated to NaN or infinity."""

    def __init__(self, term, value):
        self.term = term
        self.value = value
        super().__init__(f"non-finite loss term {term!r}: {value!r}")
