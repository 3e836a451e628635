"""Exception types shared across flixlab."""


class FlixError(Exception):
    """Base class for every error raised by flixlab."""


class ShapeError(FlixError, ValueError):
    """Operands have incompatible shapes or lengths."""


class DomainError(FlixError, ValueError):
    """An argument lies outside its admissible range."""


class UnknownFeatureError(FlixError, KeyError):
    """A feature name is not declared in the registry."""

    def __init__(self, name, kind=None):
        self.name = name
        self.kind = kind
        label = f"{kind} feature" if kind else "feature"
        super().__init__(f"unknown {label}: {name!r}")

    def __str__(self):
        return self.args[0]


class ConfigError(FlixError, ValueError):
    """An experiment configuration or split plan is inconsistent."""


class NumericalError(FlixError, ArithmeticError):
    """A computation produced a non-finite value."""
