"""Exception hierarchy; the CLI maps each family to an exit code."""


class InputError(ValueError):
    """Malformed or inconsistent input (exit code 2)."""


class InfeasibleError(ValueError):
    """The requested problem has no admissible solution (exit code 3)."""


class NumericalError(RuntimeError):
    """A solver failed to reach its tolerance (exit code 4)."""
