"""cavityflow exceptions.

Every error the engines raise derives from CavityFlowError and carries the
exit code the CLI reports for it:

    ConfigError       2   bad keys, bad values, inconsistent requests
    CapacityError     3   sector dimension above the configured budget
    NumericalError    4   eigensolver, integrator, dark jumps, closure breakdown

The concrete classes also inherit the matching builtin (ValueError,
MemoryError, RuntimeError) so callers that only know the builtins still
catch them.
"""

from __future__ import annotations


class CavityFlowError(Exception):
    """Base class for all cavityflow failures."""

    exit_code: int = 1


class ConfigError(CavityFlowError, ValueError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class CapacityError(CavityFlowError, MemoryError):
    """A Fock sector (or density matrix) exceeds the memory budget."""

    exit_code = 3

    def __init__(self, dimension: int, budget: int, what: str = "basis"):
        self.dimension = dimension
        self.budget = budget
        super().__init__(
            f"{what} dimension {dimension} exceeds the configured budget {budget}"
        )


class SectorError(CavityFlowError, ValueError):
    """An operator term changes (N_up, N_down)."""

    exit_code = 2


class NumericalError(CavityFlowError, RuntimeError):
    """Base class for numerical failures."""

    exit_code = 4


class ConvergenceError(NumericalError):
    """Eigensolver did not reach the requested residual."""


class StiffnessError(NumericalError):
    """Adaptive integrator rejected steps below its minimum step."""


class DarkStateError(NumericalError):
    """A jump was applied to a state it annihilates."""


class StepSizeError(NumericalError):
    """SME step violates the small-increment preconditions."""


class ClosureBreakdownError(NumericalError):
    """Mean-field variables left the physical region (strict mode)."""


class ClosureBreakdownWarning(RuntimeWarning):
    """Mean-field variables left the physical region (lenient mode)."""
