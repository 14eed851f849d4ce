"""Error categories shared by all modules.

Each class carries a ``category`` string and an ``exit_code`` so the command
line runner can report failures in a machine-readable way.
"""


class KGError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(KGError, ValueError):
    """Invalid parameters. ``problems`` lists every violated key."""

    category = "config"
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ArityError(ConfigError):
    category = "arity"


class LeafDecompositionError(KGError, ValueError):
    category = "leaf-decomposition"
    exit_code = 2


class TreeFormatError(KGError, ValueError):
    category = "format"
    exit_code = 2


class ShapeError(KGError, ValueError):
    category = "shape"
    exit_code = 2


class ResolutionError(KGError, ValueError):
    category = "resolution"
    exit_code = 2


class RangeError(KGError, OverflowError):
    category = "range"
    exit_code = 2


class DivergenceError(KGError, ArithmeticError):
    category = "divergence"
    exit_code = 3


class TruncationError(KGError, ArithmeticError):
    """Fock-space cutoff would be reached inside a checked computation."""

    category = "truncation"
    exit_code = 4
