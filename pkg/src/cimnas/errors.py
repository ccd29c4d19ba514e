"""Exception hierarchy.

Every error carries a short ``category`` string so the CLI can report a
single machine-parsable line on failure.
"""


class CimError(Exception):
    category = "internal"


class ShapeError(CimError, ValueError):
    category = "shape"


class NonFiniteError(CimError, FloatingPointError):
    category = "numeric"


class FormatError(CimError, ValueError):
    category = "format"


class DegenerateFitError(CimError, ValueError):
    category = "degenerate"


class ConfigError(CimError, ValueError):
    category = "config"


class GraphError(CimError, RuntimeError):
    category = "graph"
