"""Exception types raised by the solvers."""

from __future__ import annotations


class MFLQError(Exception):
    """Base class for all hard numerical or input errors."""

    kind = "error"

    def details(self) -> dict:
        return {}


class ProblemFormatError(MFLQError, ValueError):
    """Problem file could not be parsed or has the wrong layout."""

    kind = "parse"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column

    def details(self) -> dict:
        return {"line": self.line, "column": self.column}


class DimensionError(MFLQError, ValueError):
    kind = "dimension"


class StepTooLargeError(MFLQError, ValueError):
    """Step size makes the first-order transition matrix leave [0, 1]."""

    kind = "step"


class RegularityError(MFLQError):
    """Positivity or range condition on the control weight failed."""

    kind = "regularity"

    def __init__(self, message: str, i: int, t: float, e: int):
        super().__init__(f"{message} (i={i}, t={t:.17g}, regime={e})")
        self.i, self.t, self.e = i, t, e

    def details(self) -> dict:
        return {"i": self.i, "t": self.t, "regime": self.e}


class RangeError(MFLQError):
    """Offset vector not in the range of the control weight."""

    kind = "range"

    def __init__(self, message: str, t: float, e: int):
        super().__init__(f"{message} (t={t:.17g}, regime={e})")
        self.t, self.e = t, e

    def details(self) -> dict:
        return {"t": self.t, "regime": self.e}


class BlowUpError(MFLQError):
    kind = "blowup"

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.17g})")
        self.t = t

    def details(self) -> dict:
        return {"t": self.t}


class NotStronglyRegular(MFLQError):
    kind = "not-strongly-regular"

    def __init__(self, message: str, k: int, value: float):
        super().__init__(message)
        self.k, self.value = k, value

    def details(self) -> dict:
        return {"iteration": self.k, "min_eigenvalue": self.value}


class MaxIterations(MFLQError):
    kind = "max-iterations"

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NonConvex(MFLQError):
    """Conjugate gradient met a direction of non-positive curvature."""

    kind = "nonconvex"

    def __init__(self, message: str, curvature: float):
        super().__init__(message)
        self.curvature = curvature

    def details(self) -> dict:
        return {"curvature": self.curvature}


class TreeBudgetError(MFLQError):
    kind = "budget"

    def __init__(self, message: str, nodes: int):
        super().__init__(message)
        self.nodes = nodes

    def details(self) -> dict:
        return {"nodes": self.nodes}
