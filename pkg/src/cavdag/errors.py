"""Exception types raised across the package."""


class CavDagError(Exception):
    """Base class for all package errors."""


class CycleFound(CavDagError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__(f"graph contains a cycle: {self.cycle}")


class UnknownVertex(CavDagError, KeyError):
    pass


class NoVertexAhead(CavDagError):
    pass


class UnreachableDestination(CavDagError):
    pass


class NoOverlap(CavDagError):
    pass


class EmptyOutgoing(CavDagError):
    pass


class DegenerateRegion(CavDagError):
    pass


class NumericalBreakdown(CavDagError):
    pass


class TooLarge(CavDagError):
    pass


class Infeasible(CavDagError):
    pass


class LimitReached(CavDagError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class NonmonotoneTimestamps(CavDagError):
    pass


class KinematicDomain(CavDagError, ValueError):
    pass


class InfeasibleStart(CavDagError):
    pass


class SchemaError(CavDagError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class GeometryError(CavDagError, ValueError):
    pass


class NotConverged(CavDagError):
    """The trajectory optimiser stopped before meeting its targets; ``solution`` is the best iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
