"""Exception types raised across the package."""


class PolySplineError(Exception):
    """Base class for all errors raised by this package."""


class NonManifoldEdge(PolySplineError):
    """An edge is shared by more than two faces."""


class InconsistentOrientation(PolySplineError):
    """Two faces traverse a shared edge in the same direction."""


class SeparationViolated(PolySplineError):
    """Two polygon cells are adjacent, or a polygon touches the boundary."""


class NotCompatible(PolySplineError):
    """A cell was treated as spline-compatible but is not."""


class MergeFailed(PolySplineError):
    """Polygon merging consumed the mesh without reaching a star shape."""


class NotStarShaped(PolySplineError):
    """Operation requires a star-shaped polygon with nonempty kernel."""


class CenterInsidePolygon(PolySplineError):
    """A kernel center could not be placed strictly outside the polygon."""


class RankDeficient(PolySplineError):
    """A least-squares or fitting system is numerically singular."""


class InfeasibleConstraints(PolySplineError):
    """Too few kernel centers to satisfy the constraint rows."""


class SingularFit(PolySplineError):
    """Geometric-map interpolation system is rank deficient."""


class DegenerateJacobian(PolySplineError):
    """Geometric map Jacobian is (near) singular at a query point."""


class NotConverged(PolySplineError):
    """Iterative solver failed to reach the requested residual."""


class NotSPD(PolySplineError):
    """Matrix factorization failed; reduced system is not positive definite."""


class TooLarge(PolySplineError):
    """System exceeds the size cap of a dense operation."""
