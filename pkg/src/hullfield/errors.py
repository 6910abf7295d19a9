"""Error taxonomy for the decomposition pipeline.

Every failure mode callers are expected to branch on gets its own class so
that the CLI can map them to stable exit codes.
"""


class HullfieldError(Exception):
    """Base class for all library errors."""


class ParseError(HullfieldError):
    """Input file is malformed or in an unsupported format."""


class NonManifold(HullfieldError):
    """Mesh is not a closed 2-manifold (boundary or fin edges, bad winding)."""


class DegenerateGeometry(HullfieldError):
    """Geometry too degenerate to proceed (no faces, zero extent, ...)."""


class LowAcceptance(HullfieldError):
    """Volume rejection sampling accepted too few points (near-zero volume)."""


class OracleStarvation(HullfieldError):
    """Too few anchors yield valid negatives; input is convex or near-convex."""

    def __init__(self, msg="negative mining starved", yield_fraction=None):
        super().__init__(msg)
        self.yield_fraction = yield_fraction


class DegenerateHull(HullfieldError):
    """Point set is rank-deficient; no 3D convex hull exists."""


class EmptyInterior(HullfieldError):
    """Component interior sampling starved (thin sheet component)."""


class Indivisible(HullfieldError):
    """Component cannot be split further (single face/point, no valid cut)."""


class NonConvexInput(HullfieldError):
    """An input that was required to be convex is not."""


# CLI exit codes. 0 is a normal decomposition; the convex-input shortcut is
# still a success but gets its own code so scripts can tell the two apart.
EXIT_OK = 0
EXIT_PARSE = 2
EXIT_GEOMETRY = 3
EXIT_NONCONVEX_INPUT = 4
EXIT_INTERNAL = 5
EXIT_CONVEX_SHORTCUT = 6
