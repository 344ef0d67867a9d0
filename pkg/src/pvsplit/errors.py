"""Exception hierarchy shared by all modules."""


class PVSplitError(Exception):
    """Base class for errors raised by pvsplit."""


class InvalidInput(PVSplitError, ValueError):
    pass


class SingularPoint(PVSplitError, ValueError):
    """Kernel evaluated at (or within roundoff of) the origin."""


class SingularConfiguration(PVSplitError, ValueError):
    """Two vortices coincide where the exact kernel is required."""


class NearCollision(PVSplitError, RuntimeError):
    """Deterministic integration brought two vortices inside the collision radius."""

    def __init__(self, t, distance=None):
        self.t = float(t)
        self.distance = None if distance is None else float(distance)
        msg = f"near collision at t={self.t:.17g}"
        if distance is not None:
            msg += f" (min pair distance {self.distance:.3e})"
        super().__init__(msg)


class IntegrationError(PVSplitError, RuntimeError):
    """Step budget exhausted or step size underflow."""


class TableAccuracy(PVSplitError, RuntimeError):
    pass


class InvalidTemperature(PVSplitError, ValueError):
    pass


class EmptyShell(PVSplitError, RuntimeError):
    pass
