"""Exception hierarchy shared by every module of the lab."""


class SGPPError(Exception):
    """Base class for all lab errors."""


# geometry
class AmbiguousProjection(SGPPError, ValueError):
    pass


class OutsideTube(SGPPError, ValueError):
    pass


class NonPositiveFactor(SGPPError, ValueError):
    pass


# score fields and guidance
class TimeOutOfRange(SGPPError, ValueError):
    pass


class TauOutOfRange(SGPPError, ValueError):
    pass


# samplers
class BadRange(SGPPError, ValueError):
    pass


class ZeroSteps(SGPPError, ValueError):
    pass


class StepTooCoarse(SGPPError, ValueError):
    pass


class DivergedTrajectory(SGPPError, RuntimeError):
    """Raised when a single-path run leaves the ball of radius 1e6.

    The partially integrated trajectory is attached as ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# analysis
class NoConvergence(SGPPError, RuntimeError):
    pass


class UnassignableState(SGPPError, ValueError):
    pass


# experiment harness
class ConfigError(SGPPError, ValueError):
    pass


class SchemaMismatch(SGPPError, ValueError):
    pass
