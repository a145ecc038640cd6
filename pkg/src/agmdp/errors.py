"""Exception hierarchy shared by every stage of the pipeline."""


class AgmdpError(Exception):
    """Base class for all library errors."""


class InvalidModel(AgmdpError):
    """A network model violates one of its structural invariants."""


class InvalidEvent(AgmdpError):
    """A mutation event cannot be applied to the current model."""


class StateSpaceCap(AgmdpError):
    """The exponential generator would exceed its configured size cap."""

    def __init__(self, message: str, bound: int | None = None):
        super().__init__(message)
        self.bound = bound


class EmptyGraph(AgmdpError):
    pass


class LayerOrder(AgmdpError):
    """An MDP transform was applied out of the Generic/Terrain/Adversary/Task order."""


class EmptyActionSet(AgmdpError):
    pass


class TargetMissing(AgmdpError):
    pass


class OracleScaleExceeded(AgmdpError):
    pass


class ScenarioInvalid(AgmdpError):
    """A scenario file failed validation before any execution."""
