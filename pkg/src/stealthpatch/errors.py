"""Exception types raised across the toolkit."""


class StealthPatchError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(StealthPatchError, ValueError):
    pass


class OutOfBounds(StealthPatchError, ValueError):
    pass


class EmptyMask(StealthPatchError, ValueError):
    pass


class DegenerateGeometry(StealthPatchError, ValueError):
    pass


class ShapeError(StealthPatchError, ValueError):
    pass


class NonFiniteOutput(StealthPatchError, RuntimeError):
    pass


class GradientUnavailable(StealthPatchError, RuntimeError):
    pass


class NonFiniteLoss(StealthPatchError, RuntimeError):
    def __init__(self, iteration, value=None):
        self.iteration = iteration
        self.value = value
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")


class CodecError(StealthPatchError, RuntimeError):
    pass


class EmptyDataset(StealthPatchError, ValueError):
    pass


class AdapterNotFound(StealthPatchError, KeyError):
    def __init__(self, name, available=()):
        self.name = name
        self.available = tuple(available)
        super().__init__(name)

    def __str__(self):
        known = ", ".join(self.available) or "none"
        return f"no depth-model adapter named {self.name!r} (available: {known})"


class SidecarMismatch(StealthPatchError, ValueError):
    pass


class ConfigError(StealthPatchError, ValueError):
    pass
