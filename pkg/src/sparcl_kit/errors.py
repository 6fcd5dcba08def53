class SparclError(Exception):
    """Base class for all errors raised by sparcl_kit."""


class DimMismatch(SparclError, ValueError):
    pass


class ShapeMismatch(SparclError, ValueError):
    pass


class ZeroRow(SparclError, ValueError):
    pass


class EmptyMap(SparclError, ValueError):
    pass


class ChannelMismatch(SparclError, ValueError):
    pass


class ImpossibleEdit(SparclError, ValueError):
    pass


class InvalidCount(SparclError, ValueError):
    pass


class IndexOutOfRange(SparclError, IndexError):
    pass


class InvalidMode(SparclError, ValueError):
    pass


class InvalidConfig(SparclError, ValueError):
    pass


class InvalidParams(SparclError, ValueError):
    pass


class EmptyEvalSet(SparclError, ValueError):
    pass


class CorruptHeader(SparclError, ValueError):
    pass


class ChecksumMismatch(SparclError, ValueError):
    pass


class DivergenceDetected(SparclError, ArithmeticError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
