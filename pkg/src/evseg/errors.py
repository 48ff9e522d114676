"""Exception hierarchy.

Data problems (bad files, out-of-range inputs) derive from ``DataError``;
failures of the numerics (degenerate rays, constant images) derive from
``NumericalError``. The CLI maps the two families to exit codes 3 and 4.
"""


class EvsegError(Exception):
    pass


class DataError(EvsegError):
    pass


class NumericalError(EvsegError):
    pass


class ParseError(DataError):
    def __init__(self, line, message="malformed event line"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class BoundsError(DataError):
    pass


class OrderError(DataError):
    def __init__(self, line, message="timestamps decrease"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SpecError(DataError):
    pass


class ShapeError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class DepthError(DataError):
    pass


class ModelError(EvsegError):
    pass


class GeometryError(NumericalError):
    pass


class DegenerateError(NumericalError):
    pass
