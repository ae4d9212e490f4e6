"""
Exception hierarchy shared by every component
"""


class DynSggError(Exception):
    """Base class for all errors raised by this package"""


class ShapeError(DynSggError, ValueError):
    """Operand shapes do not conform for an operation"""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class ContractError(DynSggError, ValueError):
    """A precondition of an operation was violated"""


class ConfigError(ContractError):
    """Invalid configuration key or value"""


class NumericsError(DynSggError, ArithmeticError):
    """A non-finite value appeared where a finite one is required"""


class ParseError(DynSggError):
    """Malformed dataset, checkpoint or prediction file"""

    def __init__(self, message: str, offset: int = None, field: str = None):
        self.offset = offset
        self.field = field
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if offset is not None:
            where.append(f"byte offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class VersionError(DynSggError):
    """File written by an incompatible format version"""

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"unsupported format version {found} (expected {expected})")


class GradcheckError(DynSggError):
    """A registered gradient check failed, or none are registered"""
