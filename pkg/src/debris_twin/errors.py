"""Exception hierarchy and the stable CLI exit code attached to each family."""

from __future__ import annotations


class DebrisTwinError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this family."""

    exit_code = 1

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_dict(self) -> dict:
        out = {"error": type(self).__name__, "message": self.message}
        out.update({k: (str(v) if not isinstance(v, (int, float)) else v)
                    for k, v in self.context.items()})
        return out

    def __str__(self):
        if not self.context:
            return self.message
        where = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({where})"


class MalformedFile(DebrisTwinError):
    """An input file is missing, truncated or does not follow its format.

    ``line`` is 1-based for text formats, ``offset`` a byte offset for binary
    ones.
    """

    exit_code = 3

    def __init__(self, message, path=None, line=None, offset=None):
        super().__init__(message, path=path, line=line, offset=offset)
        self.path = path
        self.line = line
        self.offset = offset


class DimensionMismatch(DebrisTwinError):
    exit_code = 4


class UnknownClassIndex(DebrisTwinError):
    exit_code = 5


class NonOrthonormalRotation(DebrisTwinError):
    exit_code = 6


class InvalidConfig(DebrisTwinError):
    exit_code = 7


class MissingDensity(DebrisTwinError):
    exit_code = 8

    def __init__(self, class_index: int, class_name: str | None = None):
        name = class_name if class_name is not None else f"class {class_index}"
        super().__init__(f"no density configured for {name!r}",
                         class_index=class_index, class_name=class_name)
        self.class_index = class_index
        self.class_name = class_name


class DegenerateGeometry(DebrisTwinError):
    exit_code = 9


class DomainError(DebrisTwinError, ValueError):
    exit_code = 10


class InvalidSpec(DebrisTwinError):
    exit_code = 11


class IoError(DebrisTwinError):
    exit_code = 12


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in (MalformedFile, DimensionMismatch, UnknownClassIndex,
                NonOrthonormalRotation, InvalidConfig, MissingDensity,
                DegenerateGeometry, DomainError, InvalidSpec, IoError)
}
