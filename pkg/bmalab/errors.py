from typing import Iterable, Optional


class BMAError(Exception):
    """Base error. `detail` is what the CLI prints, `exit_code` what it returns."""

    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(BMAError):
    exit_code = 2

    def __init__(self, detail: str, paths: Iterable[str] = ()):
        super().__init__(detail)
        self.paths = list(paths)

    @classmethod
    def from_validation_error(cls, exc) -> "ConfigError":
        """Flatten a pydantic ValidationError into `dotted.path: message` lines."""
        paths = []
        lines = []
        for err in exc.errors():
            path = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
            paths.append(path)
            lines.append(f"{path}: {err.get('msg')}")
        return cls("Invalid config:\n  " + "\n  ".join(lines), paths=paths)


class InvalidInputError(BMAError, ValueError):
    pass


class EmptyCellError(BMAError):
    """A cell has no observations, so its marginal-likelihood kernel is undefined."""


class EmptyUnbiasedSetError(BMAError, ValueError):
    pass


class InsufficientDataError(BMAError, ValueError):
    pass


class OutputError(BMAError):
    pass
