"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the domain where an operation is defined."""


class IllConditionedError(ArithmeticError):
    """Linear system too ill-conditioned to solve at working precision."""


class InputError(ValueError):
    """Malformed external input (CSV rows, config files)."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
