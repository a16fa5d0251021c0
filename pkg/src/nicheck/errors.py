"""Exception types shared across the toolkit."""


class InputError(Exception):
    """Malformed input: bad file syntax, unknown identifier, broken invariant.

    Carries an optional source anchor so loaders can point at the offending
    line (``path:line: message``).
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(self._format())

    def _format(self) -> str:
        if self.path is not None and self.line is not None:
            return f"{self.path}:{self.line}: {self.message}"
        if self.path is not None:
            return f"{self.path}: {self.message}"
        return self.message


class UnsupportedPolicyError(Exception):
    """The requested verification method does not support this policy class."""


class FamilySizeError(Exception):
    """The post-conditional suffix set is too large to build a relation family."""
