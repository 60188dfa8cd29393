"""Knowledge-graph embeddings and embedding-based entity re-ranking."""

__version__ = "0.1.0"


class MissingEmbedding(KeyError):
    """Raised when a token or entity has no vector in an embedding table."""

    def __init__(self, token):
        super().__init__(token)
        self.token = token

    def __str__(self):
        return f"missing embedding: {self.token!r}"


class FormatError(ValueError):
    """A data file violates its documented format."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
