"""Exception types shared across the toolkit."""


class QuantPruneError(Exception):
    """Base class for input/model errors; the CLI maps these to exit code 1."""


class DataFormatError(QuantPruneError):
    """Malformed corpus, embedding, ranges, or assignment input."""


class ModelFormatError(QuantPruneError):
    """Manifest/weight-blob inconsistency or topology violation."""


class CodegenError(QuantPruneError):
    """Layer kind or configuration that cannot be emitted as source."""
