"""Exception types shared across the package.

Every error a caller is expected to branch on gets its own class; generic
failures stay as ValueError/RuntimeError at the point of misuse.
"""

from __future__ import annotations


class HgmemError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(HgmemError):
    """A domain object violated one of its invariants.

    Carries the offending field name so callers can report precisely.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DuplicateNodeError(HgmemError):
    """A node with the same id is already present in the graph."""


class UnknownNodeError(HgmemError):
    """A node id was referenced but is not present in the graph."""


class StoreFormatError(HgmemError):
    """A persisted store file could not be parsed.

    byte_offset points at the start of the offending record.
    """

    def __init__(self, path: str, byte_offset: int, message: str):
        self.path = path
        self.byte_offset = byte_offset
        super().__init__(f"{path} @ byte {byte_offset}: {message}")


class CacheStaleError(HgmemError):
    """An index cache does not match the current hypergraph revision."""


class ConfigError(HgmemError):
    """Invalid configuration value or unparseable config file."""


class ProviderError(HgmemError):
    """Base class for provider-side failures (chat, embedding, rerank)."""


class TransportError(ProviderError):
    """Network-level failure; safe to retry."""


class TemplateError(ProviderError):
    """Unknown template id or a missing binding during rendering."""


class SchemaParseError(ProviderError):
    """Model output did not contain a usable structured block.

    raw_text preserves the full response for diagnostics and re-prompting.
    """

    def __init__(self, message: str, raw_text: str):
        self.raw_text = raw_text
        super().__init__(message)


class ScriptExhaustedError(ProviderError):
    """A scripted mock ran out of canned responses for a template."""


class CorpusFormatError(HgmemError):
    """An evaluation corpus file could not be parsed.

    record_index is the 1-based line number of the offending record.
    """

    def __init__(self, path: str, record_index: int, message: str):
        self.path = path
        self.record_index = record_index
        super().__init__(f"{path} record {record_index}: {message}")
