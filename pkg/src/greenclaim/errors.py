"""Exception hierarchy shared by all greenclaim modules."""

from __future__ import annotations


class GreenClaimError(Exception):
    """Base class for every error raised by this package."""


# graph store -----------------------------------------------------------------


class SchemaError(GreenClaimError, ValueError):
    pass


class ConflictingAttributeKind(SchemaError):
    def __init__(self, entity_type: str, attribute: str, kinds: tuple[str, str] | None = None):
        self.entity_type = entity_type
        self.attribute = attribute
        self.kinds = kinds
        detail = f" ({kinds[0]} vs {kinds[1]})" if kinds else ""
        super().__init__(f"conflicting kind for {entity_type}.{attribute}{detail}")


class UnknownEntityType(SchemaError):
    def __init__(self, entity_type: str):
        self.entity_type = entity_type
        super().__init__(f"entity type {entity_type!r} is not declared in the schema")


class UndeclaredAttribute(SchemaError):
    def __init__(self, entity_type: str, attribute: str):
        self.entity_type = entity_type
        self.attribute = attribute
        super().__init__(f"attribute {attribute!r} is not declared for {entity_type}")


class AttributeKindMismatch(SchemaError):
    def __init__(self, entity_type: str, attribute: str, kind: str, value: object):
        self.entity_type = entity_type
        self.attribute = attribute
        self.kind = kind
        self.value = value
        super().__init__(f"{entity_type}.{attribute} expects {kind}, got {value!r}")


class SchemaViolation(SchemaError):
    def __init__(self, src_type: str, label: str, dst_type: str):
        self.src_type = src_type
        self.label = label
        self.dst_type = dst_type
        super().__init__(f"triple ({src_type}, {label}, {dst_type}) is not allowed by the schema")


class MissingNode(GreenClaimError, KeyError):
    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(node_id)

    def __str__(self) -> str:
        return f"no node with id {self.node_id!r}"


class MissingEndpoint(MissingNode):
    pass


class StoreSealed(GreenClaimError, RuntimeError):
    """Raised on a write attempt after ``seal()``."""


# embeddings --------------------------------------------------------------------


class DimensionMismatch(GreenClaimError, ValueError):
    pass


class RemoteEmbedderUnavailable(GreenClaimError, RuntimeError):
    pass


# docstore / ingest -------------------------------------------------------------


class InvalidWindow(GreenClaimError, ValueError):
    pass


class ParseError(GreenClaimError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class MissingField(ParseError):
    def __init__(self, name: str, line: int | None = None):
        self.name = name
        super().__init__(f"missing field {name!r}", line)


# providers ---------------------------------------------------------------------


class ProviderError(GreenClaimError, RuntimeError):
    """Any failure to obtain a usable model response."""


class ProviderUnavailable(ProviderError):
    pass


class ScriptExhausted(ProviderError):
    pass


class NonJsonResponse(ProviderError):
    pass


# reasoning / evaluation --------------------------------------------------------


class MissingCompanyNode(GreenClaimError, ValueError):
    pass


class EmptyInput(GreenClaimError, ValueError):
    pass


class InconsistentPipelineSet(GreenClaimError, ValueError):
    pass


class MalformedMatrix(GreenClaimError, ValueError):
    pass


class UnsupportedK(GreenClaimError, ValueError):
    pass


class UnparseableRanking(GreenClaimError, ValueError):
    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)
