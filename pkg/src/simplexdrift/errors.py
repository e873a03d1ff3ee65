"""Exception hierarchy shared by all simplexdrift modules.

Every exception carries a short ``kind`` string so the command-line tools can
emit machine-readable error records without inspecting class names.
"""


class SimplexDriftError(Exception):
    kind = "error"


class DomainError(SimplexDriftError, ValueError):
    kind = "domain"


class DimensionError(SimplexDriftError, ValueError):
    kind = "dimension"


class AlignmentError(SimplexDriftError, ValueError):
    kind = "alignment"


class StructureError(SimplexDriftError, ValueError):
    kind = "structure"


class ConfigurationError(SimplexDriftError, ValueError):
    kind = "configuration"


class DegenerateInputError(SimplexDriftError, ValueError):
    kind = "degenerate-input"


class LineageError(SimplexDriftError, ValueError):
    kind = "lineage"


class LineageViolationError(LineageError):
    kind = "lineage-violation"


class UnknownPartError(LineageError):
    kind = "reference"


class PreconditionError(SimplexDriftError, ValueError):
    kind = "precondition"


class SequencingError(SimplexDriftError, ValueError):
    kind = "sequencing"


class NotReadyError(SimplexDriftError):
    kind = "not-ready"


class SpecError(SimplexDriftError, ValueError):
    kind = "spec"


class SchemaError(SimplexDriftError, ValueError):
    """Malformed input record; ``line`` is 1-based when known."""

    kind = "schema"

    def __init__(self, message, line=None, path=None):
        super().__init__(message)
        self.line = line
        self.path = path

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.path is not None:
            where.append(str(self.path))
        if self.line is not None:
            where.append(f"line {self.line}")
        return f"{': '.join(where)}: {msg}" if where else msg


class NotApplicableError(PreconditionError):
    kind = "not-applicable"


class RefusedError(PreconditionError):
    kind = "refused"
