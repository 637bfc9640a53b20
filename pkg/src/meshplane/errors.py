"""Exception hierarchy shared by every layer of the control plane."""

from __future__ import annotations


class MeshError(Exception):
    """Base class for all control-plane errors."""


class NotFoundError(MeshError):
    pass


class DuplicateError(MeshError):
    pass


class CycleError(MeshError):
    pass


class DanglingReferenceError(MeshError):
    pass


class ValidationError(MeshError):
    """Raised with the full list of findings rather than the first one."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) or "invalid")


class HasConsumersError(MeshError):
    def __init__(self, product_id: str, consumers: list[str]):
        self.product_id = product_id
        self.consumers = sorted(consumers)
        super().__init__(
            f"{product_id} is consumed by {', '.join(self.consumers)}; use force to decommission"
        )


class UnknownLabelError(MeshError):
    pass


class OverrideStateError(MeshError):
    pass


class ObligationViolation(MeshError):
    pass


class UntaggedPortError(MeshError):
    def __init__(self, port: str):
        self.port = port
        super().__init__(f"refusing to process untagged port {port}")


class PolicySyntaxError(MeshError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}")


class ScopeMismatchError(MeshError):
    pass


class UnsupportedConstructError(MeshError):
    pass


class PolicyDenied(MeshError):
    """An enforcement point refused access.

    ``columns`` lists the denied columns for gateway queries and is empty for
    port-level requests.
    """

    def __init__(self, message: str, decision=None, columns: list[str] | None = None):
        self.decision = decision
        self.columns = list(columns or [])
        super().__init__(message)


class QuerySyntaxError(MeshError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class AuthenticationFailure(MeshError):
    pass


class CorruptLogError(MeshError):
    def __init__(self, message: str, sequence: int):
        self.sequence = sequence
        super().__init__(f"{message} (sequence {sequence})")


class ConfigError(MeshError):
    pass
