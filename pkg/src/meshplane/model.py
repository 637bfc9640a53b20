"""Data product model: products, ports, SLOs and consumer expectations.

Identifiers follow a fixed shape. A product id is ``domain/name``; a port
reference is ``domain/name:port``; a column reference appends ``:column``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class Archetype(str, Enum):
    SOURCE_ALIGNED = "source_aligned"
    CONSUMER_ALIGNED = "consumer_aligned"


class InterfaceType(str, Enum):
    BLOB = "blob"
    STREAMING = "streaming"
    SQL = "sql"


class ConsumptionStyle(str, Enum):
    BY_COPY = "by_copy"
    BY_REFERENCE = "by_reference"
    BY_PROJECTION = "by_projection"


class ScalarType(str, Enum):
    STRING = "string"
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    TIMESTAMP = "timestamp"


class SloKind(str, Enum):
    FRESHNESS_SECONDS = "freshness_seconds"
    COMPLETENESS_PCT = "completeness_pct"
    AVAILABILITY_PCT = "availability_pct"


class ExpectationKind(str, Enum):
    COLUMN_PRESENT = "column_present"
    NON_NULL_FRACTION = "non_null_fraction"
    MIN_ROW_COUNT = "min_row_count"
    MAX_STALENESS_SECONDS = "max_staleness_seconds"


NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


@dataclass(frozen=True)
class Column:
    name: str
    type: ScalarType
    # marks the column holding the traceable reference to a data subject
    subject_ref: bool = False


@dataclass(frozen=True)
class Slo:
    kind: SloKind
    threshold: float

    def problems(self) -> list[str]:
        if not self.threshold > 0:
            return [f"SLO {self.kind.value} threshold must be > 0"]
        if self.kind is not SloKind.FRESHNESS_SECONDS and self.threshold > 100:
            return [f"SLO {self.kind.value} threshold must be in (0, 100]"]
        return []


@dataclass(frozen=True)
class Expectation:
    """One declarative clause of a consumer-driven contract."""

    kind: ExpectationKind
    column: str | None = None
    min_fraction: float | None = None
    n: int | None = None
    seconds: float | None = None

    def problems(self) -> list[str]:
        k = self.kind
        out = []
        if k in (ExpectationKind.COLUMN_PRESENT, ExpectationKind.NON_NULL_FRACTION):
            if not self.column:
                out.append(f"expectation {k.value} requires a column")
        if k is ExpectationKind.NON_NULL_FRACTION:
            if self.min_fraction is None or not 0 <= self.min_fraction <= 1:
                out.append("non_null_fraction min_fraction must be in [0, 1]")
        if k is ExpectationKind.MIN_ROW_COUNT and (self.n is None or self.n < 0):
            out.append("min_row_count n must be >= 0")
        if k is ExpectationKind.MAX_STALENESS_SECONDS and (
            self.seconds is None or self.seconds < 0
        ):
            out.append("max_staleness_seconds must be >= 0")
        return out

    def describe(self) -> str:
        k = self.kind
        if k is ExpectationKind.COLUMN_PRESENT:
            return f"column_present({self.column})"
        if k is ExpectationKind.NON_NULL_FRACTION:
            return f"non_null_fraction({self.column}, {self.min_fraction})"
        if k is ExpectationKind.MIN_ROW_COUNT:
            return f"min_row_count({self.n})"
        return f"max_staleness_seconds({self.seconds})"


@dataclass(frozen=True)
class MeshPortRef:
    product: str
    port: str

    def __str__(self) -> str:
        return f"{self.product}:{self.port}"


@dataclass(frozen=True)
class ExternalSourceRef:
    """A system outside the mesh boundary; its labels are declared by hand."""

    uri: str
    manual_labels: frozenset[str] = frozenset()


@dataclass(frozen=True)
class OutputPort:
    id: str
    address: str
    interface_type: InterfaceType
    schema: tuple[Column, ...] = ()
    slos: tuple[Slo, ...] = ()
    declared_labels: frozenset[str] = frozenset()
    encryption_enabled: bool = False

    def column(self, name: str) -> Column | None:
        for col in self.schema:
            if col.name == name:
                return col
        return None

    @property
    def subject_column(self) -> Column | None:
        return next((c for c in self.schema if c.subject_ref), None)


@dataclass(frozen=True)
class InputPort:
    id: str
    target: MeshPortRef | ExternalSourceRef
    consumption_style: ConsumptionStyle
    projection: tuple[str, ...] | None = None
    expectations: tuple[Expectation, ...] = ()
    # where a by_copy consumer materializes its copy
    materialization: str | None = None


@dataclass(frozen=True)
class DataProduct:
    name: str
    domain: str
    archetype: Archetype
    output_ports: tuple[OutputPort, ...]
    input_ports: tuple[InputPort, ...] = ()
    description: str = ""

    @property
    def id(self) -> str:
        return f"{self.domain}/{self.name}"

    def output(self, port_id: str) -> OutputPort | None:
        return next((p for p in self.output_ports if p.id == port_id), None)

    def input(self, port_id: str) -> InputPort | None:
        return next((p for p in self.input_ports if p.id == port_id), None)


# A descriptor is the serialized form of a product; both share one type.
ProductDescriptor = DataProduct


@dataclass(frozen=True, order=True)
class PortRef:
    product: str
    port: str
    column: str | None = field(default=None, compare=True)

    @classmethod
    def parse(cls, text: str) -> "PortRef":
        parts = text.split(":")
        if len(parts) not in (2, 3) or "/" not in parts[0] or not all(parts):
            raise ValueError(f"malformed port reference {text!r}")
        return cls(parts[0], parts[1], parts[2] if len(parts) == 3 else None)

    @property
    def port_ref(self) -> "PortRef":
        return PortRef(self.product, self.port)

    @property
    def domain(self) -> str:
        return self.product.split("/", 1)[0]

    def __str__(self) -> str:
        base = f"{self.product}:{self.port}"
        return f"{base}:{self.column}" if self.column else base
