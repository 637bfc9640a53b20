"""Central query gateway with column-level access control.

Supported SQL subset (keywords are case-insensitive)::

    SELECT * | col [, col ...] FROM domain/name:port [WHERE col op literal] [;]

where ``op`` is one of ``= != < >`` and ``literal`` is a number or a
single-quoted string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from ..classification import Classification
from ..errors import MeshError, NotFoundError, PolicyDenied, QuerySyntaxError
from ..mesh import MeshGraph
from ..model import InterfaceType, OutputPort, ScalarType
from ..policy import Action, Policy, Subject
from .access import PortDecision, authorize
from .storage import DatasetStore

_TOKENS = re.compile(
    r"""(?P<ws>\s+)|(?P<string>'(?:[^']|'')*')|(?P<number>-?\d+(?:\.\d+)?)
      |(?P<op>!=|=|<|>)|(?P<punct>[,*;:])|(?P<word>[A-Za-z_][A-Za-z0-9_./-]*)""",
    re.VERBOSE,
)
_KEYWORDS = {"select", "from", "where"}


@dataclass(frozen=True)
class Predicate:
    column: str
    op: str
    literal: str | float

    def holds(self, cell: str, ctype: ScalarType | None) -> bool:
        if cell == "":
            return False
        lhs: object = cell
        rhs: object = self.literal
        if ctype in (ScalarType.INT, ScalarType.FLOAT) and isinstance(rhs, float):
            try:
                lhs = float(cell)
            except ValueError:
                return False
        else:
            rhs = _literal_text(rhs)
            if ctype is ScalarType.BOOL:
                lhs, rhs = cell.lower(), str(rhs).lower()
        if self.op == "=":
            return lhs == rhs
        if self.op == "!=":
            return lhs != rhs
        try:
            return lhs < rhs if self.op == "<" else lhs > rhs
        except TypeError:
            return False


def _literal_text(value: str | float) -> str:
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else str(value)
    return value


@dataclass(frozen=True)
class Query:
    columns: tuple[str, ...] | None  # None for SELECT *
    product: str
    port: str
    where: Predicate | None = None

    @property
    def port_ref(self) -> str:
        return f"{self.product}:{self.port}"


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKENS.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(("eof", "", len(text)))
    return out


def parse_query(text: str) -> Query:
    toks = _tokenize(text)
    i = 0

    def peek():
        return toks[i]

    def take(kind: str | None = None, value: str | None = None, what: str = ""):
        nonlocal i
        k, v, pos = toks[i]
        if (kind and k != kind) or (value and v.lower() != value):
            raise QuerySyntaxError(f"expected {what or value or kind} but found {v or 'end of query'!r}", pos)
        i += 1
        return v

    def ident(what: str) -> str:
        k, v, pos = peek()
        if k != "word" or v.lower() in _KEYWORDS:
            raise QuerySyntaxError(f"expected {what} but found {v or 'end of query'!r}", pos)
        return take()

    take("word", "select", "SELECT")
    columns: list[str] | None
    if peek()[1] == "*":
        take()
        columns = None
    else:
        columns = [ident("column name")]
        while peek()[1] == ",":
            take()
            columns.append(ident("column name"))
    take("word", "from", "FROM")
    product_pos = peek()[2]
    product = ident("data product id")
    if "/" not in product:
        raise QuerySyntaxError("product id must be domain/name", product_pos)
    take("punct", ":", "':' between product and port")
    port = ident("port name")
    where = None
    if peek()[0] == "word" and peek()[1].lower() == "where":
        take()
        col = ident("column name")
        op = take("op", what="comparison operator")
        k, v, pos = peek()
        if k == "number":
            literal: str | float = float(take())
        elif k == "string":
            literal = take()[1:-1].replace("''", "'")
        else:
            raise QuerySyntaxError(f"expected literal but found {v or 'end of query'!r}", pos)
        where = Predicate(col, op, literal)
    if peek()[1] == ";":
        take()
    if peek()[0] != "eof":
        raise QuerySyntaxError(f"unexpected {peek()[1]!r}", peek()[2])
    return Query(tuple(columns) if columns is not None else None, product, port, where)


@dataclass
class QueryResult:
    columns: list[str]
    rows: list[list[str]]
    decision: PortDecision

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rows": self.rows}


def referenced_columns(query: Query, port: OutputPort) -> list[str]:
    known = [c.name for c in port.schema]
    selected = known if query.columns is None else list(query.columns)
    cols = list(dict.fromkeys(selected + ([query.where.column] if query.where else [])))
    unknown = [c for c in cols if c not in known]
    if unknown:
        raise MeshError(f"unknown columns {unknown} on {query.port_ref}")
    return cols


def gateway_query(
    subject: Subject,
    query_text: str,
    mesh: MeshGraph,
    classification: Classification,
    policies: Iterable[Policy],
    store: DatasetStore,
) -> QueryResult:
    query = parse_query(query_text)
    port = mesh.output_port(query.port_ref)
    if port.interface_type is not InterfaceType.SQL:
        raise MeshError(f"{query.port_ref} is a {port.interface_type.value} port; the gateway serves sql ports")
    cols = referenced_columns(query, port)
    decision = authorize(subject, Action.READ, query.port_ref, mesh, classification, policies, cols)
    if not decision.allowed:
        denied = decision.denied_columns
        raise PolicyDenied(f"access denied to columns: {', '.join(denied)}", decision, denied)
    table = store.read_rows(query.port_ref, port)
    if table is None:
        raise NotFoundError(f"no data stored at {port.address}")
    header, rows = table
    selected = [c.name for c in port.schema] if query.columns is None else list(query.columns)
    missing = [c for c in cols if c not in header]
    if missing:
        raise MeshError(f"stored data for {query.port_ref} lacks columns {missing}")
    idx = [header.index(c) for c in selected]
    if query.where:
        w = header.index(query.where.column)
        col = port.column(query.where.column)
        rows = [r for r in rows if query.where.holds(r[w], col.type if col else None)]
    return QueryResult(selected, [[r[i] for i in idx] for r in rows], decision)
