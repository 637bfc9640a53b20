"""Consumer-driven contract tests and output-port SLO checks.

A consumer's input port states its expectations; registering the contract
attaches them to the provider's output port, where they run against the
provider's actual data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import MeshError, NotFoundError
from .mesh import MeshGraph
from .model import Expectation, ExpectationKind, InterfaceType, MeshPortRef, SloKind

_REL_TOL = 1e-9


def _at_least(value: float, bound: float) -> bool:
    return value >= bound or math.isclose(value, bound, rel_tol=_REL_TOL, abs_tol=_REL_TOL)


@dataclass(frozen=True)
class Contract:
    id: str
    owner: str  # consuming input port
    target: str  # provider output port
    expectations: tuple[Expectation, ...]


class ContractRegistry:
    def __init__(self) -> None:
        self.contracts: dict[str, Contract] = {}

    def for_port(self, output_ref: str) -> list[Contract]:
        return [c for _, c in sorted(self.contracts.items()) if c.target == output_ref]

    def register(self, mesh: MeshGraph, input_ref: str) -> str:
        """Attach an input port's expectations to the output port it consumes."""
        ip = mesh.input_port(input_ref)
        if not isinstance(ip.target, MeshPortRef):
            raise MeshError(f"{input_ref} consumes an external source; there is no provider to register with")
        if not ip.expectations:
            raise MeshError(f"{input_ref} declares no expectations")
        mesh.output_port(ip.target)
        self.contracts[input_ref] = Contract(input_ref, input_ref, str(ip.target), ip.expectations)
        return input_ref

    def drop_product(self, product_id: str) -> None:
        prefix = product_id + ":"
        self.contracts = {
            k: c for k, c in self.contracts.items()
            if not (c.owner.startswith(prefix) or c.target.startswith(prefix))
        }


@dataclass(frozen=True)
class ExpectationResult:
    owner: str
    expectation: str
    passed: bool
    measured: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "owner": self.owner,
            "expectation": self.expectation,
            "result": "pass" if self.passed else "violation",
            "measured": self.measured,
            "detail": self.detail,
        }


@dataclass
class ContractReport:
    port: str
    evaluated_at: float
    results: list[ExpectationResult] = field(default_factory=list)

    @property
    def alert_raised(self) -> bool:
        return any(not r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "port": self.port,
            "evaluated_at": self.evaluated_at,
            "alert_raised": self.alert_raised,
            "results": [r.to_dict() for r in self.results],
        }


def evaluate_expectation(
    e: Expectation,
    header: list[str] | None,
    rows: list[list[str]],
    last_updated: float | None,
    now: float,
) -> tuple[bool, float | None, str]:
    """Evaluate one clause. ``header`` is None for non-tabular stores."""
    kind = e.kind
    if kind is ExpectationKind.MAX_STALENESS_SECONDS:
        if last_updated is None:
            return False, None, "no update time known"
        age = now - last_updated
        return age <= e.seconds, age, f"data is {age:.0f}s old (max {e.seconds})"
    if header is None:
        return False, None, "store is not tabular"
    if kind is ExpectationKind.MIN_ROW_COUNT:
        return len(rows) >= e.n, float(len(rows)), f"{len(rows)} rows (min {e.n})"
    if e.column not in header:
        return False, None, f"column {e.column!r} missing"
    if kind is ExpectationKind.COLUMN_PRESENT:
        return True, None, f"column {e.column!r} present"
    idx = header.index(e.column)
    total = len(rows)
    fraction = 1.0 if total == 0 else sum(1 for r in rows if idx < len(r) and r[idx] != "") / total
    return _at_least(fraction, e.min_fraction), fraction, f"non-null fraction {fraction:g} (min {e.min_fraction})"


def evaluate_contracts(
    port: str,
    contracts: list[Contract],
    header: list[str] | None,
    rows: list[list[str]],
    last_updated: float | None,
    now: float,
) -> ContractReport:
    """Pure evaluation of every registered expectation against one dataset."""
    report = ContractReport(port, now)
    for c in contracts:
        for e in c.expectations:
            ok, measured, detail = evaluate_expectation(e, header, rows, last_updated, now)
            report.results.append(ExpectationResult(c.owner, e.describe(), ok, measured, detail))
    return report


def run_contracts(registry: ContractRegistry, mesh: MeshGraph, store, output_ref: str, now: float) -> ContractReport:
    port = mesh.output_port(output_ref)
    if not store.exists(port.address):
        raise NotFoundError(f"store for {output_ref} at {port.address} is not readable")
    last_updated = store.mtime(port.address)
    if port.interface_type is InterfaceType.BLOB:
        header, rows = None, []
    else:
        header, rows = store.read_rows(output_ref, port)
    return evaluate_contracts(output_ref, registry.for_port(output_ref), header, rows, last_updated, now)


@dataclass(frozen=True)
class SloResult:
    kind: str
    threshold: float
    observed: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold, "observed": self.observed, "passed": self.passed}


def check_slo(mesh: MeshGraph, port_ref: str, observed: Mapping[str, float], now: float) -> list[SloResult]:
    """Compare each SLO declared on an output port with observed metrics.

    ``observed`` may carry ``last_updated`` (unix seconds), ``completeness_pct``
    and ``availability_pct``. A missing observation fails its SLO.
    """
    product = mesh.get(port_ref.split(":")[0])
    port_id = port_ref.split(":")[1]
    if product.input(port_id) is not None:
        raise MeshError(f"{port_ref} is an input port; SLOs attach to output ports only")
    port = mesh.output_port(port_ref)
    results = []
    for slo in port.slos:
        if slo.kind is SloKind.FRESHNESS_SECONDS:
            last = observed.get("last_updated")
            value = None if last is None else now - last
            ok = value is not None and value <= slo.threshold
        else:
            value = observed.get(slo.kind.value)
            ok = value is not None and _at_least(value, slo.threshold)
        results.append(SloResult(slo.kind.value, slo.threshold, value, ok))
    return results


def observe(store, mesh: MeshGraph, port_ref: str) -> dict[str, float]:
    """Derive observed metrics from the store: mtime and per-column completeness.

    Completeness is the minimum non-null percentage over all columns, so an
    SLO pass implies every column meets the same fraction.
    """
    port = mesh.output_port(port_ref)
    out: dict[str, float] = {}
    mtime = store.mtime(port.address)
    if mtime is None:
        return out
    out["last_updated"] = mtime
    if port.interface_type is not InterfaceType.BLOB:
        header, rows = store.read_rows(port_ref, port)
        out["completeness_pct"] = completeness_pct(header, rows)
    return out


def completeness_pct(header: list[str], rows: list[list[str]]) -> float:
    if not rows or not header:
        return 100.0
    worst = min(sum(1 for r in rows if i < len(r) and r[i] != "") for i in range(len(header)))
    return 100.0 * worst / len(rows)
