"""The mesh composition graph: registration, decommissioning and lineage."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from .descriptor import validate_descriptor
from .errors import (
    CycleError,
    DanglingReferenceError,
    DuplicateError,
    HasConsumersError,
    NotFoundError,
    ValidationError,
)
from .model import (
    ConsumptionStyle,
    DataProduct,
    InputPort,
    MeshPortRef,
    OutputPort,
    PortRef,
)


class Direction(str, Enum):
    UPSTREAM = "upstream"
    DOWNSTREAM = "downstream"


@dataclass(frozen=True)
class Edge:
    consumer: PortRef  # input port
    producer: PortRef  # output port


@dataclass
class RemovalReport:
    product: str
    dangling_consumers: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"product": self.product, "dangling_consumers": self.dangling_consumers}


@dataclass
class MeshGraph:
    """Products keyed by id. Edges are derived, never stored."""

    products: dict[str, DataProduct] = field(default_factory=dict)

    def __contains__(self, product_id: str) -> bool:
        return product_id in self.products

    def get(self, product_id: str) -> DataProduct:
        try:
            return self.products[product_id]
        except KeyError:
            raise NotFoundError(f"no data product {product_id!r}") from None

    def output_port(self, ref: PortRef | MeshPortRef | str) -> OutputPort:
        if isinstance(ref, str):
            ref = PortRef.parse(ref)
        port = self.get(ref.product).output(ref.port)
        if port is None:
            raise NotFoundError(f"no output port {ref.product}:{ref.port}")
        return port

    def input_port(self, ref: PortRef | str) -> InputPort:
        if isinstance(ref, str):
            ref = PortRef.parse(ref)
        port = self.get(ref.product).input(ref.port)
        if port is None:
            raise NotFoundError(f"no input port {ref.product}:{ref.port}")
        return port

    def output_refs(self) -> Iterator[PortRef]:
        for pid in sorted(self.products):
            for port in self.products[pid].output_ports:
                yield PortRef(pid, port.id)

    def resolves(self, target: MeshPortRef) -> bool:
        product = self.products.get(target.product)
        return product is not None and product.output(target.port) is not None

    @property
    def edges(self) -> set[Edge]:
        out = set()
        for pid, product in self.products.items():
            for ip in product.input_ports:
                if isinstance(ip.target, MeshPortRef) and self.resolves(ip.target):
                    out.add(Edge(PortRef(pid, ip.id), PortRef(ip.target.product, ip.target.port)))
        return out

    def _adjacency(self, direction: Direction) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = defaultdict(set)
        for e in self.edges:
            if direction is Direction.UPSTREAM:
                adj[e.consumer.product].add(e.producer.product)
            else:
                adj[e.producer.product].add(e.consumer.product)
        return adj

    def consumers(self, product_id: str) -> set[str]:
        """Products with an input port targeting one of ``product_id``'s outputs."""
        return {
            pid
            for pid, p in self.products.items()
            for ip in p.input_ports
            if isinstance(ip.target, MeshPortRef) and ip.target.product == product_id
        }

    def lineage(self, product_id: str, direction: Direction | str) -> set[str]:
        direction = Direction(direction)
        self.get(product_id)
        adj = self._adjacency(direction)
        seen: set[str] = set()
        stack = list(adj.get(product_id, ()))
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(adj.get(node, ()))
        return seen

    def topological_order(self) -> list[str]:
        """Producers before consumers; ties broken by id for determinism."""
        upstream = self._adjacency(Direction.UPSTREAM)
        downstream = self._adjacency(Direction.DOWNSTREAM)
        indegree = {pid: len(upstream.get(pid, ())) for pid in self.products}
        ready = sorted(pid for pid, n in indegree.items() if n == 0)
        order = []
        while ready:
            pid = ready.pop(0)
            order.append(pid)
            for nxt in sorted(downstream.get(pid, ())):
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
            ready.sort()
        if len(order) != len(self.products):
            raise CycleError("mesh graph contains a cycle")
        return order

    def cyclic_products(self) -> set[str]:
        return {pid for pid in self.products if pid in self.lineage(pid, Direction.UPSTREAM)}

    def check_registration(self, product: DataProduct) -> None:
        problems = validate_descriptor(product)
        if problems:
            raise ValidationError(problems)
        if product.id in self.products:
            raise DuplicateError(f"data product {product.id!r} already registered")
        for ip in product.input_ports:
            target = ip.target
            if not isinstance(target, MeshPortRef):
                continue
            if target.product == product.id:
                raise CycleError(f"input port {ip.id!r} of {product.id} targets its own product")
            if not self.resolves(target):
                raise DanglingReferenceError(
                    f"input port {ip.id!r} of {product.id} targets unknown port {target}"
                )
            if ip.projection:
                known = {c.name for c in self.output_port(target).schema}
                missing = [c for c in ip.projection if known and c not in known]
                if missing:
                    raise ValidationError(
                        [f"input port {ip.id!r}: projection columns {missing} not in {target} schema"]
                    )
        trial = MeshGraph({**self.products, product.id: product})
        if product.id in trial.lineage(product.id, Direction.UPSTREAM):
            raise CycleError(f"registering {product.id} would introduce a cycle")

    def register(self, product: DataProduct) -> str:
        self.check_registration(product)
        self.products[product.id] = product
        return product.id

    def decommission(self, product_id: str, force: bool = False) -> RemovalReport:
        self.get(product_id)
        consumers = sorted(self.consumers(product_id) - {product_id})
        if consumers and not force:
            raise HasConsumersError(product_id, consumers)
        del self.products[product_id]
        return RemovalReport(product_id, consumers)

    def validate(self) -> dict[str, list[str]]:
        """Per-product findings; an empty dict means the mesh is valid."""
        report: dict[str, list[str]] = defaultdict(list)
        for pid in sorted(self.cyclic_products()):
            report[pid].append("member of a composition cycle")
        for pid in sorted(self.products):
            product = self.products[pid]
            report[pid].extend(validate_descriptor(product))
            for ip in product.input_ports:
                target = ip.target
                if not isinstance(target, MeshPortRef):
                    continue
                if not self.resolves(target):
                    report[pid].append(f"input port {ip.id!r}: dangling reference to {target}")
                    continue
                if ip.consumption_style is ConsumptionStyle.BY_PROJECTION:
                    source = self.output_port(target)
                    known = {c.name for c in source.schema}
                    missing = [c for c in ip.projection or () if c not in known]
                    if source.schema and missing:
                        report[pid].append(
                            f"input port {ip.id!r}: projection columns {missing} not in {target} schema"
                        )
        return {pid: findings for pid, findings in report.items() if findings}


def register_product(mesh: MeshGraph, descriptor: DataProduct) -> str:
    return mesh.register(descriptor)


def decommission_product(mesh: MeshGraph, product_id: str, force: bool = False) -> RemovalReport:
    return mesh.decommission(product_id, force)


def lineage(mesh: MeshGraph, product_id: str, direction: Direction | str) -> set[str]:
    return mesh.lineage(product_id, direction)


def validate_mesh(mesh: MeshGraph) -> dict[str, list[str]]:
    return mesh.validate()


def build(products: Iterable[DataProduct]) -> MeshGraph:
    """Register products in the given order, rejecting anything invalid."""
    mesh = MeshGraph()
    for p in products:
        mesh.register(p)
    return mesh
