"""The ``.dp.json`` data product description format.

Parsing is strict: unknown keys, unknown enum values and missing required keys
are all rejected, and every problem found is reported at once through
:class:`~meshplane.errors.ValidationError`.
"""

from __future__ import annotations

import json
from collections import Counter
from typing import Any

from .errors import ValidationError
from .model import (
    NAME_RE,
    Archetype,
    Column,
    ConsumptionStyle,
    DataProduct,
    Expectation,
    ExpectationKind,
    ExternalSourceRef,
    InputPort,
    InterfaceType,
    MeshPortRef,
    OutputPort,
    PortRef,
    ProductDescriptor,
    ScalarType,
    Slo,
    SloKind,
)

EXTENSION = ".dp.json"

_TOP_REQUIRED = ("name", "domain", "archetype", "output_ports", "input_ports")
_TOP_OPTIONAL = ("description",)
_OUT_REQUIRED = ("id", "address", "interface")
_OUT_OPTIONAL = ("schema", "slos", "labels", "encryption_enabled")
_IN_REQUIRED = ("id", "target", "consumption_style")
_IN_OPTIONAL = ("projection", "expectations", "materialization")
_EXPECTATION_KEYS = {
    ExpectationKind.COLUMN_PRESENT: ("column",),
    ExpectationKind.NON_NULL_FRACTION: ("column", "min_fraction"),
    ExpectationKind.MIN_ROW_COUNT: ("n",),
    ExpectationKind.MAX_STALENESS_SECONDS: ("seconds",),
}


class _Reader:
    """Collects structural problems while walking a decoded document."""

    def __init__(self) -> None:
        self.errors: list[str] = []

    def obj(self, value: Any, where: str, required, optional=()) -> dict | None:
        if not isinstance(value, dict):
            self.errors.append(f"{where}: expected an object")
            return None
        for key in required:
            if key not in value:
                self.errors.append(f"{where}: missing required key '{key}'")
        for key in value:
            if key not in required and key not in optional:
                if key == "slos" and where.startswith("input port"):
                    self.errors.append(
                        f"{where}: SLOs may only be attached to output ports"
                    )
                else:
                    self.errors.append(f"{where}: unknown key '{key}'")
        return value

    def enum(self, enum_cls, value: Any, where: str):
        try:
            return enum_cls(value)
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            self.errors.append(f"{where}: unknown value {value!r} (expected one of {allowed})")
            return None

    def string(self, value: Any, where: str) -> str | None:
        if not isinstance(value, str):
            self.errors.append(f"{where}: expected a string")
            return None
        return value

    def number(self, value: Any, where: str, integer: bool = False):
        ok = isinstance(value, int) if integer else isinstance(value, (int, float))
        if not ok or isinstance(value, bool):
            self.errors.append(f"{where}: expected {'an integer' if integer else 'a number'}")
            return None
        return value

    def array(self, value: Any, where: str) -> list:
        if not isinstance(value, list):
            self.errors.append(f"{where}: expected an array")
            return []
        return value

    def strings(self, value: Any, where: str) -> list[str]:
        return [s for s in self.array(value, where) if self.string(s, where) is not None]


def _read_output(r: _Reader, raw: Any, idx: int) -> OutputPort | None:
    pid = raw.get("id") if isinstance(raw, dict) else None
    where = f"output port {pid!r}" if isinstance(pid, str) else f"output port #{idx}"
    d = r.obj(raw, where, _OUT_REQUIRED, _OUT_OPTIONAL)
    if d is None:
        return None
    if "id" in d and r.string(d["id"], f"{where} id") is None:
        return None
    schema = []
    for c in r.array(d.get("schema", []), f"{where} schema"):
        cd = r.obj(c, f"{where} column", ("name", "type"), ("subject_ref",))
        if cd is None:
            continue
        ctype = r.enum(ScalarType, cd.get("type"), f"{where} column type")
        subject = cd.get("subject_ref", False)
        if not isinstance(subject, bool):
            r.errors.append(f"{where} column: subject_ref must be a boolean")
        name = r.string(cd.get("name"), f"{where} column name")
        if name is not None and ctype is not None:
            schema.append(Column(name, ctype, bool(subject)))
    slos = []
    for s in r.array(d.get("slos", []), f"{where} slos"):
        sd = r.obj(s, f"{where} slo", ("kind", "threshold"))
        if sd is None:
            continue
        kind = r.enum(SloKind, sd.get("kind"), f"{where} slo kind")
        threshold = r.number(sd.get("threshold"), f"{where} slo threshold")
        if kind is not None and threshold is not None:
            slos.append(Slo(kind, threshold))
    encrypted = d.get("encryption_enabled", False)
    if not isinstance(encrypted, bool):
        r.errors.append(f"{where}: encryption_enabled must be a boolean")
    iface = r.enum(InterfaceType, d.get("interface"), f"{where} interface") if "interface" in d else None
    address = r.string(d.get("address"), f"{where} address") if "address" in d else None
    if pid is None or iface is None or address is None:
        return None
    return OutputPort(
        id=pid,
        address=address,
        interface_type=iface,
        schema=tuple(schema),
        slos=tuple(slos),
        declared_labels=frozenset(r.strings(d.get("labels", []), f"{where} labels")),
        encryption_enabled=bool(encrypted),
    )


def _read_expectation(r: _Reader, raw: Any, where: str) -> Expectation | None:
    kind_raw = raw.get("kind") if isinstance(raw, dict) else None
    kind = r.enum(ExpectationKind, kind_raw, f"{where} expectation kind") if kind_raw is not None else None
    keys = _EXPECTATION_KEYS.get(kind, ())
    d = r.obj(raw, f"{where} expectation", ("kind",) + keys)
    if d is None or kind is None:
        return None
    return Expectation(
        kind,
        column=r.string(d["column"], f"{where} expectation column") if "column" in d else None,
        min_fraction=r.number(d["min_fraction"], f"{where} min_fraction") if "min_fraction" in d else None,
        n=r.number(d["n"], f"{where} n", integer=True) if "n" in d else None,
        seconds=r.number(d["seconds"], f"{where} seconds") if "seconds" in d else None,
    )


def _read_target(r: _Reader, raw: Any, where: str):
    d = r.obj(raw, f"{where} target", (), ("port", "external", "labels"))
    if d is None:
        return None
    if ("port" in d) == ("external" in d):
        r.errors.append(f"{where}: target must name exactly one of 'port' or 'external'")
        return None
    if "port" in d:
        if "labels" in d:
            r.errors.append(f"{where}: labels are only declared on external targets")
        text = r.string(d["port"], f"{where} target port")
        if text is None:
            return None
        try:
            ref = PortRef.parse(text)
        except ValueError as exc:
            r.errors.append(f"{where}: {exc}")
            return None
        if ref.column:
            r.errors.append(f"{where}: target must reference a port, not a column")
        return MeshPortRef(ref.product, ref.port)
    uri = r.string(d["external"], f"{where} target external")
    labels = frozenset(r.strings(d.get("labels", []), f"{where} target labels"))
    return ExternalSourceRef(uri, labels) if uri is not None else None


def _read_input(r: _Reader, raw: Any, idx: int) -> InputPort | None:
    pid = raw.get("id") if isinstance(raw, dict) else None
    where = f"input port {pid!r}" if isinstance(pid, str) else f"input port #{idx}"
    d = r.obj(raw, where, _IN_REQUIRED, _IN_OPTIONAL)
    if d is None:
        return None
    if "id" in d and r.string(d["id"], f"{where} id") is None:
        return None
    target = _read_target(r, d["target"], where) if "target" in d else None
    style = (
        r.enum(ConsumptionStyle, d["consumption_style"], f"{where} consumption_style")
        if "consumption_style" in d
        else None
    )
    projection = None
    if d.get("projection") is not None:
        projection = tuple(r.strings(d["projection"], f"{where} projection"))
    expectations = [
        _read_expectation(r, e, where) for e in r.array(d.get("expectations", []), f"{where} expectations")
    ]
    materialization = d.get("materialization")
    if materialization is not None:
        materialization = r.string(materialization, f"{where} materialization")
    if pid is None or target is None or style is None:
        return None
    return InputPort(
        id=pid,
        target=target,
        consumption_style=style,
        projection=projection,
        expectations=tuple(e for e in expectations if e is not None),
        materialization=materialization,
    )


def from_dict(doc: Any) -> DataProduct:
    r = _Reader()
    d = r.obj(doc, "descriptor", _TOP_REQUIRED, _TOP_OPTIONAL)
    if d is None:
        raise ValidationError(r.errors)
    name = r.string(d.get("name"), "name") if "name" in d else None
    domain = r.string(d.get("domain"), "domain") if "domain" in d else None
    archetype = r.enum(Archetype, d.get("archetype"), "archetype") if "archetype" in d else None
    description = r.string(d.get("description", ""), "description") or ""
    outputs = [_read_output(r, p, i) for i, p in enumerate(r.array(d.get("output_ports", []), "output_ports"))]
    inputs = [_read_input(r, p, i) for i, p in enumerate(r.array(d.get("input_ports", []), "input_ports"))]
    if r.errors or name is None or domain is None or archetype is None:
        raise ValidationError(r.errors or ["descriptor is incomplete"])
    product = DataProduct(
        name=name,
        domain=domain,
        archetype=archetype,
        output_ports=tuple(outputs),
        input_ports=tuple(inputs),
        description=description,
    )
    problems = validate_descriptor(product)
    if problems:
        raise ValidationError(problems)
    return product


def parse_descriptor(text: str | bytes) -> ProductDescriptor:
    """Parse and validate a descriptor document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"malformed JSON: {exc.msg} at line {exc.lineno}, column {exc.colno}"])
    return from_dict(doc)


def validate_descriptor(d: ProductDescriptor) -> list[str]:
    """Check every invariant that can be decided without the rest of the mesh."""
    errors: list[str] = []
    for label, value in (("name", d.name), ("domain", d.domain)):
        if not NAME_RE.match(value or ""):
            errors.append(f"{label} {value!r} must match {NAME_RE.pattern}")
    if not d.output_ports:
        errors.append("product must declare at least one output port")
    counts = Counter(p.id for p in (*d.output_ports, *d.input_ports))
    for pid, n in sorted(counts.items()):
        if n > 1:
            errors.append(f"port id {pid!r} is used {n} times")
        if not NAME_RE.match(pid or ""):
            errors.append(f"port id {pid!r} must match {NAME_RE.pattern}")

    for p in d.output_ports:
        where = f"output port {p.id!r}"
        if not isinstance(p.interface_type, InterfaceType):
            errors.append(f"{where}: interface must be one of blob, streaming, sql")
        if not p.address:
            errors.append(f"{where}: address must be non-empty")
        if p.interface_type is InterfaceType.SQL and not p.schema:
            errors.append(f"{where}: sql ports require a non-empty schema")
        cols = Counter(c.name for c in p.schema)
        errors.extend(f"{where}: duplicate column {c!r}" for c, n in sorted(cols.items()) if n > 1)
        if any(not NAME_RE.match(c.name) for c in p.schema):
            errors.append(f"{where}: column names must match {NAME_RE.pattern}")
        if sum(c.subject_ref for c in p.schema) > 1:
            errors.append(f"{where}: at most one column may be the subject reference")
        for slo in p.slos:
            errors.extend(f"{where}: {msg}" for msg in slo.problems())

    for p in d.input_ports:
        where = f"input port {p.id!r}"
        is_projection = p.consumption_style is ConsumptionStyle.BY_PROJECTION
        if is_projection and not p.projection:
            errors.append(f"{where}: consumption_style by_projection requires a projection list")
        if not is_projection and p.projection is not None:
            errors.append(f"{where}: projection is only allowed with consumption_style by_projection")
        if isinstance(p.target, ExternalSourceRef) and not p.target.uri:
            errors.append(f"{where}: external target uri must be non-empty")
        if p.materialization is not None and p.consumption_style is not ConsumptionStyle.BY_COPY:
            errors.append(f"{where}: materialization is only meaningful for by_copy inputs")
        for e in p.expectations:
            errors.extend(f"{where}: {msg}" for msg in e.problems())
    return errors


def _expectation_dict(e: Expectation) -> dict:
    out: dict[str, Any] = {"kind": e.kind.value}
    for key in _EXPECTATION_KEYS[e.kind]:
        out[key] = getattr(e, key)
    return out


def _target_dict(t) -> dict:
    if isinstance(t, MeshPortRef):
        return {"port": str(t)}
    return {"external": t.uri, "labels": sorted(t.manual_labels)}


def to_dict(d: ProductDescriptor) -> dict:
    outputs = []
    for p in d.output_ports:
        outputs.append(
            {
                "id": p.id,
                "address": p.address,
                "interface": p.interface_type.value,
                "schema": [
                    {"name": c.name, "type": c.type.value, "subject_ref": c.subject_ref}
                    for c in p.schema
                ],
                "slos": [{"kind": s.kind.value, "threshold": s.threshold} for s in p.slos],
                "labels": sorted(p.declared_labels),
                "encryption_enabled": p.encryption_enabled,
            }
        )
    inputs = []
    for p in d.input_ports:
        entry: dict[str, Any] = {
            "id": p.id,
            "target": _target_dict(p.target),
            "consumption_style": p.consumption_style.value,
            "expectations": [_expectation_dict(e) for e in p.expectations],
        }
        if p.projection is not None:
            entry["projection"] = list(p.projection)
        if p.materialization is not None:
            entry["materialization"] = p.materialization
        inputs.append(entry)
    return {
        "name": d.name,
        "domain": d.domain,
        "archetype": d.archetype.value,
        "description": d.description,
        "output_ports": outputs,
        "input_ports": inputs,
    }


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def serialize_descriptor(d: ProductDescriptor) -> str:
    """Canonical text: sorted keys, 2-space indent, LF endings, trailing newline."""
    return canonical_json(to_dict(d))
