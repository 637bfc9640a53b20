"""Translate policies into bucket-style native storage policies.

Only constructs that a storage service can check by itself survive the
translation: principals that are plain roles or users, read/write actions and
address prefixes of blob ports. Anything else is rejected rather than
approximated.
"""

from __future__ import annotations

from typing import Iterable

from ..errors import UnsupportedConstructError
from ..mesh import MeshGraph
from ..model import InterfaceType
from .engine import glob_match
from .lang import Action, Effect, Policy, Rule

BLOB_STORE = "blob_store"
NATIVE_ACTIONS = (Action.READ, Action.WRITE)


def _principals(rule: Rule, idx: int):
    if rule.subject is None:
        return "*"
    roles, users = set(), set()
    for conj in rule.subject:
        if len(conj) != 1 or conj[0].negated or conj[0].kind not in ("role", "user"):
            raise UnsupportedConstructError(
                f"rule {idx} ({rule}): only or-combinations of role()/user() are expressible natively"
            )
        (roles if conj[0].kind == "role" else users).add(conj[0].value)
    return {"roles": sorted(roles), "users": sorted(users)}


def compile_native(policy: Policy, mesh: MeshGraph, target: str = BLOB_STORE) -> dict:
    if target != BLOB_STORE:
        raise UnsupportedConstructError(f"unknown native target {target!r}")
    statements = []
    for idx, rule in enumerate(policy.rules):
        if rule.condition is not None:
            raise UnsupportedConstructError(f"rule {idx} ({rule}): label conditions are not expressible natively")
        if rule.action not in NATIVE_ACTIONS:
            raise UnsupportedConstructError(f"rule {idx} ({rule}): action {rule.action.value} has no native form")
        if rule.resource.column not in (None, "*"):
            raise UnsupportedConstructError(f"rule {idx} ({rule}): column patterns have no native form")
        principals = _principals(rule, idx)
        prefixes = []
        for ref in mesh.output_refs():
            if not glob_match(rule.resource.product, ref.product):
                continue
            if rule.resource.port is not None and not glob_match(rule.resource.port, ref.port):
                continue
            port = mesh.output_port(ref)
            if port.interface_type is not InterfaceType.BLOB:
                raise UnsupportedConstructError(
                    f"rule {idx} ({rule}): matches {port.interface_type.value} port {ref}; only blob ports compile"
                )
            prefixes.append(port.address)
        if not prefixes:
            continue
        statements.append(
            {
                "effect": rule.effect.value.capitalize(),
                "action": rule.action.value,
                "principals": principals,
                "resources": sorted(set(prefixes)),
                "source_rule": idx,
            }
        )
    return {"version": 1, "target": target, "policy": policy.name, "statements": statements}


def _under(path: str, prefix: str) -> bool:
    return path == prefix or path.startswith(prefix.rstrip("/") + "/")


def evaluate_native(doc: dict, user: str, roles: Iterable[str], action: str, path: str) -> str:
    """What the storage service itself would answer: explicit deny wins, default deny."""
    roles = set(roles)
    effects = set()
    for st in doc["statements"]:
        if st["action"] != action:
            continue
        p = st["principals"]
        if p != "*" and user not in p["users"] and not roles & set(p["roles"]):
            continue
        if any(_under(path, prefix) for prefix in st["resources"]):
            effects.add(st["effect"])
    if "Deny" in effects:
        return Effect.DENY.value
    return Effect.ALLOW.value if "Allow" in effects else Effect.DENY.value
