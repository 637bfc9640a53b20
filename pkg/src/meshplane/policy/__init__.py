from .engine import AccessRequest, Decision, Resource, Subject, TraceEntry, evaluate, explain, glob_match
from .lang import (
    Action,
    Atom,
    Effect,
    Policy,
    ResourcePattern,
    Rule,
    Scope,
    ScopeKind,
    parse_policies,
    parse_policy,
    serialize_policy,
)
from .native import compile_native, evaluate_native

__all__ = [
    "AccessRequest",
    "Action",
    "Atom",
    "Decision",
    "Effect",
    "Policy",
    "Resource",
    "ResourcePattern",
    "Rule",
    "Scope",
    "ScopeKind",
    "Subject",
    "TraceEntry",
    "compile_native",
    "evaluate",
    "evaluate_native",
    "explain",
    "glob_match",
    "parse_policies",
    "parse_policy",
    "serialize_policy",
]
