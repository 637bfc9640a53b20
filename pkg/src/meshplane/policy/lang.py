"""Parser and canonical printer for ``.mpol`` policy files.

Example::

    policy "mkt-open" scope domain marketing {
      allow read on marketing/*:* to domain(marketing);
      deny read on *:*:email to not role(steward) when label(sensitive-pii);
    }

Subject and condition expressions have no parentheses; ``and`` binds tighter
than ``or``. Both are therefore held in disjunctive normal form: a tuple of
conjunctions, each a tuple of possibly negated atoms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from ..errors import PolicySyntaxError, ScopeMismatchError

EXTENSION = ".mpol"


class Effect(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


class Action(str, Enum):
    READ = "read"
    WRITE = "write"
    MANAGE = "manage"


class ScopeKind(str, Enum):
    GLOBAL = "global"
    DOMAIN = "domain"
    PRODUCT = "product"


SUBJECT_KINDS = ("role", "user", "domain", "attr")


@dataclass(frozen=True)
class Atom:
    kind: str  # role | user | domain | attr | label
    value: str
    negated: bool = False

    def __str__(self) -> str:
        return f"{'not ' if self.negated else ''}{self.kind}({self.value})"


Dnf = tuple[tuple[Atom, ...], ...]


def dnf_text(expr: Dnf) -> str:
    return " or ".join(" and ".join(str(a) for a in conj) for conj in expr)


@dataclass(frozen=True)
class ResourcePattern:
    product: str
    port: str | None = None
    column: str | None = None

    def __str__(self) -> str:
        parts = [self.product]
        if self.port is not None:
            parts.append(self.port)
            if self.column is not None:
                parts.append(self.column)
        return ":".join(parts)


@dataclass(frozen=True)
class Rule:
    effect: Effect
    action: Action
    resource: ResourcePattern
    subject: Dnf | None = None  # None means ``any``
    condition: Dnf | None = None

    def __str__(self) -> str:
        text = f"{self.effect.value} {self.action.value} on {self.resource} to "
        text += "any" if self.subject is None else dnf_text(self.subject)
        if self.condition is not None:
            text += f" when {dnf_text(self.condition)}"
        return text + ";"


@dataclass(frozen=True)
class Scope:
    kind: ScopeKind
    name: str | None = None

    def __str__(self) -> str:
        return self.kind.value if self.name is None else f"{self.kind.value} {self.name}"


@dataclass(frozen=True)
class Policy:
    name: str
    scope: Scope
    rules: tuple[Rule, ...] = ()


_TOKEN = re.compile(
    r"""(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>\#[^\n]*)
      |(?P<string>"[^"\n]*")|(?P<word>[A-Za-z0-9_.*/-]+)|(?P<punct>[{}();:])""",
    re.VERBOSE,
)
_IDENT = re.compile(r"^[A-Za-z0-9_.-]+$")
_QUALNAME = re.compile(r"^[A-Za-z0-9_.-]+/[A-Za-z0-9_.-]+$")
_GLOB = re.compile(r"^[A-Za-z0-9_.*/-]+$")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, message: str, tok: _Tok | None = None):
        tok = tok or self.cur
        raise PolicySyntaxError(message, tok.line, tok.col)

    def next(self) -> _Tok:
        tok = self.cur
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.cur.text != text or self.cur.kind == "string":
            shown = self.cur.text or "end of input"
            self.fail(f"expected '{text}' but found '{shown}'")
        return self.next()

    def word(self, what: str, pattern: re.Pattern = _IDENT) -> str:
        tok = self.cur
        if tok.kind != "word" or not pattern.match(tok.text):
            self.fail(f"expected {what} but found '{tok.text or 'end of input'}'")
        return self.next().text

    def policies(self) -> list[Policy]:
        out = []
        while self.cur.kind != "eof":
            out.append(self.policy())
        return out

    def policy(self) -> Policy:
        self.expect("policy")
        tok = self.cur
        if tok.kind != "string":
            self.fail("expected quoted policy name")
        self.next()
        name = tok.text[1:-1]
        if not name:
            self.fail("policy name must be non-empty", tok)
        self.expect("scope")
        scope = self.scope()
        self.expect("{")
        rules = []
        while self.cur.text != "}":
            if self.cur.kind == "eof":
                self.fail("expected '}' but found end of input")
            start = self.cur
            rule = self.rule()
            _check_scope(scope, rule, start)
            rules.append(rule)
        self.expect("}")
        return Policy(name, scope, tuple(rules))

    def scope(self) -> Scope:
        tok = self.cur
        kind = self.word("scope kind")
        if kind == "global":
            return Scope(ScopeKind.GLOBAL)
        if kind == "domain":
            return Scope(ScopeKind.DOMAIN, self.word("domain name"))
        if kind == "product":
            return Scope(ScopeKind.PRODUCT, self.word("product id (domain/name)", _QUALNAME))
        self.fail(f"unknown scope '{kind}' (expected global, domain or product)", tok)

    def rule(self) -> Rule:
        tok = self.cur
        effect = self.word("effect")
        if effect not in ("allow", "deny"):
            self.fail(f"unknown effect '{effect}' (expected allow or deny)", tok)
        tok = self.cur
        action = self.word("action")
        if action not in ("read", "write", "manage"):
            self.fail(f"unknown action '{action}' (expected read, write or manage)", tok)
        self.expect("on")
        resource = self.resource()
        self.expect("to")
        if self.cur.text == "any" and self.cur.kind == "word":
            self.next()
            subject = None
        else:
            subject = self.expr(SUBJECT_KINDS)
        condition = None
        if self.cur.text == "when":
            self.next()
            condition = self.expr(("label",))
        self.expect(";")
        return Rule(Effect(effect), Action(action), resource, subject, condition)

    def resource(self) -> ResourcePattern:
        parts = [self.word("resource pattern", _GLOB)]
        while self.cur.text == ":" and len(parts) < 3:
            self.next()
            parts.append(self.word("resource pattern", _GLOB))
        parts += [None] * (3 - len(parts))
        return ResourcePattern(*parts)

    def expr(self, kinds: tuple[str, ...]) -> Dnf:
        disjuncts = []
        conj = [self.atom(kinds)]
        while self.cur.text in ("and", "or") and self.cur.kind == "word":
            op = self.next().text
            if op == "or":
                disjuncts.append(tuple(conj))
                conj = []
            conj.append(self.atom(kinds))
        disjuncts.append(tuple(conj))
        return tuple(disjuncts)

    def atom(self, kinds: tuple[str, ...]) -> Atom:
        negated = False
        if self.cur.text == "not":
            self.next()
            negated = True
        tok = self.cur
        kind = self.word(" or ".join(kinds))
        if kind not in kinds:
            self.fail(f"unknown matcher '{kind}' (expected {', '.join(kinds)})", tok)
        self.expect("(")
        value = self.word("identifier")
        self.expect(")")
        return Atom(kind, value, negated)


def _check_scope(scope: Scope, rule: Rule, tok: _Tok) -> None:
    product = rule.resource.product
    if scope.kind is ScopeKind.PRODUCT and product != scope.name:
        raise ScopeMismatchError(
            f"rule at line {tok.line} references {product!r} outside product scope {scope.name}"
        )
    if scope.kind is ScopeKind.DOMAIN and not product.startswith(f"{scope.name}/"):
        raise ScopeMismatchError(
            f"rule at line {tok.line} references {product!r} outside domain scope {scope.name}"
        )


def parse_policies(text: str) -> list[Policy]:
    return _Parser(text).policies()


def parse_policy(text: str) -> Policy:
    parser = _Parser(text)
    policy = parser.policy()
    if parser.cur.kind != "eof":
        parser.fail("expected end of input after policy")
    return policy


def serialize_policy(policy: Policy) -> str:
    lines = [f'policy "{policy.name}" scope {policy.scope} {{']
    lines += [f"  {rule}" for rule in policy.rules]
    lines.append("}")
    return "\n".join(lines) + "\n"


def validate_policy(policy: Policy) -> None:
    """Re-check scope consistency for policies built without the parser."""
    if '"' in policy.name or not policy.name:
        raise ValueError("policy name must be non-empty and contain no quotes")
    for rule in policy.rules:
        _check_scope(policy.scope, rule, _Tok("word", "", 0, 0))
