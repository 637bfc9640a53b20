"""HTTP/JSON surface of the operator, served with the stdlib threading server.

Subjects are asserted in request bodies; caller authentication is out of
scope. Reads run concurrently against the current snapshot and mutations go
through the operator's single writer.
"""

from __future__ import annotations

import json
import logging
import re
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, unquote, urlsplit

from .. import descriptor as desc
from ..errors import (
    AuthenticationFailure,
    ConfigError,
    CycleError,
    DanglingReferenceError,
    DuplicateError,
    HasConsumersError,
    MeshError,
    NotFoundError,
    ObligationViolation,
    OverrideStateError,
    PolicyDenied,
    PolicySyntaxError,
    QuerySyntaxError,
    ScopeMismatchError,
    UnknownLabelError,
    UntaggedPortError,
    ValidationError,
)
from ..policy import Subject, serialize_policy
from .service import Operator

log = logging.getLogger(__name__)


class HttpError(Exception):
    def __init__(self, status: int, body: dict):
        self.status = status
        self.body = body


def _error_response(exc: Exception) -> tuple[int, dict]:
    body: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, HttpError):
        return exc.status, exc.body
    if isinstance(exc, ValidationError):
        body["errors"] = exc.errors
        return 422, body
    if isinstance(exc, PolicySyntaxError):
        body.update(line=exc.line, column=exc.column)
        return 422, body
    if isinstance(exc, (ScopeMismatchError, UnknownLabelError)):
        return 422, body
    if isinstance(exc, QuerySyntaxError):
        body["position"] = exc.position
        return 400, body
    if isinstance(exc, NotFoundError):
        return 404, body
    if isinstance(exc, HasConsumersError):
        body["consumers"] = exc.consumers
        return 409, body
    if isinstance(exc, (DuplicateError, CycleError, DanglingReferenceError, OverrideStateError,
                        ObligationViolation)):
        return 409, body
    if isinstance(exc, UntaggedPortError):
        body.update(effect="deny", reason="untagged", port=exc.port)
        return 403, body
    if isinstance(exc, PolicyDenied):
        body["effect"] = "deny"
        if exc.columns:
            body["denied_columns"] = exc.columns
        if exc.decision is not None and hasattr(exc.decision, "summary"):
            body["decision"] = exc.decision.summary()
        return 403, body
    if isinstance(exc, AuthenticationFailure):
        return 403, body
    if isinstance(exc, ConfigError):
        return 503, body
    if isinstance(exc, (MeshError, ValueError, KeyError, TypeError)):
        return 400, body
    log.exception("unhandled error")
    return 500, {"error": "internal", "message": "internal error"}


def _subject(body: dict) -> Subject:
    raw = body.get("subject")
    if not isinstance(raw, dict) or "user" not in raw:
        raise HttpError(400, {"error": "bad_request", "message": "body needs subject.user"})
    return Subject.from_dict(raw)


def _require(body: dict, *keys: str) -> list:
    missing = [k for k in keys if k not in body]
    if missing:
        raise HttpError(400, {"error": "bad_request", "message": f"missing field(s): {', '.join(missing)}"})
    return [body[k] for k in keys]


def _flag(value: str | None) -> bool:
    return (value or "").lower() in ("1", "true", "yes")


Handler = Callable[[Operator, re.Match, dict, dict], tuple[int, Any]]


class Api:
    """Routing table from (method, path regex) to operator calls."""

    def __init__(self, op: Operator):
        self.op = op
        self.routes: list[tuple[str, re.Pattern, Handler]] = []
        r = self.route
        r("GET", r"/products", self.list_products)
        r("POST", r"/products", self.register_product)
        r("GET", r"/products/(?P<id>[^/]+/[^/]+)", self.get_product)
        r("DELETE", r"/products/(?P<id>[^/]+/[^/]+)", self.decommission)
        r("GET", r"/lineage/(?P<id>[^/]+/[^/]+)", self.lineage)
        r("GET", r"/labels", self.list_labels)
        r("POST", r"/labels", self.define_label)
        r("GET", r"/ports/(?P<ref>.+)/classification", self.classification)
        r("GET", r"/ports/(?P<ref>.+)/obligations", self.obligations)
        r("POST", r"/ports/(?P<ref>.+)/tags", self.tag_port)
        r("GET", r"/overrides", self.list_overrides)
        r("POST", r"/overrides", self.request_override)
        r("POST", r"/overrides/(?P<id>[^/]+)/review", self.review_override)
        r("GET", r"/policies", self.list_policies)
        r("POST", r"/policies", self.apply_policy)
        r("DELETE", r"/policies/(?P<name>.+)", self.remove_policy)
        r("POST", r"/decisions", self.decide)
        r("POST", r"/access-requests", self.access_request)
        r("POST", r"/tokens", self.issue_token)
        r("POST", r"/tokens/verify", self.verify_token)
        r("POST", r"/query", self.query)
        r("POST", r"/keys/(?P<id>[^/]+)/request", self.request_key)
        r("POST", r"/contracts", self.register_contract)
        r("POST", r"/contracts/(?P<ref>.+)/run", self.run_contracts)
        r("GET", r"/slo/(?P<ref>.+)", self.check_slo)
        r("GET", r"/catalog/search", self.search)
        r("POST", r"/subjects/(?P<id>.+)/forget", self.forget)
        r("GET", r"/state/hash", self.state_hash)

    def route(self, method: str, pattern: str, handler: Callable) -> None:
        self.routes.append((method, re.compile(f"^{pattern}$"), handler))

    def dispatch(self, method: str, raw_path: str, body: dict) -> tuple[int, Any]:
        parts = urlsplit(raw_path)
        path = unquote(parts.path).rstrip("/") or "/"
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        allowed = []
        for m, pattern, handler in self.routes:
            match = pattern.match(path)
            if match is None:
                continue
            if m != method:
                allowed.append(m)
                continue
            try:
                return handler(match, query, body)
            except Exception as exc:  # mapped to a status below
                return _error_response(exc)
        if allowed:
            return 405, {"error": "method_not_allowed", "allowed": sorted(set(allowed))}
        return 404, {"error": "not_found", "message": f"no route for {path}"}

    # -- products ---------------------------------------------------------

    def list_products(self, m, q, body):
        return 200, [desc.to_dict(p) for p in self.op.list_products()]

    def register_product(self, m, q, body):
        # either a bare descriptor or {"descriptor": ..., "actor": ...}
        if "descriptor" in body:
            pid = self.op.register_product(body["descriptor"], body.get("actor", "system"))
        else:
            pid = self.op.register_product(body)
        return 201, {"id": pid, "classification": self._product_states(pid)}

    def _product_states(self, pid: str) -> dict:
        states = self.op.state.classification.states
        return {k: s.to_dict() for k, s in sorted(states.items()) if k.startswith(pid + ":")}

    def get_product(self, m, q, body):
        product = self.op.get_product(m["id"])
        return 200, {"descriptor": desc.to_dict(product), "classification": self._product_states(product.id)}

    def decommission(self, m, q, body):
        report = self.op.decommission_product(m["id"], _flag(q.get("force")))
        return 200, report.to_dict()

    def lineage(self, m, q, body):
        direction = q.get("direction", "downstream")
        return 200, {"product": m["id"], "direction": direction,
                     "products": sorted(self.op.lineage(m["id"], direction))}

    # -- classification ---------------------------------------------------

    def list_labels(self, m, q, body):
        return 200, [lb.to_dict() for lb in self.op.list_labels()]

    def define_label(self, m, q, body):
        (name,) = _require(body, "name")
        label = self.op.define_label(name, body.get("obligations", ()), body.get("description", ""))
        return 201, label.to_dict()

    def classification(self, m, q, body):
        return 200, self.op.classification_of(m["ref"]).to_dict()

    def obligations(self, m, q, body):
        return 200, self.op.check_obligations(m["ref"]).to_dict()

    def tag_port(self, m, q, body):
        (labels,) = _require(body, "labels")
        return 200, self.op.tag_port(m["ref"], labels, body.get("actor", "system")).to_dict()

    def list_overrides(self, m, q, body):
        return 200, [o.to_dict() for o in self.op.list_overrides(q.get("status"))]

    def request_override(self, m, q, body):
        port, labels, why = _require(body, "port", "labels", "justification")
        req = self.op.request_override(port, labels, why, body.get("actor", "system"))
        return 201, req.to_dict()

    def review_override(self, m, q, body):
        verdict, reviewer = _require(body, "verdict", "reviewer")
        return 200, self.op.review_override(m["id"], verdict, reviewer).to_dict()

    # -- policies ---------------------------------------------------------

    def list_policies(self, m, q, body):
        return 200, [{"name": p.name, "scope": str(p.scope), "rules": len(p.rules),
                      "source": serialize_policy(p)} for p in self.op.list_policies()]

    def apply_policy(self, m, q, body):
        (source,) = _require(body, "source")
        policies = self.op.apply_policy(source, body.get("actor", "system"))
        return 201, {"applied": [p.name for p in policies]}

    def remove_policy(self, m, q, body):
        self.op.remove_policy(m["name"])
        return 200, {"removed": m["name"]}

    def decide(self, m, q, body):
        resource, action = _require(body, "resource", "action")
        detailed = body.get("mode", "evaluate") == "explain"
        decision = self.op.decide(_subject(body), action, resource, detailed)
        return 200, decision.to_dict()

    # -- enforcement ------------------------------------------------------

    def access_request(self, m, q, body):
        (resource,) = _require(body, "resource")
        grant = self.op.submit_access_request(
            _subject(body), resource, body.get("action", "read"), body.get("mode", "token"),
            int(body.get("ttl_seconds", 300)),
        )
        return 200, grant

    def issue_token(self, m, q, body):
        (resource,) = _require(body, "resource")
        return 200, self.op.issue_token(_subject(body), resource, body.get("action", "read"),
                                        int(body.get("ttl_seconds", 300)))

    def verify_token(self, m, q, body):
        token, resource = _require(body, "token", "resource")
        status = self.op.verify_token(token, resource, body.get("now"), body.get("action"))
        return 200, {"status": status.value}

    def query(self, m, q, body):
        (sql,) = _require(body, "query")
        result = self.op.gateway_query(_subject(body), sql)
        return 200, {"columns": result.columns, "rows": result.rows}

    def request_key(self, m, q, body):
        material = self.op.request_key(_subject(body), m["id"])
        return 200, {"key_id": m["id"], "key": material.hex()}

    # -- contracts, catalog, subjects ----------------------------------------

    def register_contract(self, m, q, body):
        (ref,) = _require(body, "input_port")
        return 201, {"contract": self.op.register_contract(ref)}

    def run_contracts(self, m, q, body):
        return 200, self.op.run_contracts(m["ref"]).to_dict()

    def check_slo(self, m, q, body):
        return 200, [r.to_dict() for r in self.op.check_slo(m["ref"])]

    def search(self, m, q, body):
        return 200, self.op.search_catalog(q.get("q", ""), q.get("label") or None)

    def forget(self, m, q, body):
        return 200, {"stores": self.op.forget_subject(m["id"], body.get("actor", "system"))}

    def state_hash(self, m, q, body):
        return 200, {"seq": self.op.state.seq, "hash": self.op.state_hash()}


def make_handler(api: Api) -> type[BaseHTTPRequestHandler]:
    class RequestHandler(BaseHTTPRequestHandler):
        server_version = "meshplane"
        protocol_version = "HTTP/1.1"

        def _send(self, status: int, payload: Any) -> None:
            data = json.dumps(payload, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _handle(self, method: str) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            body: Any = {}
            if raw:
                try:
                    body = json.loads(raw)
                except ValueError:
                    self._send(400, {"error": "bad_request", "message": "body is not valid JSON"})
                    return
            if not isinstance(body, dict):
                self._send(400, {"error": "bad_request", "message": "body must be a JSON object"})
                return
            status, payload = api.dispatch(method, self.path, body)
            self._send(status, payload)

        def do_GET(self):
            self._handle("GET")

        def do_POST(self):
            self._handle("POST")

        def do_DELETE(self):
            self._handle("DELETE")

        def log_message(self, fmt, *args):
            log.info("%s %s", self.address_string(), fmt % args)

    return RequestHandler


def make_server(op: Operator, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    """Bind the service; raises ConfigError without a secret and OSError if the port is busy."""
    if op.secret is None:
        raise ConfigError("MESH_SECRET must be set to serve the API")
    server = ThreadingHTTPServer((host, port), make_handler(Api(op)))
    server.daemon_threads = True
    return server


def serve(op: Operator, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(op, host, port)
    log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


__all__ = ["Api", "make_server", "serve"]
