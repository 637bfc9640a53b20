"""``meshctl``: command-line surface of the operator.

Commands act on the state directory in ``MESH_HOME`` through the same
operator calls the HTTP API uses. Exit codes: 0 success or allow, 1 error,
2 policy deny, 3 contract or obligation violation.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path
from typing import Any

import click

from .. import descriptor as desc
from ..errors import (
    CorruptLogError,
    MeshError,
    ObligationViolation,
    PolicyDenied,
    PolicySyntaxError,
    UntaggedPortError,
    ValidationError,
)
from ..policy import Subject, compile_native, serialize_policy
from .log import EventLog, replay
from .service import Operator

EXIT_OK, EXIT_ERROR, EXIT_DENY, EXIT_VIOLATION = 0, 1, 2, 3


def _emit(payload: Any) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handled(fn):
    """Map control-plane exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UntaggedPortError as exc:
            _emit({"effect": "deny", "reason": "untagged", "port": exc.port})
            _fail(str(exc), EXIT_DENY)
        except PolicyDenied as exc:
            body: dict[str, Any] = {"effect": "deny", "message": str(exc)}
            if exc.columns:
                body["denied_columns"] = exc.columns
            _emit(body)
            _fail(str(exc), EXIT_DENY)
        except ObligationViolation as exc:
            _fail(str(exc), EXIT_VIOLATION)
        except ValidationError as exc:
            for e in exc.errors:
                click.echo(f"  - {e}", err=True)
            _fail("validation failed", EXIT_ERROR)
        except (MeshError, ValueError, OSError) as exc:
            _fail(str(exc), EXIT_ERROR)

    return wrapper


def _operator(ctx: click.Context) -> Operator:
    if ctx.obj is None:
        ctx.obj = Operator.from_env(ctx.find_root().params.get("home"))
    return ctx.obj


def subject_options(fn):
    fn = click.option("--attr", "attrs", multiple=True, help="Subject attribute, KEY or KEY=false.")(fn)
    fn = click.option("--domain", default=None, help="Subject's home domain.")(fn)
    fn = click.option("--role", "roles", multiple=True, help="Subject role (repeatable).")(fn)
    fn = click.option("--user", required=True, help="Subject user id.")(fn)
    return fn


def _subject(user: str, roles, domain, attrs) -> Subject:
    parsed = {}
    for a in attrs:
        key, _, value = a.partition("=")
        parsed[key] = value.lower() not in ("false", "0", "no")
    return Subject.of(user, roles, domain, parsed)


@click.group()
@click.option("--home", type=click.Path(file_okay=False), default=None,
              help="State directory (defaults to MESH_HOME or .mesh).")
@click.pass_context
def main(ctx: click.Context, home: str | None) -> None:
    """Control plane for a governed data mesh."""
    ctx.obj = None


# -- products -----------------------------------------------------------------


@main.group()
def product() -> None:
    """Register, inspect and decommission data products."""


@product.command("register")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@handled
def product_register(ctx, files):
    op = _operator(ctx)
    ids = [op.register_product(Path(f).read_text(encoding="utf-8")) for f in files]
    _emit({"registered": ids})


@product.command("list")
@click.pass_context
@handled
def product_list(ctx):
    for p in _operator(ctx).list_products():
        click.echo(f"{p.id}\t{p.archetype.value}\t{len(p.output_ports)} out / {len(p.input_ports)} in")


@product.command("show")
@click.argument("product_id")
@click.pass_context
@handled
def product_show(ctx, product_id):
    click.echo(desc.serialize_descriptor(_operator(ctx).get_product(product_id)), nl=False)


@product.command("decommission")
@click.argument("product_id")
@click.option("--force", is_flag=True, help="Remove even when other products consume it.")
@click.pass_context
@handled
def product_decommission(ctx, product_id, force):
    _emit(_operator(ctx).decommission_product(product_id, force).to_dict())


@product.command("validate")
@click.pass_context
@handled
def product_validate(ctx):
    report = _operator(ctx).validate_mesh()
    _emit(report)
    if report:
        sys.exit(EXIT_ERROR)


@main.command()
@click.argument("product_id")
@click.option("--direction", type=click.Choice(["upstream", "downstream"]), default="downstream")
@click.pass_context
@handled
def lineage(ctx, product_id, direction):
    """Print the transitive upstream or downstream products."""
    for pid in sorted(_operator(ctx).lineage(product_id, direction)):
        click.echo(pid)


# -- labels and classification ----------------------------------------------------


@main.group()
def label() -> None:
    """Define global sensitivity labels."""


@label.command("define")
@click.argument("name")
@click.option("--obligation", "obligations", multiple=True,
              type=click.Choice(["encrypt_at_rest", "subject_traceability", "insider_access_only"]))
@click.option("--description", default="")
@click.pass_context
@handled
def label_define(ctx, name, obligations, description):
    _emit(_operator(ctx).define_label(name, obligations, description).to_dict())


@label.command("list")
@click.pass_context
@handled
def label_list(ctx):
    _emit([lb.to_dict() for lb in _operator(ctx).list_labels()])


@main.group()
def classify() -> None:
    """Tag ports, request overrides and check obligations."""


@classify.command("tag")
@click.argument("port")
@click.argument("labels", nargs=-1, required=True)
@click.pass_context
@handled
def classify_tag(ctx, port, labels):
    _emit(_operator(ctx).tag_port(port, labels).to_dict())


@classify.command("show")
@click.argument("port")
@click.pass_context
@handled
def classify_show(ctx, port):
    _emit(_operator(ctx).classification_of(port).to_dict())


@classify.command("check")
@click.argument("port")
@click.pass_context
@handled
def classify_check(ctx, port):
    report = _operator(ctx).check_obligations(port)
    click.echo(report.table())
    if not report.compliant:
        sys.exit(EXIT_VIOLATION)


@classify.command("override")
@click.argument("port")
@click.argument("labels", nargs=-1)
@click.option("--justification", required=True)
@click.pass_context
@handled
def classify_override(ctx, port, labels, justification):
    _emit(_operator(ctx).request_override(port, labels, justification).to_dict())


@classify.command("overrides")
@click.option("--status", default=None)
@click.pass_context
@handled
def classify_overrides(ctx, status):
    _emit([o.to_dict() for o in _operator(ctx).list_overrides(status)])


@classify.command("review")
@click.argument("request_id")
@click.option("--approve/--reject", required=True)
@click.option("--reviewer", required=True)
@click.pass_context
@handled
def classify_review(ctx, request_id, approve, reviewer):
    verdict = "approve" if approve else "reject"
    _emit(_operator(ctx).review_override(request_id, verdict, reviewer).to_dict())


# -- policies -------------------------------------------------------------------


@main.group()
def policy() -> None:
    """Apply, inspect and explain access policies."""


@policy.command("apply")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@handled
def policy_apply(ctx, files):
    op = _operator(ctx)
    names = []
    for f in files:
        try:
            names += [p.name for p in op.apply_policy(Path(f).read_text(encoding="utf-8"))]
        except PolicySyntaxError as exc:
            _fail(f"{f}:{exc.line}:{exc.column}: {exc}", EXIT_ERROR)
    _emit({"applied": names})


@policy.command("list")
@click.option("--source", is_flag=True, help="Print the full policy text.")
@click.pass_context
@handled
def policy_list(ctx, source):
    for p in _operator(ctx).list_policies():
        if source:
            click.echo(serialize_policy(p))
        else:
            click.echo(f"{p.name}\t{p.scope}\t{len(p.rules)} rules")


@policy.command("remove")
@click.argument("name")
@click.pass_context
@handled
def policy_remove(ctx, name):
    _operator(ctx).remove_policy(name)
    _emit({"removed": name})


@policy.command("explain")
@click.argument("action", type=click.Choice(["read", "write", "manage"]))
@click.argument("resource")
@subject_options
@click.pass_context
@handled
def policy_explain(ctx, action, resource, user, roles, domain, attrs):
    decision = _operator(ctx).decide(_subject(user, roles, domain, attrs), action, resource, detailed=True)
    _emit(decision.to_dict())
    if not decision.allowed:
        sys.exit(EXIT_DENY)


@policy.command("compile")
@click.argument("name")
@click.option("--target", type=click.Choice(["blob_store"]), default="blob_store")
@click.pass_context
@handled
def policy_compile(ctx, name, target):
    op = _operator(ctx)
    match = [p for p in op.list_policies() if p.name == name]
    if not match:
        _fail(f"no policy {name!r}", EXIT_ERROR)
    _emit(compile_native(match[0], op.state.mesh, target))


# -- enforcement ----------------------------------------------------------------


@main.group()
def access() -> None:
    """Request access through one of the enforcement mechanisms."""


@access.command("request")
@click.argument("resource")
@click.option("--action", type=click.Choice(["read", "write", "manage"]), default="read")
@click.option("--mode", type=click.Choice(["gateway", "token", "key"]), default="token")
@click.option("--ttl", "ttl_seconds", type=int, default=300)
@subject_options
@click.pass_context
@handled
def access_request(ctx, resource, action, mode, ttl_seconds, user, roles, domain, attrs):
    _emit(_operator(ctx).submit_access_request(_subject(user, roles, domain, attrs), resource, action, mode,
                                               ttl_seconds))


@main.command()
@click.argument("sql")
@subject_options
@click.pass_context
@handled
def query(ctx, sql, user, roles, domain, attrs):
    """Run a read-only query through the gateway."""
    result = _operator(ctx).gateway_query(_subject(user, roles, domain, attrs), sql)
    click.echo(",".join(result.columns))
    for row in result.rows:
        click.echo(",".join(row))


@main.group()
def token() -> None:
    """Issue and verify direct-storage access tokens."""


@token.command("issue")
@click.argument("resource")
@click.option("--action", type=click.Choice(["read", "write"]), default="read")
@click.option("--ttl", "ttl_seconds", type=int, default=300)
@subject_options
@click.pass_context
@handled
def token_issue(ctx, resource, action, ttl_seconds, user, roles, domain, attrs):
    _emit(_operator(ctx).issue_token(_subject(user, roles, domain, attrs), resource, action, ttl_seconds))


@token.command("verify")
@click.argument("token_text", metavar="TOKEN")
@click.argument("resource")
@click.option("--now", type=float, default=None, help="Evaluate expiry at this unix time.")
@click.pass_context
@handled
def token_verify(ctx, token_text, resource, now):
    status = _operator(ctx).verify_token(token_text, resource, now)
    _emit({"status": status.value})
    if status.value != "valid":
        sys.exit(EXIT_DENY)


@main.group()
def key() -> None:
    """Hand out data keys for encrypted ports."""


@key.command("request")
@click.argument("key_id")
@subject_options
@click.pass_context
@handled
def key_request(ctx, key_id, user, roles, domain, attrs):
    material = _operator(ctx).request_key(_subject(user, roles, domain, attrs), key_id)
    _emit({"key_id": key_id, "key": material.hex()})


@main.group()
def data() -> None:
    """Write port datasets and materialize by_copy inputs."""


@data.command("write")
@click.argument("port")
@click.argument("csv_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@handled
def data_write(ctx, port, csv_file):
    """Store a CSV file as the dataset of an output port (encrypted if the port requires it)."""
    _operator(ctx).write_dataset(port, Path(csv_file).read_bytes())
    _emit({"written": port})


@data.command("materialize")
@click.argument("input_port")
@click.pass_context
@handled
def data_materialize(ctx, input_port):
    _emit({"input_port": input_port, "rows": _operator(ctx).materialize(input_port)})


# -- contracts, catalog, subjects ---------------------------------------------------


@main.group()
def contracts() -> None:
    """Register and run consumer-driven contract tests."""


@contracts.command("register")
@click.argument("input_port")
@click.pass_context
@handled
def contracts_register(ctx, input_port):
    _emit({"contract": _operator(ctx).register_contract(input_port)})


@contracts.command("run")
@click.argument("port")
@click.pass_context
@handled
def contracts_run(ctx, port):
    report = _operator(ctx).run_contracts(port)
    _emit(report.to_dict())
    if report.alert_raised:
        sys.exit(EXIT_VIOLATION)


@contracts.command("slo")
@click.argument("port")
@click.pass_context
@handled
def contracts_slo(ctx, port):
    results = _operator(ctx).check_slo(port)
    _emit([r.to_dict() for r in results])
    if not all(r.passed for r in results):
        sys.exit(EXIT_VIOLATION)


@main.group()
def catalog() -> None:
    """Search the product catalog."""


@catalog.command("search")
@click.argument("text", default="")
@click.option("--label", default=None, help="Only ports whose effective labels contain this.")
@click.pass_context
@handled
def catalog_search(ctx, text, label):
    _emit(_operator(ctx).search_catalog(text, label))


@main.command()
@click.argument("subject_id")
@click.pass_context
@handled
def forget(ctx, subject_id):
    """Delete every row referencing a data subject."""
    _emit({"stores": _operator(ctx).forget_subject(subject_id)})


@main.group()
def state() -> None:
    """Inspect the event-sourced state."""


@state.command("hash")
@click.pass_context
@handled
def state_hash(ctx):
    op = _operator(ctx)
    click.echo(f"{op.state.seq}\t{op.state_hash()}")


@state.command("replay")
@click.pass_context
def state_replay(ctx):
    """Rebuild state from the log and report its hash."""
    home = ctx.find_root().params.get("home") or os.environ.get("MESH_HOME") or ".mesh"
    try:
        rebuilt = replay(EventLog(Path(home) / "events.jsonl"))
    except CorruptLogError as exc:
        _fail(str(exc), EXIT_ERROR)
    click.echo(f"{rebuilt.seq}\t{rebuilt.hash()}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.pass_context
@handled
def serve(ctx, host, port):
    """Run the HTTP/JSON API."""
    from .http import serve as run

    run(_operator(ctx), host, port)


if __name__ == "__main__":
    main()
