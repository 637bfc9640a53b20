"""Random operator sessions: a mix of every mutating call, failures included."""

from __future__ import annotations

import random

from meshplane.errors import MeshError
from meshplane.policy import serialize_policy

import generators as gen
from conftest import (
    DETAILS_HEADER,
    DETAILS_ROWS,
    DETAILS_SQL,
    EVENTS,
    EVENTS_HEADER,
    EVENTS_ROWS,
    LABELS,
    RECS,
    marketing_products,
    marketing_subject,
)

POLICY_PRODUCTS = tuple(p.id for p in marketing_products())
POLICY_PORTS = ("events", "details-sql", "recs-sql", "*")


def _next_product(op, rng):
    # prefer products whose producers are already present so registrations mostly succeed
    missing = [p for p in marketing_products() if p.id not in op.state.mesh.products]
    return missing[0] if missing and rng.random() < 0.8 else rng.choice(marketing_products())


def _ops(op, rng):
    ports = [EVENTS, DETAILS_SQL, f"{RECS}:recs-sql"]
    return [
        lambda: op.define_label(rng.choice(list(LABELS) + ["internal"]), rng.choice(list(LABELS.values()))),
        lambda: op.register_product(_next_product(op, rng)),
        lambda: op.tag_port(rng.choice(ports), rng.sample(["public", *LABELS], rng.randint(0, 2))),
        lambda: op.apply_policy(serialize_policy(
            gen.policy(rng, POLICY_PRODUCTS, POLICY_PORTS, max_rules=3, name=f"p{rng.randint(0, 3)}"))),
        lambda: op.remove_policy(f"p{rng.randint(0, 3)}"),
        lambda: op.request_override(rng.choice(ports), rng.sample(list(LABELS), rng.randint(0, 2)), "review"),
        lambda: op.review_override(rng.choice([o.id for o in op.list_overrides("pending")] or ["none"]),
                                   rng.choice(["approve", "reject"]), "steward"),
        lambda: op.decide(gen.subject(rng), "read", rng.choice(ports)),
        lambda: op.issue_token(rng.choice([marketing_subject(), gen.subject(rng)]), rng.choice(ports)),
        lambda: op.write_rows(DETAILS_SQL, DETAILS_HEADER, DETAILS_ROWS),
        lambda: op.write_rows(EVENTS, EVENTS_HEADER, EVENTS_ROWS),
        lambda: op.register_contract(f"{RECS}:tracking-in"),
        lambda: op.run_contracts(EVENTS),
        lambda: op.forget_subject(rng.choice(["c03", "c07", "c99"])),
        lambda: op.decommission_product(rng.choice(POLICY_PRODUCTS), force=rng.random() < 0.5),
    ]


def random_session(op, rng: random.Random, n: int, trace: list | None = None) -> int:
    """Run ``n`` random operations; return how many raised a mesh error."""
    failures = 0
    for i in range(n):
        if i < len(LABELS):
            # labels and products first, otherwise nearly every later call is refused
            name = sorted(LABELS)[i]
            op.define_label(name, LABELS[name])
            continue
        if i < len(LABELS) + 3:
            op.register_product(marketing_products()[i - len(LABELS)])
            continue
        ops = _ops(op, rng)
        # decommissioning is kept rare so the rest of the mix has something to act on
        weights = [1] * (len(ops) - 1) + [0.2]
        try:
            rng.choices(ops, weights)[0]()
        except (MeshError, ValueError) as exc:
            failures += 1
            if trace is not None:
                trace.append(repr(exc))
        if hasattr(op.clock, "advance"):
            op.clock.advance(rng.randint(1, 90))
    return failures
