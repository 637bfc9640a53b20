import base64
import json
import random

import pytest

from meshplane import descriptor
from meshplane.errors import ConfigError, CorruptLogError, MeshError, PolicyDenied, UntaggedPortError
from meshplane.operator import Operator
from meshplane.operator.log import EventLog, replay
from meshplane.policy import Subject

from conftest import (
    DETAILS,
    DETAILS_SQL,
    EVENTS,
    GLOBAL_DENY,
    MKT_OPEN,
    RECS,
    RECS_SQL,
    SECRET,
    TRACKING,
    FakeClock,
    define_labels,
    marketing_products,
    marketing_subject,
)
from sessions import random_session


def test_empty_log_replays_to_empty_state(tmp_path):
    state = replay(EventLog(tmp_path / "events.jsonl"))
    assert state.seq == 0 and not state.mesh.products
    assert Operator(tmp_path / "m", SECRET).state_hash() == state.hash()


def test_replay_is_deterministic(tmp_path):
    op = Operator(tmp_path / "a", SECRET, FakeClock())
    random_session(op, random.Random(1), 60)
    events = op.events()
    assert len(events) > 20
    assert replay(events).hash() == op.state_hash()
    assert Operator(tmp_path / "a", SECRET).state_hash() == op.state_hash()
    assert replay(events).hash() == replay(list(events)).hash()


def test_reopen_then_continue(tmp_path, clock):
    op = Operator(tmp_path / "m", SECRET, clock)
    define_labels(op)
    op.register_product(marketing_products()[0])
    again = Operator(tmp_path / "m", SECRET, clock)
    again.register_product(marketing_products()[1])
    assert [e.seq for e in again.events()] == list(range(1, 6))


def test_sequence_gap_names_the_event(marketing_mesh):
    path = marketing_mesh.log.path
    lines = path.read_text().splitlines(keepends=True)
    del lines[2]
    path.write_text("".join(lines))
    with pytest.raises(CorruptLogError) as err:
        EventLog(path).read()
    assert err.value.sequence == 4


def test_truncated_final_event(marketing_mesh):
    path = marketing_mesh.log.path
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(CorruptLogError):
        Operator(path.parent, SECRET)


def test_unappliable_event_reports_seq(tmp_path):
    path = tmp_path / "events.jsonl"
    ev = {"seq": 1, "ts": 0, "actor": "x", "kind": "port_tagged", "payload": {"port": "a/b:c", "labels": []}}
    path.write_text(json.dumps(ev) + "\n")
    with pytest.raises(CorruptLogError) as err:
        replay(EventLog(path))
    assert err.value.sequence == 1


def test_rejected_operation_leaves_log_untouched(marketing_mesh):
    before = (marketing_mesh.state_hash(), len(marketing_mesh.events()))
    with pytest.raises(MeshError):
        marketing_mesh.register_product(marketing_products()[0])
    with pytest.raises(MeshError):
        marketing_mesh.tag_port(EVENTS, ["no-such-label"])
    assert (marketing_mesh.state_hash(), len(marketing_mesh.events())) == before


def test_missing_secret_refuses_token_and_key_work(tmp_path):
    op = Operator(tmp_path / "m", None)
    define_labels(op)
    for p in marketing_products():
        op.register_product(p)
    with pytest.raises(ConfigError):
        op.issue_token(marketing_subject(), EVENTS)
    with pytest.raises(ConfigError):
        op.write_rows(EVENTS, ["customer_id"], [["c1"]])


# -- catalog --------------------------------------------------------------------


def test_catalog_search(marketing_mesh):
    hits = marketing_mesh.search_catalog("customer")
    assert [h["id"] for h in hits] == [DETAILS, RECS, TRACKING]
    pii = marketing_mesh.search_catalog(label="sensitive-pii")
    ports = {p["port"] for h in pii for p in h["ports"]}
    effective = marketing_mesh.state.classification.effective()
    assert ports == {ref for ref, labels in effective.items() if "sensitive-pii" in labels}
    assert RECS_SQL in ports
    assert marketing_mesh.search_catalog("nothing-like-this") == []
    (recs,) = marketing_mesh.search_catalog("recommendations")
    assert recs["ports"][0]["slos"] == [{"kind": "freshness_seconds", "threshold": 86400}]


# -- access requests ------------------------------------------------------------


def test_default_deny_without_policies(marketing_data):
    d = marketing_data.decide(marketing_subject(), "read", EVENTS)
    assert not d.allowed and d.matched_rule is None
    with pytest.raises(PolicyDenied):
        marketing_data.submit_access_request(marketing_subject(), EVENTS, mode="token")


def test_access_request_modes(marketing_data):
    marketing_data.apply_policy(GLOBAL_DENY + MKT_OPEN)
    sub = marketing_subject()
    grant = marketing_data.submit_access_request(sub, EVENTS, mode="token")
    assert marketing_data.verify_token(grant["token"], EVENTS).value == "valid"
    assert grant["storage"]["address"].endswith("events.csv")
    assert marketing_data.storage_read(grant["token"], EVENTS)
    grant = marketing_data.submit_access_request(sub, DETAILS_SQL, mode="gateway")
    assert grant["session"]["sql_port"] == DETAILS_SQL
    grant = marketing_data.submit_access_request(sub, DETAILS_SQL, mode="key")
    assert len(marketing_data.request_key(sub, grant["key_id"])) == 32
    with pytest.raises(MeshError):
        marketing_data.submit_access_request(sub, EVENTS, mode="gateway")
    with pytest.raises(ValueError):
        marketing_data.submit_access_request(sub, EVENTS, mode="carrier-pigeon")
    outsider = Subject.of("eve", domain="sales")
    with pytest.raises(PolicyDenied):
        marketing_data.submit_access_request(outsider, EVENTS, mode="token")


def test_expired_token_rejected_by_storage(marketing_data, clock):
    marketing_data.apply_policy(MKT_OPEN)
    grant = marketing_data.issue_token(marketing_subject(), EVENTS, ttl_seconds=10)
    clock.advance(10)
    with pytest.raises(PolicyDenied):
        marketing_data.storage_read(grant["token"], EVENTS)


def test_untagged_refused_and_audited(marketing_mesh):
    marketing_mesh.apply_policy('policy "open" scope global { allow read on *:* to any; }')
    marketing_mesh.register_product(_bare_product())
    with pytest.raises(UntaggedPortError):
        marketing_mesh.issue_token(marketing_subject(), "marketing/bare:out")
    last = marketing_mesh.events()[-1]
    assert last.kind == "access_decided" and last.payload["reason"] == "untagged"


def _bare_product():
    return descriptor.from_dict({
        "name": "bare", "domain": "marketing", "archetype": "source_aligned", "input_ports": [],
        "output_ports": [{"id": "out", "address": "data/marketing/bare/out.csv", "interface": "sql",
                          "schema": [{"name": "id", "type": "string"}]}],
    })


# -- audit ----------------------------------------------------------------------


def test_every_decision_token_key_and_review_is_logged_once(marketing_data):
    marketing_data.apply_policy(GLOBAL_DENY + MKT_OPEN)
    sub = marketing_subject()
    start = len(marketing_data.events())
    marketing_data.decide(sub, "read", EVENTS)
    marketing_data.issue_token(sub, EVENTS)
    with pytest.raises(PolicyDenied):
        marketing_data.issue_token(Subject.of("eve"), EVENTS)
    key_id = marketing_data.state.keys.active_for(DETAILS_SQL).key_id
    marketing_data.request_key(sub, key_id)
    req = marketing_data.request_override(RECS_SQL, ["public"], "aggregated scores")
    marketing_data.review_override(req.id, "approve", "steward")
    kinds = [e.kind for e in marketing_data.events()[start:]]
    assert kinds == [
        "access_decided",
        "access_decided", "token_issued",
        "access_decided",
        "access_decided", "key_handed_out",
        "override_requested", "override_reviewed",
    ]
    reviewed = marketing_data.events()[-1]
    assert reviewed.actor == "steward" and reviewed.payload["verdict"] == "approve"


def test_key_material_never_logged(marketing_data):
    marketing_data.apply_policy(MKT_OPEN)
    sub = marketing_subject()
    raw = marketing_data.log.path.read_text()
    for rec in marketing_data.state.keys.records.values():
        material = marketing_data.request_key(sub, rec.key_id)
        raw = marketing_data.log.path.read_text()
        assert material.hex() not in raw
        assert material not in marketing_data.log.path.read_bytes()
        assert base64.b64encode(material).decode() not in raw
        assert base64.urlsafe_b64encode(material).decode().rstrip("=") not in raw
    assert SECRET.hex() not in raw


def test_forget_is_audited_without_the_subject_id(marketing_data):
    marketing_data.forget_subject("c03")
    last = marketing_data.events()[-1]
    assert last.kind == "subject_forgotten"
    assert "c03" not in json.dumps(last.payload)


def test_session_mix_is_mostly_effective(tmp_path):
    op = Operator(tmp_path / "m", SECRET, FakeClock())
    failures = random_session(op, random.Random(2), 200)
    kinds = {e.kind for e in op.events()}
    assert failures < 120
    assert {"product_registered", "policy_applied", "port_tagged", "access_decided"} <= kinds
