import random
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from meshplane import contracts, descriptor
from meshplane.errors import MeshError, NotFoundError
from meshplane.model import Expectation, ExpectationKind, SloKind

from conftest import DETAILS_SQL, EVENTS, EVENTS_HEADER, RECS, RECS_SQL, TRACKING, fixture_docs

TRACKING_IN = f"{RECS}:tracking-in"
DETAILS_IN = f"{RECS}:details-in"


def hundred_rows(nulls: int):
    return [["" if i < nulls else f"c{i:03d}", "/p", "t"] for i in range(100)]


def second_consumer(min_rows: int):
    doc = fixture_docs()["customer-recommendations.dp.json"]
    doc["name"] = "churn-model"
    doc["input_ports"] = [{
        "id": "events-in", "target": {"port": EVENTS}, "consumption_style": "by_reference",
        "expectations": [{"kind": "min_row_count", "n": min_rows}],
    }]
    doc["output_ports"][0]["address"] = "data/marketing/churn-model/scores.csv"
    return descriptor.from_dict(doc)


def test_register_rejects_external_and_empty(marketing_mesh):
    with pytest.raises(MeshError):
        marketing_mesh.register_contract(f"{TRACKING}:kafka-clicks")
    with pytest.raises(NotFoundError):
        marketing_mesh.register_contract(f"{RECS}:nope")
    marketing_mesh.register_contract(DETAILS_IN)
    assert [c.owner for c in marketing_mesh.state.contracts.for_port(DETAILS_SQL)] == [DETAILS_IN]


def test_register_rejects_input_without_expectations(marketing_mesh):
    p = second_consumer(1)
    ip = p.input_ports[0]
    marketing_mesh.register_product(replace(p, input_ports=(replace(ip, expectations=()),)))
    with pytest.raises(MeshError):
        marketing_mesh.register_contract(f"{p.id}:events-in")


def test_null_fraction_violation_measured(marketing_mesh):
    marketing_mesh.write_rows(EVENTS, EVENTS_HEADER, hundred_rows(2))
    marketing_mesh.register_contract(TRACKING_IN)
    report = marketing_mesh.run_contracts(EVENTS)
    assert report.alert_raised
    (bad,) = [r for r in report.results if not r.passed]
    assert bad.owner == TRACKING_IN
    assert bad.expectation == "non_null_fraction(customer_id, 0.99)"
    assert bad.measured == pytest.approx(0.98, abs=1e-9)
    assert [e.kind for e in marketing_mesh.events()[-2:]] == ["contract_run", "contract_alert"]


def test_exact_bound_passes(marketing_mesh):
    marketing_mesh.write_rows(EVENTS, EVENTS_HEADER, hundred_rows(1))
    marketing_mesh.register_contract(TRACKING_IN)
    report = marketing_mesh.run_contracts(EVENTS)
    assert not report.alert_raised
    assert marketing_mesh.events()[-1].kind == "contract_run"


def test_two_consumers_on_one_port(marketing_mesh):
    marketing_mesh.register_product(second_consumer(101))
    marketing_mesh.write_rows(EVENTS, EVENTS_HEADER, hundred_rows(0))
    marketing_mesh.register_contract(TRACKING_IN)
    marketing_mesh.register_contract("marketing/churn-model:events-in")
    report = marketing_mesh.run_contracts(EVENTS)
    owners = {r.owner for r in report.results}
    assert owners == {TRACKING_IN, "marketing/churn-model:events-in"}
    failing = [r for r in report.results if not r.passed]
    assert [r.owner for r in failing] == ["marketing/churn-model:events-in"]
    assert failing[0].measured == 100.0


def test_decommission_drops_contracts(marketing_mesh):
    marketing_mesh.register_contract(TRACKING_IN)
    marketing_mesh.decommission_product(RECS)
    assert marketing_mesh.state.contracts.contracts == {}


def test_missing_store_reported(marketing_mesh):
    marketing_mesh.register_contract(TRACKING_IN)
    with pytest.raises(NotFoundError):
        marketing_mesh.run_contracts(EVENTS)


EXPECTATIONS = st.one_of(
    st.builds(Expectation, st.just(ExpectationKind.COLUMN_PRESENT), st.sampled_from(["a", "b", "z"])),
    st.builds(Expectation, st.just(ExpectationKind.NON_NULL_FRACTION), st.sampled_from(["a", "b", "z"]),
              st.floats(0, 1)),
    st.builds(Expectation, st.just(ExpectationKind.MIN_ROW_COUNT), n=st.integers(0, 30)),
    st.builds(Expectation, st.just(ExpectationKind.MAX_STALENESS_SECONDS), seconds=st.floats(1, 1000)),
)
CELL = st.sampled_from(["", "x", "1"])


@given(
    st.lists(EXPECTATIONS, max_size=5),
    st.lists(st.lists(CELL, min_size=2, max_size=2), max_size=30),
    st.one_of(st.none(), st.floats(0, 2000)),
)
def test_alert_iff_some_expectation_fails_and_evaluation_is_pure(exps, rows, age):
    header = ["a", "b"]
    now = 10_000.0
    last = None if age is None else now - age
    c = contracts.Contract("x:in", "x:in", "y:out", tuple(exps))
    snapshot = [list(r) for r in rows]
    r1 = contracts.evaluate_contracts("y:out", [c], header, rows, last, now)
    r2 = contracts.evaluate_contracts("y:out", [c], header, rows, last, now)
    assert r1.to_dict() == r2.to_dict()
    assert rows == snapshot
    assert len(r1.results) == len(exps)
    assert r1.alert_raised == any(not r.passed for r in r1.results)
    for e, r in zip(exps, r1.results):
        if e.kind is ExpectationKind.NON_NULL_FRACTION and e.column in header:
            idx = header.index(e.column)
            expected = 1.0 if not rows else sum(1 for x in rows if x[idx] != "") / len(rows)
            assert r.measured == pytest.approx(expected)
            assert r.passed == (expected >= e.min_fraction - 1e-9)
        if e.kind is ExpectationKind.MIN_ROW_COUNT:
            assert r.passed == (len(rows) >= e.n)
        if e.column == "z":
            assert not r.passed


# -- SLOs -----------------------------------------------------------------------


def test_freshness_slo(marketing_mesh, clock):
    (res,) = marketing_mesh.check_slo(RECS_SQL, {"last_updated": clock() - 7200})
    assert res.kind == "freshness_seconds" and res.passed and res.observed == 7200
    (res,) = marketing_mesh.check_slo(RECS_SQL, {"last_updated": clock() - 90000})
    assert not res.passed


def test_completeness_slo(marketing_mesh, clock):
    results = {r.kind: r for r in marketing_mesh.check_slo(EVENTS, {"last_updated": clock(), "completeness_pct": 97.0})}
    assert results["freshness_seconds"].passed
    assert not results["completeness_pct"].passed
    results = {r.kind: r for r in marketing_mesh.check_slo(EVENTS, {"last_updated": clock(), "completeness_pct": 99.0})}
    assert results["completeness_pct"].passed


def test_missing_observation_fails(marketing_mesh):
    (res,) = marketing_mesh.check_slo(DETAILS_SQL, {})
    assert res.kind == "availability_pct" and not res.passed and res.observed is None


def test_slo_on_input_port_rejected(marketing_mesh):
    with pytest.raises(MeshError):
        marketing_mesh.check_slo(TRACKING_IN, {})


def test_observed_completeness_from_store(marketing_mesh):
    marketing_mesh.write_rows(EVENTS, EVENTS_HEADER, hundred_rows(3))
    obs = marketing_mesh.check_slo(EVENTS)
    comp = {r.kind: r for r in obs}["completeness_pct"]
    assert comp.observed == pytest.approx(97.0) and not comp.passed


def test_slo_and_contract_agree_on_matching_thresholds():
    # completeness >= p implies a non_null_fraction(c, p/100) contract on every column holds
    rng = random.Random(8)
    for _ in range(300):
        header = ["a", "b", "c"]
        rows = [[rng.choice(["", "v"]) if rng.random() < 0.3 else "v" for _ in header]
                for _ in range(rng.randint(1, 40))]
        pct = contracts.completeness_pct(header, rows)
        threshold = rng.choice([50.0, 90.0, 99.0, pct])
        slo_ok = pct >= threshold
        c = contracts.Contract("x:in", "x:in", "y:out", tuple(
            Expectation(ExpectationKind.NON_NULL_FRACTION, col, threshold / 100) for col in header))
        report = contracts.evaluate_contracts("y:out", [c], header, rows, None, 0.0)
        if slo_ok:
            assert not report.alert_raised
        else:
            assert report.alert_raised


def test_slo_kinds_cover_declared():
    assert {k.value for k in SloKind} == {"freshness_seconds", "completeness_pct", "availability_pct"}
