from __future__ import annotations

import json
from pathlib import Path

import pytest

from meshplane import descriptor
from meshplane.operator import Operator
from meshplane.policy import Subject

DATA = Path(__file__).parent / "data"
SECRET_HEX = "8f" * 8 + "0123456789abcdef" * 3
SECRET = bytes.fromhex(SECRET_HEX)

TRACKING = "marketing/customer-tracking"
DETAILS = "marketing/customer-details"
RECS = "marketing/customer-recommendations"
EVENTS = f"{TRACKING}:events"
DETAILS_SQL = f"{DETAILS}:details-sql"
RECS_SQL = f"{RECS}:recs-sql"
TRACKING_COPY = "data/marketing/customer-recommendations/tracking-copy.csv"

LABELS = {
    "financial": ["insider_access_only"],
    "highly-sensitive": ["encrypt_at_rest"],
    "sensitive-pii": ["encrypt_at_rest", "subject_traceability"],
}

# 10 customers; c03 and c07 appear in both stores, c03 twice in tracking
DETAILS_HEADER = ["customer_id", "name", "email", "segment", "lifetime_value"]
DETAILS_ROWS = [
    [f"c{i:02d}", f"Customer {i}", f"c{i:02d}@example.org", "gold" if i % 3 == 0 else "silver", f"{i * 125.5:.1f}"]
    for i in range(10)
]
EVENTS_HEADER = ["customer_id", "page", "ts"]
EVENTS_ROWS = [
    ["c03", "/home", "2024-01-01T10:00:00"],
    ["c07", "/cart", "2024-01-01T10:01:00"],
    ["c03", "/checkout", "2024-01-01T10:02:00"],
    ["c01", "/home", "2024-01-01T10:03:00"],
    ["c05", "/search", "2024-01-01T10:04:00"],
]


class FakeClock:
    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


def fixture_docs() -> dict[str, dict]:
    return {p.name: json.loads(p.read_text()) for p in sorted(DATA.glob("*.dp.json"))}


def marketing_products():
    docs = fixture_docs()
    return [descriptor.from_dict(docs[f"{n}.dp.json"])
            for n in ("customer-tracking", "customer-details", "customer-recommendations")]


def marketing_subject(product: str = RECS) -> Subject:
    """A data product's service identity acting on behalf of its team."""
    return Subject.of(product, roles=("data-product",), domain="marketing")


GLOBAL_DENY = 'policy "global-default-deny" scope global {\n  deny read on *:* to any;\n}\n'
MKT_OPEN = (DATA / "marketing.mpol").read_text()


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def secret() -> bytes:
    return SECRET


@pytest.fixture
def op(tmp_path, clock) -> Operator:
    return Operator(tmp_path / "mesh", SECRET, clock)


def define_labels(op: Operator) -> None:
    for name, obligations in LABELS.items():
        op.define_label(name, obligations)


@pytest.fixture
def marketing_mesh(op) -> Operator:
    """Operator with labels and the three marketing products registered."""
    define_labels(op)
    for p in marketing_products():
        op.register_product(p)
    return op


@pytest.fixture
def marketing_data(marketing_mesh) -> Operator:
    """The marketing mesh with both source datasets written and the copy materialized."""
    marketing_mesh.write_rows(DETAILS_SQL, DETAILS_HEADER, DETAILS_ROWS)
    marketing_mesh.write_rows(EVENTS, EVENTS_HEADER, EVENTS_ROWS)
    marketing_mesh.write_rows(RECS_SQL, ["customer_id", "product_id", "score"],
                    [["c03", "p1", "0.9"], ["c04", "p2", "0.4"], ["c07", "p1", "0.7"]])
    marketing_mesh.materialize(f"{RECS}:tracking-in")
    return marketing_mesh


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    # expose each phase's report so fixtures can tell whether the test body passed
    rep = yield
    setattr(item, f"rep_{rep.when}", rep)
    return rep


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
