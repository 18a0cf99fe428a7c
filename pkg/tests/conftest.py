from __future__ import annotations

import pytest

from flaudit import evaluate_all, run_federation
from helpers import make_inputs, make_spec


@pytest.fixture(scope="session")
def honest_run():
    """Full-size honest run: 5 parties, 10 rounds, FedAvg, no early stop."""
    spec = make_spec()
    party_data, holdout = make_inputs(spec)
    return run_federation(spec, party_data, holdout)


@pytest.fixture(scope="session")
def honest_report(honest_run):
    return evaluate_all(honest_run.ledger, honest_run.artifacts)


@pytest.fixture(scope="session")
def krum_run():
    """Honest Krum run sized so that m >= 2f+3 holds with every party present."""
    spec = make_spec(n=6, rounds=3, quorum=5, algorithm="krum", byzantine_f=1)
    party_data, holdout = make_inputs(spec, per_class=15)
    return run_federation(spec, party_data, holdout)
