import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from dynlgp.harness import synth
from dynlgp.harness.scenario import data_path
from dynlgp.pddl import ground_actions, parse_domain

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DOMAIN_TEXT = data_path("set_table.pddl").read_text()


@pytest.fixture(scope="session")
def domain():
    return parse_domain(DOMAIN_TEXT)


@pytest.fixture(scope="session")
def grounded(domain):
    return ground_actions(domain)


@pytest.fixture(scope="session")
def actions_by_label(grounded):
    return {a.label: a for a in grounded}


@pytest.fixture(scope="session")
def workspace():
    return synth.workspace()


@pytest.fixture
def tmp_out(tmp_path) -> Path:
    return tmp_path / "out"
