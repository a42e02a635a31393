import pytest

from ecf.corpus import find_entry, run_entry_scenario


@pytest.fixture(scope="session")
def attack_entry():
    return find_entry("dao_attack")


@pytest.fixture(scope="session")
def fixed_entry():
    return find_entry("dao_fixed_attack")


@pytest.fixture(scope="session")
def attack_run(attack_entry):
    return run_entry_scenario(attack_entry.scenario)


@pytest.fixture(scope="session")
def fixed_run(fixed_entry):
    return run_entry_scenario(fixed_entry.scenario)


@pytest.fixture(scope="session")
def attack_trace(attack_run):
    return attack_run.traces[-1]


@pytest.fixture(scope="session")
def fixed_trace(fixed_run):
    return fixed_run.traces[-1]


@pytest.fixture(scope="session")
def attack_ctx(attack_entry):
    return attack_entry.scenario.context


@pytest.fixture(scope="session")
def fixed_ctx(fixed_entry):
    return fixed_entry.scenario.context
