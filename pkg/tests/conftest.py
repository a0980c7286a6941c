import os

import pytest

from gridcover.campaign import default_jobs, run_campaign
from gridcover.catalog import default_catalog, make_spec
from gridcover.search import find_witness
from gridcover.sim import FaultyPerceptionACC, OracleACC, SimConfig

# committed seed for the faulty-agent runs and the regression fixture
CAMPAIGN_SEED = 42
JOBS = int(os.environ.get("GRIDCOVER_TEST_JOBS", default_jobs()))


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def witnesses(catalog):
    """Witness per default-catalog spec, generated once per session."""
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(JOBS) as pool:
        traces = list(pool.map(find_witness, list(catalog)))
    return {s.id: t for s, t in zip(catalog, traces)}


@pytest.fixture(scope="session")
def s22_64_witness():
    return find_witness(make_spec(2, 2, 6, 4))


@pytest.fixture(scope="session")
def oracle_campaign(catalog, witnesses):
    return run_campaign(catalog, agent=OracleACC(), sim_cfg=SimConfig(rng_seed=CAMPAIGN_SEED),
                        jobs=JOBS, witnesses=witnesses)


@pytest.fixture(scope="session")
def faulty_campaign(catalog, witnesses):
    return run_campaign(catalog, agent=FaultyPerceptionACC(0.3, 0.5),
                        sim_cfg=SimConfig(rng_seed=CAMPAIGN_SEED), jobs=JOBS, witnesses=witnesses)


# --- acceptance summary: one line per criterion at the end of the run -----------------------

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.get_closest_marker("criterion")
    if crit is None or rep.when not in ("setup", "call"):
        return
    num, title = crit.args
    if rep.when == "call" or rep.failed:
        note = getattr(item, "acceptance_note", "")
        _ACCEPTANCE[num] = (title, "PASS" if rep.passed else "FAIL", note)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title, status, note = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num} {status}: {title}" + (f" ({note})" if note else ""))
