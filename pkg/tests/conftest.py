import os
import sys

import pytest

HERE = os.path.dirname(__file__)
sys.path.insert(0, HERE)  # oracles.py

FIXTURE_DIR = os.path.join(HERE, "data")


@pytest.fixture(scope="session")
def fixture_paths():
    return {
        "interactions": os.path.join(FIXTURE_DIR, "interactions.csv"),
        "hierarchy": os.path.join(FIXTURE_DIR, "hierarchy.csv"),
    }


@pytest.fixture(scope="session")
def small_benchmark():
    """A reduced planted dataset: (split, hierarchy, incidences)."""
    from hgerec.data import build_incidences, cold_start_split, k_core_filter, synth_generate

    log, h = synth_generate(n_users=300, n_items=120, branching=(3, 4), interactions_per_user=12, seed=5)
    split = cold_start_split(k_core_filter(log, 3), seed=5)
    return split, h, build_incidences(h, split.item_ids)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
