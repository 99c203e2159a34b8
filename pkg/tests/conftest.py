import sys

import pytest
from hypothesis import settings

from pocsim.puzzle import BlockHeader, sha256
from pocsim.scenario import ScenarioConfig, run_scenario

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# exhaustive scan of the fixture header below over 2^16 nonces at D=12
FIXTURE_VALID_D12 = [413, 9051, 9340, 16230, 19422, 28851, 32003, 34717, 37124, 44854,
                     47143, 47471, 53230, 55625, 57614, 58636, 60991]


@pytest.fixture
def fixture_header():
    return BlockHeader(1, sha256(b"fixture-prev"), sha256(b"fixture-root"), 1, 12)


@pytest.fixture(scope="session")
def honest_run():
    cfg = ScenarioConfig(seed=3, target_blocks=6)
    sim, report = run_scenario(cfg, keep_trace=True)
    return sim, report


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance")
    for name in [n for n, _ in module.CHECKS if n in lines]:
        terminalreporter.write_line(lines[name])
