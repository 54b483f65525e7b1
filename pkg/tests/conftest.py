import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "swarmdmd", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("swarmdmd")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def milling_report():
    """Seed-0 milling experiment, shared because it is the slowest scenario."""
    import time

    from swarmdmd.experiment import default_config, run_experiment

    t0 = time.perf_counter()
    report = run_experiment(default_config("milling"), write=False)
    report.elapsed = time.perf_counter() - t0
    return report


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion, echoed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
