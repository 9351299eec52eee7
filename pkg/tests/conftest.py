import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one ``PASS``/``FAIL`` line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
