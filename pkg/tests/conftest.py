import numpy as np
import pytest

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """record(k, ok, detail): store the verdict of acceptance criterion k and fail the test if not ok."""
    results = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(k: int, ok: bool, detail: str):
        results[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {k} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
