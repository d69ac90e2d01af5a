import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cachescope.pipeline import simulate  # noqa: E402
from cachescope.workloads import WorkloadKind, WorkloadSpec, generate  # noqa: E402


class TraceCache:
    """Generated traces and their simulated outcomes, built once per session."""

    def __init__(self):
        self._traces = {}
        self._kinds = {}

    def trace(self, kind: WorkloadKind, seed: int = 1, **kw):
        key = (kind, seed, tuple(sorted(kw.items())))
        if key not in self._traces:
            self._traces[key] = generate(WorkloadSpec(kind, seed=seed, **kw))
        return self._traces[key]

    def kinds(self, kind: WorkloadKind, seed: int = 1, **kw):
        key = (kind, seed, tuple(sorted(kw.items())))
        if key not in self._kinds:
            self._kinds[key] = simulate(self.trace(kind, seed, **kw))
        return self._kinds[key]


@pytest.fixture(scope="session")
def traces():
    return TraceCache()


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
