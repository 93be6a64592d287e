import hypothesis
import pytest

from patterndp.stream_model import Event, EventStream

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")


def make_stream(kinds_at, stream_id="s"):
    """[(timestamp, kind), ...] -> EventStream numbered 1..n."""
    return EventStream(Event(stream_id, i, t, k) for i, (t, k) in enumerate(kinds_at, start=1))


@pytest.fixture
def stream_of():
    return make_stream


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
