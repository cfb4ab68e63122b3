import pytest


@pytest.fixture(autouse=True)
def _quiet_untraced(monkeypatch):
    """Keep test runs off Weave and off stderr chatter."""
    monkeypatch.setenv("BINSENSE_QUIET", "1")
    monkeypatch.delenv("BINSENSE_WEAVE_PROJECT", raising=False)
    monkeypatch.delenv("BT_SEED", raising=False)
