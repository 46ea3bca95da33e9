import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def published():
    text = resources.files("cpgrid").joinpath("data", "published_gains.json").read_text()
    return {k: dict(v, K=np.array(v["K"])) for k, v in json.loads(text)["gains"].items()}


_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(key, ok, detail)``; returns ``ok``."""
    def record(key: str, ok: bool, detail: str = "") -> bool:
        _CRITERIA[key] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
