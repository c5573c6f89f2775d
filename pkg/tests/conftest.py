import json

import pytest

from tadkit.annotations import LabelSpace


@pytest.fixture
def labels():
    return LabelSpace(("Surfing", "Skiing", "Cooking"))


@pytest.fixture
def write_json(tmp_path):
    def _write(name, obj):
        path = tmp_path / name
        path.write_text(json.dumps(obj), encoding="utf-8")
        return path
    return _write


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("title", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for crit, status, title in sorted(lines):
            terminalreporter.write_line(f"[{status}] criterion {crit}: {title}")
