import pytest

_LINES: list[str] = []


class Report:
    """Collects one summary line per acceptance check."""

    def __call__(self, label: str, ok: bool, detail: str = "") -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        _LINES.append(line)
        return ok


@pytest.fixture(scope="session")
def report():
    return Report()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance summary")
        for line in _LINES:
            terminalreporter.write_line(line)
