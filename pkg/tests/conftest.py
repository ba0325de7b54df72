import pytest

_ACCEPTANCE = {}


class AcceptanceLog:
    def record(self, number: int, title: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (title, ok, detail)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
