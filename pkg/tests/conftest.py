import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class _Recorder:
    def __call__(self, number: int, title: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        return bool(passed)


@pytest.fixture(scope="session")
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}")
    npass = sum(1 for _, ok, _ in _ACCEPTANCE.values() if ok)
    tr.write_line(f"{npass}/{len(_ACCEPTANCE)} acceptance criteria passed")
