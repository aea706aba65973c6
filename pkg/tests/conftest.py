import pytest

# (criterion id, passed, detail) appended by the acceptance tests
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def record(cid: str, passed: bool, detail: str):
        line = (cid, bool(passed), detail)
        ACCEPTANCE_LINES.append(line)
        print(f"[acceptance {cid}] {'PASS' if passed else 'FAIL'}: {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda x: (int(x[0].split(".")[0]), x[0])):
        terminalreporter.write_line(f"criterion {cid:<5} {'PASS' if passed else 'FAIL'}  {detail}")
