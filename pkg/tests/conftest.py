"""Collects the acceptance verdicts and prints one PASS/FAIL line per criterion."""

ACCEPTANCE = {}


def record(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[name] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
