"""Shared test plumbing: acceptance-criterion result lines."""

_CRITERIA: list[tuple[int, str, bool, str]] = []


def record_criterion(num: int, label: str, ok: bool, detail: str = "") -> None:
    _CRITERIA.append((num, label, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, label, ok, detail in sorted(_CRITERIA):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {num:02d} [{status}] {label}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
