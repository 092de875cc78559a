"""Shared test plumbing: collects acceptance-criterion results and prints one
pass/fail line per criterion in the terminal summary."""

ACCEPTANCE_LINES = []


def record_acceptance(number: int, name: str, passed: bool, elapsed_s: float, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:2d} {name:<34s} {status}  ({elapsed_s * 1000:.1f} ms)"
    if detail:
        line += f"  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
