"""Print one verdict line per acceptance criterion after the run."""


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome != "error":
                continue
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props:
                continue
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], f"criterion {props['criterion']}: {verdict}"
                          f"  {props.get('measured', '')}".rstrip()))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
