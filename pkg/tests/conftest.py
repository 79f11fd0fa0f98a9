"""Shared pytest configuration.

After a run that included the acceptance gate, print one PASS/FAIL line
per numbered criterion so the gate's outcome is readable at a glance.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[int, str] = {}
    for bucket, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(bucket, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            marker = "test_criterion_"
            start = nodeid.find(marker)
            if start < 0:
                continue
            tail = nodeid[start + len(marker):]
            number = tail.split("_", 1)[0]
            if number.isdigit():
                outcomes[int(number)] = verdict
    if outcomes:
        terminalreporter.write_sep("-", "acceptance criteria")
        for number in sorted(outcomes):
            terminalreporter.write_line(f"criterion {number}: {outcomes[number]}")
