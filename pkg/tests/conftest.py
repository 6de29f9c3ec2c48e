import re

CRITERIA = {
    1: "analytic fold location, deterministic, under five minutes",
    2: "surrogate fold locations at desk scale",
    3: "held-out regression quality and training-speed ratio",
    4: "mass conservation of the learned density field",
    5: "feature relevance ranking majority",
    6: "escape-time machinery against analytic oracles",
    7: "escape-time distribution shape on the reduced model",
    8: "consistency identities and gradient checks",
    9: "reduced-model cost advantage",
}


def pytest_terminal_summary(terminalreporter):
    seen = {}
    for status in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_criterion_(\d+)", nodeid)
            if m and "test_acceptance" in nodeid:
                k = int(m.group(1))
                # a failed teardown must not overwrite a failed call
                if seen.get(k) in ("failed", "error"):
                    continue
                seen[k] = status
    if not seen:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        status = seen.get(k)
        if status == "passed":
            verdict = "PASS"
        elif status is None:
            verdict = "NOT RUN"
        else:
            verdict = "FAIL"
        terminalreporter.write_line(
            "criterion %d: %-4s  %s" % (k, verdict, CRITERIA[k]))
