import math

from _pipeline import IDENTIFIED


def pytest_sessionfinish(session, exitstatus):
    """Constraint closure over every model identified during the session."""
    if not IDENTIFIED:
        return
    worst = max(abs(m.fast.k * m.slow.z0 - m.slow.s0) / math.ulp(m.slow.s0) for m in IDENTIFIED)
    reporter = session.config.pluginmanager.get_plugin("terminalreporter")
    ok = worst <= 1
    if reporter is not None:
        reporter.write_line(f"\nconstraint closure over all {len(IDENTIFIED)} identified models: "
                            f"max |k*z0 - s0| = {worst:.0f} ulp -> {'PASS' if ok else 'FAIL'}")
    if not ok:
        session.exitstatus = 1
