"""Collects acceptance results and prints one PASS/FAIL line per criterion."""

import pytest

CRITERIA = {
    1: "sensitivity transfer under a monotone warp",
    2: "post-rank mapping equals map-all",
    3: "pushforward KS oracle",
    4: "threshold enumeration oracles",
    5: "AUC cross-check and invariance",
    6: "low-data comparison",
    7: "AUC preservation under TSM",
    8: "determinism of experiment output",
}

_results: dict[int, tuple[bool, str]] = {}


class Recorder:
    def __call__(self, criterion: int, ok: bool, detail: str):
        prev = _results.get(criterion)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        _results[criterion] = (bool(ok), detail)


@pytest.fixture
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    ran_acceptance = any(
        "test_acceptance" in getattr(rep, "nodeid", "")
        for reps in terminalreporter.stats.values()
        for rep in reps
        if hasattr(rep, "nodeid")
    )
    if not ran_acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        ok, detail = _results.get(n, (False, "not reached"))
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {name} | {detail}")
