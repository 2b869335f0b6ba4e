import numpy as np

from codescale.laws import RunRecord
from codescale.sweep import plan_sweep, reference_sweep_spec


def reference_grid():
    return plan_sweep(reference_sweep_spec()).points


def synthetic_records(law, noise=0.0, seed=0, points=None):
    """Records generated from ``law`` with optional log-normal multiplicative noise."""
    points = reference_grid() if points is None else points
    n = np.array([p[0] for p in points], dtype=np.float64)
    d = np.array([p[1] for p in points], dtype=np.float64)
    loss = law.loss(n, d)
    if noise:
        loss = loss * np.exp(noise * np.random.default_rng(seed).standard_normal(loss.size))
    return [RunRecord(int(a), int(b), float(c)) for a, b, c in zip(n, d, loss)]


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
