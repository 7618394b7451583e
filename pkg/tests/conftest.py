import numpy as np
import pytest

from relavar.data import Session
from relavar.model import Model

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def perfect_cyclic_model(m: int, repeat: int = 8, strength: float = 30.0) -> Model:
    """Hand-built model that predicts item (x + 1) % m after item x.

    The update gate is saturated open, so after any item x the state is
    roughly +1 on the ``repeat`` coordinates owned by x, -1 elsewhere, and -1
    in the log-variance slot. Output row j sums the coordinates owned by
    item j - 1, giving logits of about +repeat for the successor and -repeat
    for every other item.
    """
    D = m * repeat
    model = Model.zeros(D, m)
    p = model.params
    owner = np.repeat(np.arange(m), repeat)
    codes = np.where(owner[None, :] == np.arange(m)[:, None], 1.0, -1.0)  # (m, D)
    p["Wz"][:] = strength
    p["W"][:D, :] = strength * codes.T
    p["W"][D, :] = -strength
    p["Wy"][:] = np.roll((codes > 0).astype(float), 1, axis=0)
    return model


@pytest.fixture
def small_sessions():
    return [
        Session("a", [0, 1, 2], [0.0, 1.0, 2.0]),
        Session("b", [3, 4], [5.0, 6.0]),
        Session("c", [5, 6], [10.0, 11.0]),
    ]
