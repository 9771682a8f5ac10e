import numpy as np
import pytest

from cdepaths.series import RawSeries

ACCEPTANCE_LINES = []


def make_series(t, x, mask=None, names=None):
    """RawSeries from lists; ``None`` entries in ``x`` are missing."""
    x = np.array(x, dtype=object)
    if x.ndim == 1:
        x = x[:, None]
    if mask is None:
        mask = np.vectorize(lambda v: v is not None)(x).astype(bool)
    values = np.where(mask, np.where(mask, x, 0.0), 0.0).astype(float)
    names = names or tuple(f"x{c}" for c in range(values.shape[1]))
    return RawSeries(np.asarray(t, dtype=float), values, np.asarray(mask, dtype=bool), names)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
