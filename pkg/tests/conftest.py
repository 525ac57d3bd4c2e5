import numpy as np
import pytest

from raincascade.derainnet import BranchConfig

TINY_RAIN = BranchConfig(hidden_channels=8, num_blocks=1, shuffle_factor=2, input_channels=3)
TINY_NOISE = BranchConfig(hidden_channels=8, num_blocks=1, shuffle_factor=2, input_channels=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv2d_reference(x, k, b, padding):
    """Nested-loop cross-correlation used as an independent oracle."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + w] = x
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for yy in range(ho):
                for xx in range(wo):
                    out[i, o, yy, xx] = np.sum(xp[i, :, yy:yy + kh, xx:xx + kw] * k[o]) + b[0, o, 0, 0]
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
