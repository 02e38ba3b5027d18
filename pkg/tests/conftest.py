import numpy as np
import pytest

from rftopo.sampler import GridField

_ACCEPTANCE = []


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict that is echoed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def grid(shape, sides):
    """Vertex coordinates of a periodic grid, one array per axis."""
    axes = [np.arange(m) * L / m for m, L in zip(shape, sides)]
    return np.meshgrid(*axes, indexing="ij")


def bumps(centres, shape=(64, 64), side=20.0, width=1.5, heights=None):
    """Sum of periodic Gaussian bumps on a square torus grid, as a GridField without spectrum."""
    xs = grid(shape, (side,) * len(shape))
    out = np.zeros(shape)
    heights = heights or [1.0] * len(centres)
    for c, a in zip(centres, heights):
        r2 = 0.0
        for x, ci in zip(xs, c):
            d = (x - ci + side / 2) % side - side / 2
            r2 = r2 + d * d
        out += a * np.exp(-r2 / (2 * width**2))
    return GridField(out, (side,) * len(shape))


def ring(shape=(32, 32), side=32.0, radius=8.0, width=1.5):
    """Field peaking on a circle: its excursion set above 0.5 is an annulus."""
    x, y = grid(shape, (side, side))
    r = np.hypot(x - side / 2, y - side / 2)
    return GridField(np.exp(-((r - radius) ** 2) / (2 * width**2)), (side, side))
