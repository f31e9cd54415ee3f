import math

import numpy as np
import pytest

from sandshaper.heightfield import HeightMap, ReposeConfig, relax


def repose_oracle(heights: np.ndarray, cell_size: float, angle_deg: float = 35.0,
                  gain: float = 0.1, sweeps: int = 100_000) -> np.ndarray:
    """Brute-force reference relaxation: same update rule, gather formulation.

    Every ordered neighbor direction contributes gain/16 of the pairwise
    excess, applied simultaneously for a fixed number of sweeps. Kept
    independent of the library kernel on purpose.
    """
    h = heights.astype(np.float64).copy()
    thr_a = cell_size * math.tan(math.radians(angle_deg))
    thr_d = thr_a * math.sqrt(2.0)
    g = gain / 16.0
    dirs = [(-1, -1, thr_d), (-1, 0, thr_a), (-1, 1, thr_d),
            (0, -1, thr_a), (0, 1, thr_a),
            (1, -1, thr_d), (1, 0, thr_a), (1, 1, thr_d)]
    for _ in range(sweeps):
        pad = np.pad(h, 1, mode="edge")  # edge padding: border pairs never flow
        delta = np.zeros_like(h)
        for dr, dc, thr in dirs:
            nb = pad[1 + dr:1 + dr + h.shape[0], 1 + dc:1 + dc + h.shape[1]]
            delta -= g * np.maximum(h - nb - thr, 0.0)
            delta += g * np.maximum(nb - h - thr, 0.0)
        if np.abs(delta).max() == 0.0:
            break
        h += delta
    return h


def random_bed(rng: np.random.Generator, rows: int = 12, cols: int = 12,
               kind: str | None = None) -> HeightMap:
    """Random test bed: rough noise, bumpy field, or carved trench."""
    kind = kind or rng.choice(["noise", "bumps", "trench"])
    if kind == "noise":
        h = rng.uniform(0.0, 0.18, (rows, cols))
    elif kind == "bumps":
        h = np.full((rows, cols), 0.06)
        for _ in range(4):
            r0 = int(rng.integers(0, rows - 3))
            c0 = int(rng.integers(0, cols - 3))
            h[r0:r0 + 3, c0:c0 + 3] += rng.uniform(-0.04, 0.06)
        h = np.clip(h, 0.0, 0.18)
    else:
        h = np.full((rows, cols), 0.06)
        r0 = int(rng.integers(1, rows - 3))
        h[r0:r0 + 2, 2:cols - 2] = rng.uniform(0.02, 0.05)
    return HeightMap(h, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def relaxed_maps():
    """A batch of relaxed beds shared by perception tests."""
    rng = np.random.default_rng(7)
    maps = []
    for _ in range(10):
        hm = random_bed(rng, rows=32, cols=32, kind="bumps")
        maps.append(relax(hm, ReposeConfig()))
    return maps
