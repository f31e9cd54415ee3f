"""Height-map state of the granular medium and angle-of-repose relaxation.

The medium is a dense grid of surface elevations (meters). Whenever the
slope between two adjacent cells exceeds the angle of repose, material
flows downhill until every pairwise slope is admissible again. All
operations are pure: they take a map and return a new one (the in-place
array variants are the building blocks the world simulation uses).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

HEIGHT_MIN = 0.0
HEIGHT_MAX = 0.20  # elevation clamp range, meters

_SQRT2 = math.sqrt(2.0)


class GhmParseError(ValueError):
    """Malformed GHM file; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class RelaxationError(RuntimeError):
    """Relaxation did not converge; carries the residual max violation."""

    def __init__(self, residual: float, sweeps: int):
        self.residual = residual
        self.sweeps = sweeps
        super().__init__(
            f"relaxation did not converge after {sweeps} sweeps "
            f"(residual max violation {residual:.3e} m)"
        )


@dataclass
class HeightMap:
    """Grid of surface elevations in meters, cell_size meters per cell."""

    heights: np.ndarray
    cell_size: float = 0.01

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @classmethod
    def flat(cls, rows: int, cols: int, height: float, cell_size: float = 0.01) -> "HeightMap":
        return cls(np.full((rows, cols), height, dtype=np.float64), cell_size)

    def validate(self) -> None:
        if self.heights.ndim != 2 or self.rows < 1 or self.cols < 1:
            raise ValueError("height map must be a 2D grid with at least one cell")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("heights must be finite")
        if self.heights.min() < HEIGHT_MIN - 1e-12 or self.heights.max() > HEIGHT_MAX + 1e-12:
            raise ValueError(
                f"heights must lie in [{HEIGHT_MIN}, {HEIGHT_MAX}] m, "
                f"got [{self.heights.min():.4f}, {self.heights.max():.4f}]"
            )

    def copy(self) -> "HeightMap":
        return HeightMap(self.heights.copy(), self.cell_size)


@dataclass
class ReposeConfig:
    """Parameters of the slope relaxation.

    transfer_gain is the fraction of the pairwise excess moved per sweep;
    any value in (0, 1] is stable because each pair transfer is additionally
    divided by the 8 possible flow partners of a cell, which keeps the
    simultaneous (Jacobi) update inside the [min, max] envelope of the input.
    """

    angle_repose: float = math.radians(35.0)
    transfer_gain: float = 0.5
    tolerance: float = 1e-5
    max_sweeps: int = 10_000
    cohesion_relief: float = 0.010  # extra relief a compacted cut face can hold

    def __post_init__(self):
        if not 0.0 < self.angle_repose < math.pi / 2:
            raise ValueError("angle_repose must be in (0, pi/2)")
        if not 0.0 < self.transfer_gain <= 1.0:
            raise ValueError("transfer_gain must be in (0, 1]")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.cohesion_relief < 0:
            raise ValueError("cohesion_relief must be >= 0")


@njit(cache=True)
def _relax_kernel(h, delta, outflow, blocked, floor, has_floor, cohesion,
                  dr_arr, dc_arr, thr_arr, gain, tol, max_sweeps):
    """Jacobi sweeps of pairwise excess transfers, in place.

    Per unordered 8-neighbor pair with height gap d and slope threshold thr,
    gain/16 * (|d| - thr) flows downhill (the /2 splits the excess between
    the pair, the /8 accounts for a cell's flow partners). Pairs touching a
    blocked cell (tool-occupied) neither flow nor count as violations. With
    a floor profile, a cell can shed only its loose layer h - floor (all of
    its outgoing flows scale down once they would cut into the floor), but
    compacted material holds a cut face only up to `cohesion` extra relief:
    a steeper face crumbles regardless of the floor. Returns (sweeps used,
    residual violation); residual > tol means max_sweeps was hit.
    """
    rows, cols = h.shape
    n_dirs = dr_arr.shape[0]
    for sweep in range(max_sweeps + 1):
        maxv = 0.0
        for i in range(rows):
            for j in range(cols):
                delta[i, j] = 0.0
                outflow[i, j] = 0.0
        if has_floor:
            for d in range(n_dirs):
                dr, dc, thr = dr_arr[d], dc_arr[d], thr_arr[d]
                for i in range(rows - dr):
                    for j in range(max(0, -dc), min(cols, cols - dc)):
                        if blocked[i, j] or blocked[i + dr, j + dc]:
                            continue
                        diff = h[i, j] - h[i + dr, j + dc]
                        v = (diff if diff >= 0.0 else -diff) - thr
                        if v > 0.0:
                            if diff > 0.0:
                                outflow[i, j] += gain * v
                            else:
                                outflow[i + dr, j + dc] += gain * v
        for d in range(n_dirs):
            dr, dc, thr = dr_arr[d], dc_arr[d], thr_arr[d]
            for i in range(rows - dr):
                for j in range(max(0, -dc), min(cols, cols - dc)):
                    if blocked[i, j] or blocked[i + dr, j + dc]:
                        continue
                    diff = h[i, j] - h[i + dr, j + dc]
                    v = (diff if diff >= 0.0 else -diff) - thr
                    if v <= 0.0:
                        continue
                    if diff > 0.0:
                        si, sj = i, j
                        sign = 1.0
                    else:
                        si, sj = i + dr, j + dc
                        sign = -1.0
                    allowed = v
                    if has_floor:
                        total = outflow[si, sj]
                        loose = h[si, sj] - floor[si, sj]
                        if loose < 0.0:
                            loose = 0.0
                        scale = 1.0
                        if total > loose:
                            scale = loose / total if total > 0.0 else 0.0
                        allowed = v * scale
                        crumble = v - cohesion
                        if crumble > allowed:
                            allowed = crumble
                    q = sign * gain * allowed
                    delta[i, j] -= q
                    delta[i + dr, j + dc] += q
                    if allowed > maxv:
                        maxv = allowed
        if maxv <= tol:
            return sweep, maxv
        if sweep == max_sweeps:
            return sweep, maxv
        for i in range(rows):
            for j in range(cols):
                h[i, j] += delta[i, j]
    return max_sweeps, 0.0  # unreachable


def _clamp_spill(h: np.ndarray, cell_size: float) -> float:
    """Clamp heights to the legal range; return volume lost at the ceiling."""
    spilled = 0.0
    if h.max() > HEIGHT_MAX:
        over = np.maximum(h - HEIGHT_MAX, 0.0)
        spilled = float(over.sum()) * cell_size * cell_size
        np.minimum(h, HEIGHT_MAX, out=h)
    if h.min() < HEIGHT_MIN:
        np.maximum(h, HEIGHT_MIN, out=h)
    return spilled


_DR_ARR = np.array([0, 1, 1, 1], dtype=np.int64)
_DC_ARR = np.array([1, 0, 1, -1], dtype=np.int64)
_DIST_ARR = np.array([1.0, 1.0, _SQRT2, _SQRT2])


def relax_array(h: np.ndarray, cell_size: float, cfg: ReposeConfig,
                blocked: np.ndarray | None = None,
                floor: np.ndarray | None = None) -> tuple[int, float]:
    """Relax heights in place until stable; return (sweeps, spilled volume).

    Inputs above the elevation ceiling are clamped first and the destroyed
    volume reported as spill; the relaxation itself conserves volume exactly
    and never leaves the [min, max] envelope of the (clamped) input. Cells
    marked blocked are frozen (material cannot flow in or out of them), and
    a floor profile marks compacted material that cannot avalanche away;
    stability is then only required for the flows that remain possible.
    """
    spilled = _clamp_spill(h, cell_size)
    thr = cell_size * math.tan(cfg.angle_repose) * _DIST_ARR
    delta = np.empty_like(h)
    outflow = np.empty_like(h)
    if blocked is None:
        blocked = np.zeros(h.shape, dtype=np.bool_)
    has_floor = floor is not None
    if floor is None:
        floor = np.zeros(h.shape)
    sweeps, residual = _relax_kernel(
        h, delta, outflow, np.ascontiguousarray(blocked),
        np.ascontiguousarray(floor), has_floor, cfg.cohesion_relief,
        _DR_ARR, _DC_ARR, thr,
        cfg.transfer_gain / 16.0, cfg.tolerance, cfg.max_sweeps,
    )
    if residual > cfg.tolerance:
        raise RelaxationError(residual=residual, sweeps=sweeps)
    return sweeps, spilled


def relax(hmap: HeightMap, cfg: ReposeConfig | None = None) -> HeightMap:
    """Return a stable copy of the map (no adjacent pair above the repose slope)."""
    cfg = cfg or ReposeConfig()
    hmap.validate()
    h = hmap.heights.copy()
    relax_array(h, hmap.cell_size, cfg)
    return HeightMap(h, hmap.cell_size)


def volume(hmap: HeightMap) -> float:
    """Total material volume in cubic meters."""
    return float(hmap.heights.sum()) * hmap.cell_size * hmap.cell_size


def max_slope_violation(hmap: HeightMap, cfg: ReposeConfig | None = None) -> float:
    """Largest positive excess h_i - h_j - dist*tan(angle) over 8-adjacent pairs."""
    cfg = cfg or ReposeConfig()
    h = hmap.heights
    tan_rep = math.tan(cfg.angle_repose)
    worst = 0.0
    for dr, dc, scale in ((0, 1, 1.0), (1, 0, 1.0), (1, 1, _SQRT2), (1, -1, _SQRT2)):
        thr = hmap.cell_size * scale * tan_rep
        if dc >= 0:
            diff = h[: h.shape[0] - dr, : h.shape[1] - dc] - h[dr:, dc:]
        else:
            diff = h[: h.shape[0] - dr, -dc:] - h[dr:, : h.shape[1] + dc]
        if diff.size:
            worst = max(worst, float(np.abs(diff).max()) - thr)
    return max(0.0, worst)


# ---------------------------------------------------------------------------
# GHM v1 text format: header `GHM 1 <rows> <cols> <cell_size_cm> <h0_cm>`,
# then rows lines of cols heights in cm, then optional `# key=value` lines.
# ---------------------------------------------------------------------------

def save_ghm(path, hmap: HeightMap, h0: float, comments: tuple[str, ...] = ()) -> None:
    """Write a GHM v1 file. h0 is the reference bed height in meters."""
    lines = [f"GHM 1 {hmap.rows} {hmap.cols} {hmap.cell_size * 100:g} {h0 * 100:g}"]
    for row in hmap.heights:
        lines.append(" ".join(f"{v * 100:.6f}" for v in row))
    lines.extend(f"# {c}" for c in comments)
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_ghm(path) -> tuple[HeightMap, float, list[str]]:
    """Parse a GHM v1 file; returns (map, h0 in meters, comment lines)."""
    with open(path) as f:
        raw = f.read().splitlines()
    if not raw:
        raise GhmParseError(1, "empty file")
    head = raw[0].split()
    if len(head) != 6 or head[0] != "GHM" or head[1] != "1":
        raise GhmParseError(1, f"expected header 'GHM 1 <rows> <cols> <cell_cm> <h0_cm>', got {raw[0]!r}")
    try:
        rows, cols = int(head[2]), int(head[3])
        cell_size = float(head[4]) * 0.01
        h0 = float(head[5]) * 0.01
    except ValueError:
        raise GhmParseError(1, "non-numeric header field") from None
    if rows < 1 or cols < 1 or cell_size <= 0:
        raise GhmParseError(1, "rows, cols must be >= 1 and cell size positive")
    if len(raw) < 1 + rows:
        raise GhmParseError(len(raw), f"expected {rows} data rows, file ends early")
    heights = np.empty((rows, cols), dtype=np.float64)
    for i in range(rows):
        line_no = i + 2
        parts = raw[1 + i].split()
        if len(parts) != cols:
            raise GhmParseError(line_no, f"expected {cols} values, got {len(parts)}")
        try:
            vals_cm = [float(p) for p in parts]
        except ValueError:
            raise GhmParseError(line_no, "non-numeric height value") from None
        for j, v in enumerate(vals_cm):
            if not 0.0 <= v <= HEIGHT_MAX * 100:
                raise GhmParseError(line_no, f"height {v} cm out of [0, {HEIGHT_MAX * 100:g}] range")
            heights[i, j] = v * 0.01
    comments = []
    for extra_i, line in enumerate(raw[1 + rows:]):
        if not line.strip():
            continue
        if not line.startswith("#"):
            raise GhmParseError(2 + rows + extra_i, f"unexpected trailing content {line!r}")
        comments.append(line[1:].strip())
    return HeightMap(heights, cell_size), h0, comments


def write_pgm16(path, values: np.ndarray) -> None:
    """Write a 16-bit binary PGM (big-endian, maxval 65535)."""
    data = np.clip(np.rint(values), 0, 65535).astype(">u2")
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n65535\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def heightmap_to_pgm(path, hmap: HeightMap) -> None:
    """Export a height map as 16-bit PGM, 0..65535 mapped linearly to 0..HEIGHT_MAX."""
    write_pgm16(path, hmap.heights / HEIGHT_MAX * 65535.0)
