"""Kinematic cubic end-effector in a bounded workspace over the sand bed.

The tool is an axis-aligned cuboid whose position refers to its bottom
center. Moving it through the bed cuts footprint cells down to the tool
bottom and pushes the removed material onto the ring of cells around the
footprint, after which the bed relaxes to a stable slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heightfield import HeightMap, ReposeConfig, relax_array


@dataclass
class WorkspaceConfig:
    extent: tuple[float, float] = (0.32, 0.32)      # x, y span in meters
    z_range: tuple[float, float] = (0.005, 0.20)    # tool bottom clearance range
    max_step: float = 0.04                          # per-axis action magnitude
    substep_fraction: float = 0.5                   # of cell_size per motion substep

    def __post_init__(self):
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.z_range[0] < 0 or self.z_range[1] <= self.z_range[0]:
            raise ValueError("z_range must satisfy 0 <= z_min < z_max")
        if not 0 < self.substep_fraction <= 1:
            raise ValueError("substep_fraction must be in (0, 1]")


@dataclass
class EndEffectorState:
    position: np.ndarray
    previous_position: np.ndarray
    footprint: tuple[float, float] = (0.02, 0.02)   # base width x depth, meters
    length: float = 0.15                            # tool height, meters

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.previous_position = np.asarray(self.previous_position, dtype=np.float64).copy()
        if self.footprint[0] <= 0 or self.footprint[1] <= 0 or self.length <= 0:
            raise ValueError("footprint dimensions and length must be positive")


@dataclass
class StepReport:
    """Material bookkeeping for one action."""

    displaced_volume: float = 0.0
    spilled_volume: float = 0.0
    compacted_volume: float = 0.0   # driven into the bed, not redeposited
    substeps: int = 0


def footprint_mask(rows: int, cols: int, cell_size: float,
                   center_xy, footprint) -> np.ndarray:
    """Boolean grid of cells whose centers lie inside the tool base projection.

    The test is half-open per axis, center in [lo, hi), so a tool that is an
    exact multiple of the cell size always covers the same number of cells
    regardless of where it sits.
    """
    cx, cy = float(center_xy[0]), float(center_xy[1])
    half_w, half_d = footprint[0] / 2.0, footprint[1] / 2.0
    xs = (np.arange(cols) + 0.5) * cell_size
    ys = (np.arange(rows) + 0.5) * cell_size
    in_x = (xs >= cx - half_w) & (xs < cx + half_w)
    in_y = (ys >= cy - half_d) & (ys < cy + half_d)
    return np.outer(in_y, in_x)


def _dilate(mask: np.ndarray) -> np.ndarray:
    """8-neighborhood dilation, in-grid."""
    dil = np.zeros_like(mask)
    rows, cols = mask.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r0, r1 = max(dr, 0), rows + min(dr, 0)
            c0, c1 = max(dc, 0), cols + min(dc, 0)
            dil[r0:r1, c0:c1] |= mask[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
    return dil


def _ring_of(mask: np.ndarray, spread: int = 1) -> np.ndarray:
    """Cells within `spread` dilations of the mask but not in it (in-grid)."""
    dil = mask
    for _ in range(spread):
        dil = _dilate(dil)
    return dil & ~mask


def displace_array(h: np.ndarray, cell_size: float, ee: EndEffectorState,
                   position=None, motion_xy=None, spread: int = 1,
                   loose_fraction: float = 1.0) -> tuple[float, float]:
    """Cut footprint cells to the tool bottom, push material onto the ring.

    With a horizontal motion direction the material goes to the forward cone
    (a plow sheds its bow wave ahead and to the leading sides, not behind),
    spread over up to `spread` cells beyond the footprint so it settles as a
    low berm instead of a column. Without a direction (pure descent) it
    spreads evenly over the immediate ring. Only `loose_fraction` of the cut
    reappears as loose material; the rest is compacted into the bed by the
    blade. Modifies h in place and returns (displaced, compacted) volumes;
    displaced - compacted is redeposited exactly whenever any receiving cell
    is in the grid. A footprint entirely off-grid is a no-op.
    """
    pos = ee.position if position is None else position
    fp = footprint_mask(h.shape[0], h.shape[1], cell_size, pos[:2], ee.footprint)
    if not fp.any():
        return 0.0, 0.0
    z_bottom = max(float(pos[2]), 0.0)
    cut = np.maximum(h[fp] - z_bottom, 0.0)
    removed = float(cut.sum()) * cell_size * cell_size
    if removed <= 0.0:
        return 0.0, 0.0
    h[fp] -= cut
    target = _ring_of(fp, 1)
    if motion_xy is not None and (abs(motion_xy[0]) > 1e-12 or abs(motion_xy[1]) > 1e-12):
        zone = _ring_of(fp, spread)
        norm = math.hypot(motion_xy[0], motion_xy[1])
        ux, uy = motion_xy[0] / norm, motion_xy[1] / norm
        rr, cc = np.nonzero(zone)
        rs, cs = np.nonzero(fp)
        off_x = cc - cs.mean()
        off_y = rr - rs.mean()
        along = off_x * ux + off_y * uy
        # keep the bow wave in the blade's track: within 30 degrees of motion
        ahead = along > 0.866 * np.hypot(off_x, off_y) - 1e-9
        if not ahead.any():
            ahead = along > 1e-9
        if ahead.any():
            target = np.zeros_like(zone)
            target[rr[ahead], cc[ahead]] = True
    compacted = removed * (1.0 - loose_fraction)
    n_target = int(target.sum())
    if n_target > 0:
        h[target] += (removed - compacted) / n_target / (cell_size * cell_size)
    else:
        compacted = removed
    return removed, compacted


def displace(hmap: HeightMap, ee: EndEffectorState) -> tuple[HeightMap, float]:
    """Pure variant of displace_array: returns (new map, displaced volume).

    Spreads the whole cut evenly over the immediate perimeter ring, so
    volume is conserved exactly (no motion, no compaction).
    """
    h = hmap.heights.copy()
    removed, _ = displace_array(h, hmap.cell_size, ee)
    return HeightMap(h, hmap.cell_size), removed


class SandWorld:
    """Owns the bed array and the tool; one instance per episode."""

    def __init__(self, hmap: HeightMap, ee: EndEffectorState,
                 workspace: WorkspaceConfig | None = None,
                 repose: ReposeConfig | None = None,
                 changed_eps: float = 5e-4, deposit_spread: int = 2,
                 loose_fraction: float = 1.0, max_bite: float = 0.010):
        hmap.validate()
        self.heights = hmap.heights.copy()
        self.cell_size = hmap.cell_size
        self.ee = ee
        self.workspace = workspace or WorkspaceConfig()
        self.repose = repose or ReposeConfig()
        self.deposit_spread = deposit_spread
        self.loose_fraction = loose_fraction
        self.max_bite = max_bite
        self.total_spilled = 0.0
        self.total_compacted = 0.0
        self._needs_settle = False  # pending avalanches held back by the tool
        self._clamp_ee()
        relax_array(self.heights, self.cell_size, self.repose)
        # the bed as poured is compacted: cut faces hold, only material the
        # tool has displaced (loose, above the floor) can avalanche
        self.floor = self.heights.copy()
        # episode-cumulative manipulation tracking, sampled every substep
        self.changed_eps = changed_eps
        self.reference_heights = self.heights.copy()
        self.ever_changed = np.zeros(self.heights.shape, dtype=bool)

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    def height_map(self) -> HeightMap:
        return HeightMap(self.heights.copy(), self.cell_size)

    def _clamp_ee(self) -> None:
        ws = self.workspace
        p = self.ee.position
        p[0] = min(max(p[0], 0.0), ws.extent[0])
        p[1] = min(max(p[1], 0.0), ws.extent[1])
        p[2] = min(max(p[2], ws.z_range[0]), ws.z_range[1])

    def teleport(self, position) -> None:
        """Place the tool directly (start placement, not a counted motion)."""
        self.ee.position = np.asarray(position, dtype=np.float64).copy()
        self._clamp_ee()
        self.ee.previous_position = self.ee.position.copy()

    def ee_mask(self) -> np.ndarray:
        return footprint_mask(self.rows, self.cols, self.cell_size,
                              self.ee.position[:2], self.ee.footprint)

    def ee_in_medium(self) -> bool:
        """True when the surface reaches the tool bottom under the footprint."""
        fp = self.ee_mask()
        if not fp.any():
            return False
        return bool(self.heights[fp].max() >= self.ee.position[2] - 1e-12)

    def apply_action(self, action) -> StepReport:
        """Move the tool by a normalized (dx, dy, dz) action, carving the bed.

        Components are clipped to [-1, 1] and scaled by max_step. The motion
        is split into substeps no longer than substep_fraction * cell_size;
        every substep displaces material and re-relaxes the bed.
        """
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (3,) or not np.all(np.isfinite(action)):
            raise ValueError("action must be 3 finite components")
        report = StepReport()
        start = self.ee.position.copy()
        delta = np.clip(action, -1.0, 1.0) * self.workspace.max_step
        ws = self.workspace
        target = np.array([
            min(max(start[0] + delta[0], 0.0), ws.extent[0]),
            min(max(start[1] + delta[1], 0.0), ws.extent[1]),
            min(max(start[2] + delta[2], ws.z_range[0]), ws.z_range[1]),
        ])
        if target[2] < start[2]:
            # pressing into compacted material stalls: one action can drive
            # the blade at most max_bite below the compacted surface it
            # currently stands on (the impedance limit of the arm)
            fp = footprint_mask(self.rows, self.cols, self.cell_size,
                                start[:2], self.ee.footprint)
            if fp.any():
                limit = float(self.floor[fp].min()) - self.max_bite
                target[2] = max(target[2], min(start[2], limit))
        seg = target - start
        dist = float(np.linalg.norm(seg))
        if dist > 0.0:
            motion_xy = (seg[0], seg[1])
            n_sub = max(1, math.ceil(dist / (ws.substep_fraction * self.cell_size)))
            for k in range(1, n_sub + 1):
                pos = start + seg * (k / n_sub)
                removed, compacted = displace_array(
                    self.heights, self.cell_size, self.ee, pos,
                    motion_xy=motion_xy, spread=self.deposit_spread,
                    loose_fraction=self.loose_fraction)
                report.displaced_volume += removed
                report.compacted_volume += compacted
                if removed > 0.0 or self._needs_settle:
                    fp = footprint_mask(self.rows, self.cols, self.cell_size,
                                        pos[:2], self.ee.footprint)
                    if removed > 0.0:
                        np.minimum(self.floor, np.where(fp, max(pos[2], 0.0), np.inf),
                                   out=self.floor)
                    # the tool body seals the cells it sits on: no backflow
                    occupied = fp & (self.heights >= pos[2] - 1e-12)
                    _, spilled = relax_array(self.heights, self.cell_size,
                                             self.repose, blocked=occupied,
                                             floor=self.floor)
                    # crumbled cut faces become the new compacted surface
                    np.minimum(self.floor, self.heights, out=self.floor)
                    report.spilled_volume += spilled
                    self._needs_settle = bool(occupied.any())
                    self.ever_changed |= (np.abs(self.heights - self.reference_heights)
                                          > self.changed_eps)
            report.substeps = n_sub
        self.ee.previous_position = start
        self.ee.position = target
        self.total_spilled += report.spilled_volume
        self.total_compacted += report.compacted_volume
        return report
