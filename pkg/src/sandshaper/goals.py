"""Procedural goal shapes: negative imprints pressed into a flat bed.

Goals are height maps equal to the initial bed height h0 everywhere except
an 8-connected goal area of lowered cells. Three families are provided:
axis-aligned rectangles, L-shapes (two overlapping bars sharing a corner),
and star-convex polygons (optionally terraced to two depth levels).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .heightfield import HeightMap, load_ghm, save_ghm

FAMILIES = ("rectangle", "l_shape", "polygon")

MAX_EXTENT_M = 0.10   # goal-area bounding box limit per side
MAX_DEPTH_M = 0.03    # hard validity bound on any imprint
MIN_DEPTH_MM = 5
MAX_DEPTH_MM = 15     # base imprint depth range; terraces go deeper
MAX_ATTEMPTS = 100


class GoalGenerationError(RuntimeError):
    pass


def connected_regions(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 8-connected regions of a boolean mask; returns (labels, count).

    Labels are 0 for background and 1..count for regions, in scan order.
    """
    labels = np.zeros(mask.shape, dtype=np.int32)
    rows, cols = mask.shape
    count = 0
    for r0 in range(rows):
        for c0 in range(cols):
            if mask[r0, c0] and labels[r0, c0] == 0:
                count += 1
                queue = deque([(r0, c0)])
                labels[r0, c0] = count
                while queue:
                    r, c = queue.popleft()
                    for dr in (-1, 0, 1):
                        for dc in (-1, 0, 1):
                            rr, cc = r + dr, c + dc
                            if (0 <= rr < rows and 0 <= cc < cols
                                    and mask[rr, cc] and labels[rr, cc] == 0):
                                labels[rr, cc] = count
                                queue.append((rr, cc))
    return labels, count


def single_stroke_achievable(mask: np.ndarray, depths: np.ndarray,
                             footprint_cells: int = 2) -> bool:
    """True when the mask is one straight run of the tool footprint.

    That is: the mask fills its own bounding box, the box is no wider than
    the footprint along one axis, and the imprint depth is constant.
    """
    rs, cs = np.nonzero(mask)
    if rs.size == 0:
        return False
    height = rs.max() - rs.min() + 1
    width = cs.max() - cs.min() + 1
    if int(mask.sum()) != height * width:
        return False
    if min(height, width) > footprint_cells:
        return False
    vals = depths[mask]
    return bool(np.all(vals == vals[0]))


@dataclass
class GoalSpec:
    goal_map: HeightMap
    goal_mask: np.ndarray
    family: str
    id: str
    h0: float = 0.06
    seed: int | None = None

    def depths(self) -> np.ndarray:
        """Imprint depth per cell (h0 - goal height), zero outside the mask."""
        return self.h0 - self.goal_map.heights

    def validate(self, footprint_cells: int = 2) -> None:
        self.goal_map.validate()
        h = self.goal_map.heights
        if self.goal_mask.shape != h.shape:
            raise ValueError("mask shape does not match the goal map")
        if not np.array_equal(self.goal_mask, h != self.h0):
            raise ValueError("mask inconsistent: mask must mark exactly the cells unequal to h0")
        if not self.goal_mask.any():
            raise ValueError("goal mask is empty")
        if h.max() > self.h0:
            raise ValueError("goal heights must not exceed the initial bed height")
        if (self.h0 - h[self.goal_mask]).max() > MAX_DEPTH_M + 1e-12:
            raise ValueError(f"imprint depth exceeds {MAX_DEPTH_M} m")
        rs, cs = np.nonzero(self.goal_mask)
        box_cells = int(round(MAX_EXTENT_M / self.goal_map.cell_size))
        if rs.max() - rs.min() + 1 > box_cells or cs.max() - cs.min() + 1 > box_cells:
            raise ValueError(f"goal bounding box exceeds {MAX_EXTENT_M} m per side")
        _, n_regions = connected_regions(self.goal_mask)
        if n_regions != 1:
            raise ValueError("goal mask must be 8-connected")
        if single_stroke_achievable(self.goal_mask, self.depths(), footprint_cells):
            raise ValueError("goal is achievable by a single straight stroke")


def _depth_m(depth_mm: int, h0: float) -> float:
    # go through the cm representation so saved files reparse bit-identically
    return (h0 * 100.0 - depth_mm / 10.0) * 0.01


def _sample_depth_mm(rng) -> int:
    # bas-relief-scale imprints; terraced polygons stack a second level on top
    return int(rng.integers(MIN_DEPTH_MM, MAX_DEPTH_MM + 1))


def _sample_rectangle(rng, rows, cols, box_cells):
    side_max = min(box_cells, rows, cols)
    if side_max < 3:
        return None, None
    w = int(rng.integers(3, side_max + 1))
    h = int(rng.integers(3, side_max + 1))
    r0 = int(rng.integers(0, rows - h + 1))
    c0 = int(rng.integers(0, cols - w + 1))
    mask = np.zeros((rows, cols), dtype=bool)
    mask[r0:r0 + h, c0:c0 + w] = True
    return mask, None


def _sample_l_shape(rng, rows, cols, box_cells):
    box = min(box_cells, rows, cols)
    if box < 4:
        return None, None
    arm_x = int(rng.integers(4, box + 1))       # horizontal bar length
    arm_y = int(rng.integers(4, box + 1))       # vertical bar length
    t_x = int(rng.integers(2, max(3, arm_y - 1)))   # horizontal bar thickness
    t_y = int(rng.integers(2, max(3, arm_x - 1)))   # vertical bar thickness
    if t_x >= arm_y or t_y >= arm_x:
        return None, None
    shape = np.zeros((arm_y, arm_x), dtype=bool)
    shape[:t_x, :] = True
    shape[:, :t_y] = True
    shape = np.rot90(shape, k=int(rng.integers(0, 4)))
    sh, sw = shape.shape
    if sh > rows or sw > cols:
        return None, None
    r0 = int(rng.integers(0, rows - sh + 1))
    c0 = int(rng.integers(0, cols - sw + 1))
    mask = np.zeros((rows, cols), dtype=bool)
    mask[r0:r0 + sh, c0:c0 + sw] = shape
    return mask, None


def _sample_polygon(rng, rows, cols, box_cells):
    radius_max = min(5.0, box_cells / 2.0, (min(rows, cols) - 1) / 2.0)
    if radius_max <= 1.5:
        return None, None
    n_vert = int(rng.integers(5, 9))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n_vert))
    radii = rng.uniform(1.5, radius_max, n_vert)
    center_r = rng.uniform(radius_max, rows - radius_max)
    center_c = rng.uniform(radius_max, cols - radius_max)
    verts_r = center_r + radii * np.sin(angles)
    verts_c = center_c + radii * np.cos(angles)

    rr, cc = np.meshgrid(np.arange(rows) + 0.5, np.arange(cols) + 0.5, indexing="ij")
    inside = np.zeros((rows, cols), dtype=bool)
    # even-odd rule over cell centers
    j = n_vert - 1
    for i in range(n_vert):
        cond = (verts_r[i] > rr) != (verts_r[j] > rr)
        denom = verts_r[j] - verts_r[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = verts_c[i] + (rr - verts_r[i]) / denom * (verts_c[j] - verts_c[i])
        inside ^= cond & (cc < x_cross)
        j = i

    terrace = None
    if rng.uniform() < 0.3:
        # inner half-scale copy of the polygon, one extra depth level
        in_r = center_r + 0.5 * radii * np.sin(angles)
        in_c = center_c + 0.5 * radii * np.cos(angles)
        terrace = np.zeros((rows, cols), dtype=bool)
        j = n_vert - 1
        for i in range(n_vert):
            cond = (in_r[i] > rr) != (in_r[j] > rr)
            denom = in_r[j] - in_r[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = in_c[i] + (rr - in_r[i]) / denom * (in_c[j] - in_c[i])
            terrace ^= cond & (cc < x_cross)
            j = i
        terrace &= inside
        if not terrace.any():
            terrace = None
    return inside, terrace


_SAMPLERS = {
    "rectangle": _sample_rectangle,
    "l_shape": _sample_l_shape,
    "polygon": _sample_polygon,
}


def gen_goal(family: str, seed, rows: int = 32, cols: int = 32,
             cell_size: float = 0.01, h0: float = 0.06,
             footprint_cells: int = 2, goal_id: str | None = None) -> GoalSpec:
    """Sample one valid goal of the given family, deterministic in the seed."""
    if family not in _SAMPLERS:
        raise ValueError(f"unknown goal family {family!r}, expected one of {FAMILIES}")
    rng = np.random.default_rng(seed)
    box_cells = int(round(MAX_EXTENT_M / cell_size))
    sampler = _SAMPLERS[family]
    for _ in range(MAX_ATTEMPTS):
        mask, terrace = sampler(rng, rows, cols, box_cells)
        if mask is None or not mask.any():
            continue
        depth_mm = _sample_depth_mm(rng)
        heights = np.full((rows, cols), h0, dtype=np.float64)
        heights[mask] = _depth_m(depth_mm, h0)
        if terrace is not None:
            extra_mm = int(rng.integers(3, 9))
            heights[terrace] = _depth_m(depth_mm + extra_mm, h0)
        spec = GoalSpec(
            goal_map=HeightMap(heights, cell_size),
            goal_mask=mask,
            family=family,
            id=goal_id or f"{family}-{seed}",
            h0=h0,
            seed=seed if isinstance(seed, int) else None,
        )
        try:
            spec.validate(footprint_cells)
        except ValueError:
            continue
        return spec
    raise GoalGenerationError(
        f"no valid {family} goal found in {MAX_ATTEMPTS} attempts (seed {seed})")


def save_goal(spec: GoalSpec, path) -> None:
    sidecar = f"family={spec.family} seed={spec.seed} cells={int(spec.goal_mask.sum())}"
    save_ghm(path, spec.goal_map, spec.h0, comments=(sidecar,))


def load_goal(path) -> GoalSpec:
    path = Path(path)
    hmap, h0, comments = load_ghm(path)
    meta = {}
    for comment in comments:
        for token in comment.split():
            if "=" in token:
                key, _, value = token.partition("=")
                meta[key] = value
    if "family" not in meta:
        raise ValueError(f"{path.name}: missing 'family=' sidecar metadata line")
    mask = hmap.heights != h0
    if "cells" in meta and int(meta["cells"]) != int(mask.sum()):
        raise ValueError(
            f"{path.name}: mask inconsistent: sidecar says {meta['cells']} goal cells, "
            f"map has {int(mask.sum())}")
    seed = None
    if meta.get("seed", "None") != "None":
        seed = int(meta["seed"])
    spec = GoalSpec(goal_map=hmap, goal_mask=mask, family=meta["family"],
                    id=path.stem, h0=h0, seed=seed)
    spec.validate()
    return spec
