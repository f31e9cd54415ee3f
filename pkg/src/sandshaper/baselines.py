"""Training-free controllers: random actions and boustrophedon coverage.

The coverage planner flood-fills the goal mask into regions, orders the
regions by a greedy nearest-neighbor tour over their centroids, and sweeps
each region with serpentine lines spaced by the tool footprint, extracting
the target depth per visited grid coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import SandShapingEnv
from .goals import GoalSpec, connected_regions

_MAX_MOVE_STEPS = 2000  # safety bound for waypoint convergence


@dataclass
class WaypointPlan:
    waypoints: np.ndarray          # (N, 3) world coordinates, z = target depth
    region_starts: list[int]       # index into waypoints where each region begins
    region_count: int
    sweep_spacing_cells: int

    def region_slices(self):
        bounds = self.region_starts + [len(self.waypoints)]
        return [slice(bounds[i], bounds[i + 1]) for i in range(self.region_count)]


def _greedy_tour(points: np.ndarray, start_xy) -> list[int]:
    """Visit order by repeatedly taking the nearest unvisited point."""
    order = []
    remaining = list(range(len(points)))
    cur = np.asarray(start_xy, dtype=np.float64)
    while remaining:
        dists = [float(np.hypot(points[i][0] - cur[0], points[i][1] - cur[1]))
                 for i in remaining]
        nxt = remaining[int(np.argmin(dists))]
        order.append(nxt)
        remaining.remove(nxt)
        cur = points[nxt]
    return order


def plan_bcpp(goal: GoalSpec, footprint: tuple[float, float],
              ee_start_xy=(0.16, 0.16), overrun_cells: int = 3) -> WaypointPlan:
    """Boustrophedon coverage plan over the goal mask.

    Sweep lines run along the longer side of each region's bounding box and
    are spaced by the footprint width rounded to whole cells; the waypoint
    depth is the deepest goal height under the tool at that coordinate (the
    bed height where no goal cell is covered). Lines overrun the region by a
    few cells so the bow wave gets pushed out of the goal area instead of
    being left on it.
    """
    mask = goal.goal_mask
    if not mask.any():
        raise ValueError("goal mask is empty")
    cell = goal.goal_map.cell_size
    heights = goal.goal_map.heights
    w_cells = max(1, round(footprint[0] / cell))

    labels, n_regions = connected_regions(mask)
    centroids = []
    for region in range(1, n_regions + 1):
        rs, cs = np.nonzero(labels == region)
        centroids.append(((cs.mean() + 0.5) * cell, (rs.mean() + 0.5) * cell))
    order = _greedy_tour(np.array(centroids), ee_start_xy)

    waypoints: list[tuple[float, float, float]] = []
    region_starts: list[int] = []
    for region in order:
        region_mask = labels == region + 1
        region_starts.append(len(waypoints))
        waypoints.extend(_sweep_region(region_mask, heights, goal.h0, cell,
                                       w_cells, overrun_cells))
    return WaypointPlan(waypoints=np.array(waypoints, dtype=np.float64),
                        region_starts=region_starts,
                        region_count=n_regions,
                        sweep_spacing_cells=w_cells)


def _sweep_region(region_mask: np.ndarray, heights: np.ndarray, h0: float,
                  cell: float, w_cells: int,
                  overrun: int) -> list[tuple[float, float, float]]:
    rs, cs = np.nonzero(region_mask)
    r_min, r_max = int(rs.min()), int(rs.max())
    c_min, c_max = int(cs.min()), int(cs.max())
    box_h, box_w = r_max - r_min + 1, c_max - c_min + 1

    # sweep along the longer side: fewer line turns
    transpose = box_h > box_w
    if transpose:
        region_mask = region_mask.T
        heights = heights.T
        r_min, c_min = c_min, r_min
        r_max, c_max = c_max, r_max

    lines = list(range(r_min, r_max - w_cells + 2, w_cells))
    if lines and lines[-1] < r_max - w_cells + 1:
        lines.append(r_max - w_cells + 1)
    if not lines:  # region thinner than the footprint
        lines = [max(r_max - w_cells + 1, 0)]

    rows_n, cols_n = region_mask.shape
    out: list[tuple[float, float, float]] = []
    for pass_idx, r in enumerate(lines):
        r_hi = min(r + w_cells, rows_n)
        line_cols = np.nonzero(region_mask[r:r_hi, :].any(axis=0))[0]
        lo = max(int(line_cols.min()) - overrun, 1 - w_cells)
        hi = min(int(line_cols.max()) + overrun, cols_n - 1)
        cols_here = []
        for c in range(lo, hi + 1):
            c0, c_hi = max(c, 0), min(c + w_cells, cols_n)
            covered = region_mask[r:r_hi, c0:c_hi]
            z = float(heights[r:r_hi, c0:c_hi][covered].min()) if covered.any() else h0
            cols_here.append((c, z))
        if pass_idx % 2 == 1:
            cols_here.reverse()
        for c, z in cols_here:
            y = (r + w_cells / 2.0) * cell
            x = (c + w_cells / 2.0) * cell
            if transpose:
                x, y = y, x
            out.append((x, y, z))
    return out


@dataclass
class EpisodeTrace:
    """Per-step rows collected while driving an environment."""

    rows: list[dict] = field(default_factory=list)

    def record(self, info: dict, action) -> None:
        row = dict(info)
        row["action"] = np.asarray(action, dtype=np.float64).copy()
        self.rows.append(row)

    @property
    def steps(self) -> int:
        return len(self.rows)

    def in_medium_flags(self) -> list[bool]:
        return [bool(r["in_medium"]) for r in self.rows]

    def to_csv(self) -> str:
        """Episode log: step, action, reward terms, distances, tool pose."""
        lines = ["step,ax,ay,az,r_move,r_delta,r_prog,reward,d_hat,d_hat_out,"
                 "changed_pct,in_medium,displaced_m3,spilled_m3,ee_x,ee_y,ee_z"]
        for r in self.rows:
            a = r["action"]
            p = r["ee_position"]
            lines.append(
                f"{r['t']},{a[0]:.6f},{a[1]:.6f},{a[2]:.6f},"
                f"{r['r_move']:.6f},{r['r_delta']:.6f},{r['r_prog']:.6f},"
                f"{r['reward']:.6f},{r['d_hat']:.9f},{r['d_hat_out']:.9f},"
                f"{r['changed_pct']:.6f},{int(r['in_medium'])},"
                f"{r['displaced_volume']:.9e},{r['spilled_volume']:.9e},"
                f"{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}")
        return "\n".join(lines) + "\n"


def run_random_episode(env: SandShapingEnv, goal: GoalSpec, seed: int) -> EpisodeTrace:
    """RAND baseline: teleport onto a random goal cell, act uniformly at random."""
    if not goal.goal_mask.any():
        raise ValueError("goal mask is empty")
    env.reset(seed=seed, goal=goal)
    rng = np.random.default_rng([seed, 1])
    rs, cs = np.nonzero(goal.goal_mask)
    pick = int(rng.integers(rs.size))
    cell = goal.goal_map.cell_size
    start = ((cs[pick] + 0.5) * cell, (rs[pick] + 0.5) * cell, env.config.h0)
    env.world.teleport(start)

    trace = EpisodeTrace()
    done = False
    while not done:
        action = rng.uniform(-1.0, 1.0, 3)
        _, _, done, info = env.step(action)
        trace.record(info, action)
    return trace


def execute_plan(env: SandShapingEnv, plan: WaypointPlan,
                 transit_clearance: float = 0.02) -> EpisodeTrace:
    """Drive the tool through the plan; returns the step trace.

    Motions longer than the action limit are split into several steps, all
    counted. Between regions (and on the initial approach) the tool lifts to
    h0 + transit_clearance, moves above the next region's first waypoint,
    then descends to its depth.
    """
    if env.world is None:
        raise RuntimeError("reset the environment before executing a plan")
    if env.config.n_steps is not None:
        raise ValueError("baseline execution needs the episode cap disabled "
                         "(EnvConfig.n_steps=None)")
    trace = EpisodeTrace()
    transit_z = env.config.h0 + transit_clearance

    def move_to(target):
        target = np.asarray(target, dtype=np.float64)
        max_step = env.config.workspace.max_step
        for _ in range(_MAX_MOVE_STEPS):
            delta = target - env.world.ee.position
            if np.abs(delta).max() <= 1e-9:
                return
            action = np.clip(delta / max_step, -1.0, 1.0)
            _, _, _, info = env.step(action)
            trace.record(info, action)
        raise RuntimeError(f"waypoint {target} not reached in {_MAX_MOVE_STEPS} steps")

    for sl in plan.region_slices():
        pts = plan.waypoints[sl]
        if len(pts) == 0:
            continue
        here = env.world.ee.position.copy()
        lift_z = max(transit_z, here[2])
        move_to((here[0], here[1], lift_z))
        move_to((pts[0][0], pts[0][1], lift_z))
        for wp in pts:
            move_to(wp)
    return trace


def run_bcpp_episode(env: SandShapingEnv, goal: GoalSpec, seed: int) -> EpisodeTrace:
    """B-CPP baseline: plan from the reset pose, then execute to completion."""
    env.reset(seed=seed, goal=goal)
    plan = plan_bcpp(goal, env.config.footprint, ee_start_xy=env.world.ee.position[:2])
    return execute_plan(env, plan)
