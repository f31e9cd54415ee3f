"""Reward terms: shaping rewards on the height-map distance, movement reward.

The distance d_hat is the mean absolute difference between goal and current
heights with the current map truncated at the initial bed height h0, so
piled-up material never counts (goals are negative imprints only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .goals import GoalSpec
from .world import EndEffectorState, footprint_mask

SHAPING_VARIANTS = ("delta", "progressive", "none")


@dataclass
class RewardConfig:
    alpha_c: float = 5000.0       # shaping scale on d_hat reductions
    alpha_f: float = 1000.0       # scale of the outside-area term (progressive)
    alpha_m: float = 10.0         # steepness of the movement penalty
    shaping_variant: str = "delta"
    include_move: bool = True     # False gives the movement-term-removed ablation
    prog_penalty_sign: str = "printed"  # or "prose", see reward_progressive

    def __post_init__(self):
        if self.alpha_c <= 0 or self.alpha_f <= 0 or self.alpha_m <= 0:
            raise ValueError("all reward scales must be positive")
        if self.shaping_variant not in SHAPING_VARIANTS:
            raise ValueError(f"shaping_variant must be one of {SHAPING_VARIANTS}")
        if self.prog_penalty_sign not in ("printed", "prose"):
            raise ValueError("prog_penalty_sign must be 'printed' or 'prose'")


@dataclass
class EpisodeRewardState:
    """Running distances of the episode: previous, best, and worst-outside."""

    d_hat_prev: float
    d_hat_closest: float
    d_hat_out_furthest: float

    @classmethod
    def initial(cls, d_hat_0: float, d_hat_out_0: float) -> "EpisodeRewardState":
        return cls(d_hat_prev=d_hat_0, d_hat_closest=d_hat_0,
                   d_hat_out_furthest=d_hat_out_0)


def d_hat(current, goal: GoalSpec, region: str = "goal_area") -> float:
    """Mean |h_goal - min(h0, h_current)| over the selected cell region."""
    h = current.heights if hasattr(current, "heights") else np.asarray(current)
    if h.shape != goal.goal_map.heights.shape:
        raise ValueError("current map shape does not match the goal grid")
    if region == "goal_area":
        sel = goal.goal_mask
    elif region == "outside":
        sel = ~goal.goal_mask
    elif region == "all":
        sel = np.ones_like(goal.goal_mask)
    else:
        raise ValueError(f"unknown region {region!r}")
    n = int(sel.sum())
    if n == 0:
        raise ValueError(f"region {region!r} contains no cells")
    truncated = np.minimum(h[sel], goal.h0)
    return float(np.abs(goal.goal_map.heights[sel] - truncated).sum()) / n


def reward_delta(state: EpisodeRewardState, d_hat_now: float,
                 cfg: RewardConfig) -> float:
    """Reward proportional to the one-step reduction of d_hat; updates prev."""
    r = cfg.alpha_c * (state.d_hat_prev - d_hat_now)
    state.d_hat_prev = d_hat_now
    return r


def reward_progressive(state: EpisodeRewardState, d_hat_now: float,
                       d_hat_out_now: float, cfg: RewardConfig) -> float:
    """Reward for new per-episode best d_hat, plus an outside-area term.

    The outside term follows the printed formula
    -alpha_f * min(d_out - d_out_furthest, 0), which pays when the outside
    area improves below its running worst; prog_penalty_sign='prose' selects
    the prose-consistent variant -alpha_f * max(d_out - d_out_furthest, 0)
    that penalizes new outside-area damage instead.
    """
    gain = cfg.alpha_c * max(state.d_hat_closest - d_hat_now, 0.0)
    diff_out = d_hat_out_now - state.d_hat_out_furthest
    if cfg.prog_penalty_sign == "printed":
        outside = -cfg.alpha_f * min(diff_out, 0.0)
    else:
        outside = -cfg.alpha_f * max(diff_out, 0.0)
    state.d_hat_closest = min(state.d_hat_closest, d_hat_now)
    state.d_hat_out_furthest = max(state.d_hat_out_furthest, d_hat_out_now)
    return gain + outside


def goal_area_distance(ee: EndEffectorState, goal: GoalSpec) -> tuple[float, bool]:
    """(min 3D distance from tool bottom-center to goal-area points, reached).

    Goal-area points are the centers of mask-true cells at their goal height.
    Reached means the footprint overlaps a mask-true cell, in which case the
    distance is defined as zero.
    """
    grid = goal.goal_map
    fp = footprint_mask(grid.rows, grid.cols, grid.cell_size,
                        ee.position[:2], ee.footprint)
    if bool((fp & goal.goal_mask).any()):
        return 0.0, True
    rs, cs = np.nonzero(goal.goal_mask)
    if rs.size == 0:
        raise ValueError("goal mask is empty")
    px = (cs + 0.5) * grid.cell_size
    py = (rs + 0.5) * grid.cell_size
    pz = grid.heights[rs, cs]
    d2 = ((px - ee.position[0]) ** 2 + (py - ee.position[1]) ** 2
          + (pz - ee.position[2]) ** 2)
    return float(math.sqrt(d2.min())), False


def reward_move(ee: EndEffectorState, goal: GoalSpec, cfg: RewardConfig) -> float:
    """-tanh(alpha_m * d_m) plus a binary bonus once the goal area is reached."""
    d_m, reached = goal_area_distance(ee, goal)
    return -math.tanh(cfg.alpha_m * d_m) + (1.0 if reached else 0.0)


def reward_total(move_r: float, shaping_r: float) -> float:
    """Total step reward: movement term plus the selected shaping term."""
    return move_r + shaping_r


def combine_rewards(move_r: float, delta_r: float, prog_r: float,
                    cfg: RewardConfig) -> float:
    """Assemble the configured total from the per-term values."""
    if cfg.shaping_variant == "delta":
        shaping = delta_r
    elif cfg.shaping_variant == "progressive":
        shaping = prog_r
    else:
        shaping = 0.0
    return reward_total(move_r if cfg.include_move else 0.0, shaping)
