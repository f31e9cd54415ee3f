"""Episode orchestration: reset, step, observation assembly, termination.

The environment owns one world instance per episode, computes the reward
terms each step, and assembles the normalized observation (difference
height map, tool mask, goal mask, tool positions). The observed height map
comes either straight from the simulator (privileged) or through the
synthetic depth camera pipeline (reconstructed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .goals import GoalSpec
from .heightfield import HEIGHT_MAX, HeightMap, ReposeConfig
from .perception import (CameraConfig, ReconstructionState, default_camera,
                         reconstruct, render_depth)
from .rewards import (EpisodeRewardState, RewardConfig, combine_rewards,
                      d_hat, goal_area_distance, reward_delta,
                      reward_move, reward_progressive)
from .world import EndEffectorState, SandWorld, WorkspaceConfig

OBS_GRID = 32  # observation maps are padded to this size

OBSERVATION_MODES = ("privileged", "reconstructed")


@dataclass
class EnvConfig:
    rows: int = 32
    cols: int = 32
    cell_size: float = 0.01
    n_steps: int | None = 40          # None disables the episode cap
    h0: float = 0.06
    start_box_xy: float = 0.30        # xy span of the start cuboid, centered
    start_box_z: float = 0.05         # z span of the start cuboid
    start_clearance: float = 0.02     # cuboid bottom sits this far above the bed
    observation_mode: str = "privileged"
    footprint: tuple[float, float] = (0.02, 0.02)
    ee_length: float = 0.15
    changed_eps: float = 5e-4         # |h - h0| above this counts as a changed cell
    reward: RewardConfig = field(default_factory=RewardConfig)
    repose: ReposeConfig = field(default_factory=ReposeConfig)
    workspace: WorkspaceConfig | None = None
    camera: CameraConfig | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.rows > OBS_GRID or self.cols > OBS_GRID:
            raise ValueError(f"grid must be at most {OBS_GRID}x{OBS_GRID}")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValueError("n_steps must be >= 1 (or None)")
        if self.observation_mode not in OBSERVATION_MODES:
            raise ValueError(f"observation_mode must be one of {OBSERVATION_MODES}")
        if self.workspace is None:
            self.workspace = WorkspaceConfig(
                extent=(self.cols * self.cell_size, self.rows * self.cell_size))
        if self.camera is None and self.observation_mode == "reconstructed":
            self.camera = default_camera(extent=self.workspace.extent,
                                         bed_height=self.h0)


@dataclass
class Observation:
    ee_current: np.ndarray    # normalized to [-1, 1]
    ee_previous: np.ndarray
    diff_map: np.ndarray      # (OBS_GRID, OBS_GRID), (goal - current)/HEIGHT_MAX
    ee_mask: np.ndarray       # boolean
    goal_mask: np.ndarray     # boolean

    def as_dict(self) -> dict:
        return {"ee_current": self.ee_current, "ee_previous": self.ee_previous,
                "diff_map": self.diff_map, "ee_mask": self.ee_mask,
                "goal_mask": self.goal_mask}


def _pad_to_obs(grid: np.ndarray, fill=0) -> np.ndarray:
    """Center-pad a map to the OBS_GRID size (outer cells get `fill`)."""
    rows, cols = grid.shape
    if rows == OBS_GRID and cols == OBS_GRID:
        return grid
    out = np.full((OBS_GRID, OBS_GRID), fill, dtype=grid.dtype)
    r0 = (OBS_GRID - rows) // 2
    c0 = (OBS_GRID - cols) // 2
    out[r0:r0 + rows, c0:c0 + cols] = grid
    return out


class SandShapingEnv:
    """Gym-style sand shaping environment: reset(seed, goal_id) / step(action)."""

    def __init__(self, config: EnvConfig | None = None,
                 goals: list[GoalSpec] | None = None):
        self.config = config or EnvConfig()
        self.goal_library = list(goals) if goals else []
        self._rng = np.random.default_rng(self.config.seed)
        self.world: SandWorld | None = None
        self.goal: GoalSpec | None = None
        self.reward_state: EpisodeRewardState | None = None
        self.recon_state: ReconstructionState | None = None
        self._t = 0
        self._done = False

    # -- gym-style surface ---------------------------------------------------

    def spaces(self) -> dict:
        return {
            "action": {"shape": (3,), "low": -1.0, "high": 1.0},
            "observation": {
                "ee_current": {"shape": (3,), "low": -1.0, "high": 1.0},
                "ee_previous": {"shape": (3,), "low": -1.0, "high": 1.0},
                "diff_map": {"shape": (OBS_GRID, OBS_GRID), "low": -1.0, "high": 1.0},
                "ee_mask": {"shape": (OBS_GRID, OBS_GRID), "dtype": "bool"},
                "goal_mask": {"shape": (OBS_GRID, OBS_GRID), "dtype": "bool"},
            },
        }

    def reset(self, seed: int | None = None, goal_id: str | None = None,
              goal: GoalSpec | None = None) -> Observation:
        cfg = self.config
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if goal is None:
            goal = self._pick_goal(goal_id)
        if goal.goal_map.rows != cfg.rows or goal.goal_map.cols != cfg.cols:
            raise ValueError("goal grid does not match the environment grid")
        self.goal = goal

        extent = cfg.workspace.extent
        half_xy = cfg.start_box_xy / 2.0
        z_lo = cfg.h0 + cfg.start_clearance
        start = np.array([
            self._rng.uniform(extent[0] / 2.0 - half_xy, extent[0] / 2.0 + half_xy),
            self._rng.uniform(extent[1] / 2.0 - half_xy, extent[1] / 2.0 + half_xy),
            self._rng.uniform(z_lo, z_lo + cfg.start_box_z),
        ])
        ee = EndEffectorState(position=start, previous_position=start,
                              footprint=cfg.footprint, length=cfg.ee_length)
        self.world = SandWorld(HeightMap.flat(cfg.rows, cfg.cols, cfg.h0, cfg.cell_size),
                               ee, workspace=cfg.workspace, repose=cfg.repose,
                               changed_eps=cfg.changed_eps)
        self.recon_state = ReconstructionState.flat(cfg.rows, cfg.cols, cfg.h0,
                                                    cfg.cell_size)
        obs_heights, _ = self._observed_heights()
        d0 = d_hat(obs_heights, goal, "goal_area")
        d0_out = d_hat(obs_heights, goal, "outside")
        self.reward_state = EpisodeRewardState.initial(d0, d0_out)
        self._t = 0
        self._done = False
        return self._build_observation(obs_heights)

    def step(self, action) -> tuple[Observation, float, bool, dict]:
        if self.world is None:
            raise RuntimeError("call reset before step")
        if self._done:
            raise RuntimeError("episode is done; call reset")
        cfg = self.config
        report = self.world.apply_action(action)
        obs_heights, recon_error = self._observed_heights()

        d_now = d_hat(obs_heights, self.goal, "goal_area")
        d_out_now = d_hat(obs_heights, self.goal, "outside")
        r_move = reward_move(self.world.ee, self.goal, cfg.reward)
        r_delta = reward_delta(self.reward_state, d_now, cfg.reward)
        r_prog = reward_progressive(self.reward_state, d_now, d_out_now, cfg.reward)
        total = combine_rewards(r_move, r_delta, r_prog, cfg.reward)

        self._t += 1
        if cfg.n_steps is not None and self._t >= cfg.n_steps:
            self._done = True

        priv = self.world.heights
        mask = self.goal.goal_mask
        # cumulative over the episode: a cell counts once the tool has ever
        # changed it, even if avalanches later level it again
        changed = self.world.ever_changed[mask]
        d_m, reached = goal_area_distance(self.world.ee, self.goal)
        info = {
            "t": self._t,
            "r_move": r_move,
            "r_delta": r_delta,
            "r_prog": r_prog,
            "reward": total,
            "d_hat": d_now,
            "d_hat_out": d_out_now,
            "d_hat_priv": d_hat(priv, self.goal, "goal_area"),
            "d_m": d_m,
            "reached": reached,
            "changed_pct": 100.0 * float(changed.sum()) / float(mask.sum()),
            "in_medium": self.world.ee_in_medium(),
            "displaced_volume": report.displaced_volume,
            "spilled_volume": report.spilled_volume,
            "substeps": report.substeps,
            "ee_position": self.world.ee.position.copy(),
            "ee_previous": self.world.ee.previous_position.copy(),
        }
        if recon_error is not None:
            info["recon_error"] = recon_error
        return self._build_observation(obs_heights), total, self._done, info

    # -- internals -------------------------------------------------------------

    def _pick_goal(self, goal_id: str | None) -> GoalSpec:
        if not self.goal_library:
            raise ValueError("no goal library configured; pass goal= to reset")
        if goal_id is not None:
            for g in self.goal_library:
                if g.id == goal_id:
                    return g
            raise KeyError(f"goal id {goal_id!r} not in the library")
        return self.goal_library[self._rng.integers(len(self.goal_library))]

    def _observed_heights(self) -> tuple[np.ndarray, float | None]:
        """Current height map per observation mode, plus reconstruction error."""
        priv = self.world.heights
        if self.config.observation_mode == "privileged":
            return priv, None
        img = render_depth(self.world.height_map(), self.world.ee, self.config.camera,
                           noise_std=self.recon_state.noise_std, rng=self._rng)
        rec = reconstruct(img, self.recon_state, self.world.ee)
        err = float(np.abs(rec.heights - priv).mean())
        return rec.heights, err

    def _build_observation(self, obs_heights: np.ndarray) -> Observation:
        cfg = self.config
        extent = cfg.workspace.extent
        ee = self.world.ee

        def norm_pos(p):
            return np.array([
                (p[0] - extent[0] / 2.0) / (extent[0] / 2.0),
                (p[1] - extent[1] / 2.0) / (extent[1] / 2.0),
                (p[2] - HEIGHT_MAX / 2.0) / (HEIGHT_MAX / 2.0),
            ])

        diff = (self.goal.goal_map.heights - obs_heights) / HEIGHT_MAX
        diff = np.clip(diff, -1.0, 1.0)
        return Observation(
            ee_current=norm_pos(ee.position),
            ee_previous=norm_pos(ee.previous_position),
            diff_map=_pad_to_obs(diff, 0.0),
            ee_mask=_pad_to_obs(self.world.ee_mask(), False),
            goal_mask=_pad_to_obs(self.goal.goal_mask, False),
        )
