"""Height-map sand shaping: simulation, environment, baselines, evaluation."""

__version__ = "0.1.0"

from .baselines import WaypointPlan, execute_plan, plan_bcpp, run_bcpp_episode, run_random_episode
from .env import EnvConfig, Observation, SandShapingEnv
from .evaluation import (mann_whitney_u, metric_changed, metric_execution,
                         metric_height_diff, run_benchmark)
from .goals import FAMILIES, GoalSpec, gen_goal, load_goal, save_goal
from .heightfield import (HEIGHT_MAX, HeightMap, ReposeConfig, load_ghm,
                          max_slope_violation, relax, save_ghm, volume)
from .perception import (CameraConfig, DepthImage, ReconstructionState,
                         default_camera, reconstruct, render_depth)
from .rewards import (EpisodeRewardState, RewardConfig, d_hat, reward_delta,
                      reward_move, reward_progressive, reward_total)
from .world import EndEffectorState, SandWorld, WorkspaceConfig, displace, footprint_mask
