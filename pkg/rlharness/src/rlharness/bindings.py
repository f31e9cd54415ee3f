"""Bindings exposing the core environment's gym-style API to the trainer.

A binding is a thin pass-through: observations arrive as a dict of the raw
maps and scalar vectors exactly as the core produced them (bit-exact), and
actions are validated before they reach the core. A vectorized handle owns
N independent environments stepped in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import sandshaper
from sandshaper import EnvConfig, GoalSpec, SandShapingEnv, gen_goal

CORE_COMPAT = (0, 1)  # sandshaper major.minor this binding was built against


class BindingVersionError(ImportError):
    pass


def require_core() -> None:
    parts = sandshaper.__version__.split(".")
    found = (int(parts[0]), int(parts[1]))
    if found != CORE_COMPAT:
        raise BindingVersionError(
            f"binding built against sandshaper {CORE_COMPAT[0]}.{CORE_COMPAT[1]}.x, "
            f"found {sandshaper.__version__}")


require_core()


@dataclass
class BindingConfig:
    rows: int = 32
    cols: int = 32
    n_steps: int = 40
    families: tuple[str, ...] = ("rectangle",)
    n_goals: int = 40
    goal_seed: int = 0
    shaping_variant: str = "delta"
    observation_mode: str = "privileged"
    n_envs: int = 1
    seed: int = 0


def _make_goals(cfg: BindingConfig) -> list[GoalSpec]:
    goals = []
    for i in range(cfg.n_goals):
        fam = cfg.families[i % len(cfg.families)]
        goals.append(gen_goal(fam, seed=[cfg.goal_seed, i], rows=cfg.rows,
                              cols=cfg.cols, goal_id=f"{fam}-{i:04d}"))
    return goals


def obs_to_dict(obs) -> dict:
    """Raw maps plus the 6 scalar tool coordinates, values untouched."""
    return {
        "scalars": np.concatenate([obs.ee_current, obs.ee_previous]),
        "diff_map": obs.diff_map,
        "ee_mask": obs.ee_mask,
        "goal_mask": obs.goal_mask,
    }


class EnvBinding:
    """One core environment behind the dict-observation surface."""

    def __init__(self, cfg: BindingConfig, goals: list[GoalSpec] | None = None):
        from sandshaper.rewards import RewardConfig
        self.cfg = cfg
        self.goals = goals if goals is not None else _make_goals(cfg)
        self.env = SandShapingEnv(
            EnvConfig(rows=cfg.rows, cols=cfg.cols, n_steps=cfg.n_steps,
                      observation_mode=cfg.observation_mode,
                      reward=RewardConfig(shaping_variant=cfg.shaping_variant),
                      seed=cfg.seed),
            goals=self.goals)

    def spaces(self) -> dict:
        return self.env.spaces()

    def reset(self, seed: int | None = None, goal_id: str | None = None) -> dict:
        return obs_to_dict(self.env.reset(seed=seed, goal_id=goal_id))

    def step(self, action) -> tuple[dict, float, bool, dict]:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (3,):
            raise ValueError(f"action must have shape (3,), got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise ValueError("action must be finite")
        obs, reward, done, info = self.env.step(action)
        return obs_to_dict(obs), reward, done, info


class VecEnvHandle:
    """N independent environments stepped together, with auto-reset.

    Each environment draws its episode seeds from its own deterministic
    stream, so a vectorized run reproduces the matching single-env runs.
    """

    def __init__(self, cfg: BindingConfig):
        self.cfg = cfg
        goals = _make_goals(cfg)
        self.envs = [EnvBinding(cfg, goals) for _ in range(cfg.n_envs)]
        self._episode_seeds = [
            np.random.default_rng([cfg.seed, rank]) for rank in range(cfg.n_envs)]
        self.episode_returns = [0.0] * cfg.n_envs
        self.last_episode_returns: list[float] = []

    @property
    def n_envs(self) -> int:
        return self.cfg.n_envs

    def spaces(self) -> dict:
        return self.envs[0].spaces()

    def _next_seed(self, rank: int) -> int:
        return int(self._episode_seeds[rank].integers(2**31))

    def reset_all(self) -> list[dict]:
        self.episode_returns = [0.0] * self.n_envs
        return [env.reset(seed=self._next_seed(rank))
                for rank, env in enumerate(self.envs)]

    def step(self, actions) -> tuple[list[dict], np.ndarray, np.ndarray, list[dict]]:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, 3):
            raise ValueError(f"actions must have shape ({self.n_envs}, 3), "
                             f"got {actions.shape}")
        obs, rewards, dones, infos = [], [], [], []
        for rank, (env, action) in enumerate(zip(self.envs, actions)):
            o, r, d, info = env.step(action)
            self.episode_returns[rank] += r
            if d:
                info["episode_return"] = self.episode_returns[rank]
                self.last_episode_returns.append(self.episode_returns[rank])
                self.episode_returns[rank] = 0.0
                o = env.reset(seed=self._next_seed(rank))
            obs.append(o)
            rewards.append(r)
            dones.append(d)
            infos.append(info)
        return obs, np.array(rewards), np.array(dones), infos


def bind_env(cfg: BindingConfig | None = None, **kwargs) -> VecEnvHandle:
    """Create a vectorized handle onto the core environment."""
    if cfg is None:
        cfg = BindingConfig(**kwargs)
    return VecEnvHandle(cfg)
