"""Off-policy training on the bound environment: TQC, SAC, and TD3.

All three algorithms share the replay buffer, the exploration rule (policy
mean plus Gaussian noise, clipped to the action box), the encoder-backed
actor/critic networks, and the evaluation loop. TQC is the default: its
critics emit quantile distributions whose pooled top tail is truncated when
building targets, which tames overestimation.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .bindings import BindingConfig, EnvBinding, VecEnvHandle
from .encoder import OUTPUT_DIM, make_encoder

ACTION_DIM = 3
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0

ALGORITHMS = ("tqc", "sac", "td3")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    algorithm: str = "tqc"
    encoder: str = "gated"
    total_steps: int = 10_000
    eval_interval: int = 2_500
    eval_episodes: int = 25
    eval_seed: int = 900_000
    n_critics: int = 2
    n_quantiles: int = 25
    top_quantiles_to_drop: int = 2   # per critic, off the pooled target tail
    buffer_size: int = 100_000
    batch_size: int = 256
    learning_rate: float = 3e-4
    gamma: float = 0.99
    exploration_std: float = 0.2
    tau: float = 0.005
    learning_starts: int = 500
    gradient_interval: int = 2       # env steps per gradient step
    policy_delay: int = 2            # TD3 only
    target_noise: float = 0.2        # TD3 target smoothing
    target_noise_clip: float = 0.5
    hidden: tuple[int, int] = (256, 256)
    seed: int = 0
    out_dir: str = "runs/smoke"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        for name in ("total_steps", "eval_interval", "n_critics", "n_quantiles",
                     "buffer_size", "batch_size", "learning_starts"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class ReplayBuffer:
    """Ring buffer over dict observations, stored compactly."""

    def __init__(self, capacity: int, grid: int = 32):
        self.capacity = capacity
        self.size = 0
        self.pos = 0
        shape = (capacity, grid, grid)
        self.diff = np.zeros(shape, dtype=np.float32)
        self.ee_mask = np.zeros(shape, dtype=bool)
        self.goal_mask = np.zeros(shape, dtype=bool)
        self.scalars = np.zeros((capacity, 6), dtype=np.float32)
        self.next_diff = np.zeros(shape, dtype=np.float32)
        self.next_ee_mask = np.zeros(shape, dtype=bool)
        self.next_goal_mask = np.zeros(shape, dtype=bool)
        self.next_scalars = np.zeros((capacity, 6), dtype=np.float32)
        self.actions = np.zeros((capacity, ACTION_DIM), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)

    def add(self, obs, action, reward, done, next_obs):
        i = self.pos
        self.diff[i] = obs["diff_map"]
        self.ee_mask[i] = obs["ee_mask"]
        self.goal_mask[i] = obs["goal_mask"]
        self.scalars[i] = obs["scalars"]
        self.next_diff[i] = next_obs["diff_map"]
        self.next_ee_mask[i] = next_obs["ee_mask"]
        self.next_goal_mask[i] = next_obs["goal_mask"]
        self.next_scalars[i] = next_obs["scalars"]
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch_size)
        t = torch.as_tensor
        obs = (t(self.diff[idx]), t(self.ee_mask[idx], dtype=torch.float32),
               t(self.goal_mask[idx], dtype=torch.float32), t(self.scalars[idx]))
        nxt = (t(self.next_diff[idx]), t(self.next_ee_mask[idx], dtype=torch.float32),
               t(self.next_goal_mask[idx], dtype=torch.float32), t(self.next_scalars[idx]))
        return (obs, t(self.actions[idx]), t(self.rewards[idx]),
                t(self.dones[idx]), nxt)


def _mlp(sizes):
    layers = []
    for a, b in zip(sizes, sizes[1:]):
        layers += [nn.Linear(a, b), nn.ReLU()]
    return nn.Sequential(*layers[:-1])


class Actor(nn.Module):
    def __init__(self, cfg: TrainingConfig):
        super().__init__()
        self.encoder = make_encoder(cfg.encoder)
        self.trunk = _mlp((OUTPUT_DIM, *cfg.hidden))
        self.mean = nn.Linear(cfg.hidden[-1], ACTION_DIM)
        self.log_std = nn.Linear(cfg.hidden[-1], ACTION_DIM)

    def _features(self, obs):
        return self.trunk(self.encoder(*obs))

    def deterministic(self, obs):
        return torch.tanh(self.mean(self._features(obs)))

    def sample(self, obs):
        h = self._features(obs)
        mean = self.mean(h)
        log_std = torch.clamp(self.log_std(h), LOG_STD_MIN, LOG_STD_MAX)
        std = log_std.exp()
        normal = torch.distributions.Normal(mean, std)
        raw = normal.rsample()
        action = torch.tanh(raw)
        log_prob = normal.log_prob(raw) - torch.log1p(-action.pow(2) + 1e-6)
        return action, log_prob.sum(dim=1)


class Critics(nn.Module):
    """N critic heads over a shared encoder; quantile or scalar outputs."""

    def __init__(self, cfg: TrainingConfig, quantile: bool):
        super().__init__()
        self.encoder = make_encoder(cfg.encoder)
        out_dim = cfg.n_quantiles if quantile else 1
        self.heads = nn.ModuleList([
            nn.Sequential(_mlp((OUTPUT_DIM + ACTION_DIM, *cfg.hidden)), nn.ReLU(),
                          nn.Linear(cfg.hidden[-1], out_dim))
            for _ in range(cfg.n_critics)])

    def forward(self, obs, action):
        z = torch.cat([self.encoder(*obs), action], dim=1)
        return torch.stack([head(z) for head in self.heads], dim=1)  # (B, N, out)


def _obs_to_tensors(obs_dict: dict):
    return (torch.as_tensor(np.asarray(obs_dict["diff_map"]), dtype=torch.float32).unsqueeze(0),
            torch.as_tensor(np.asarray(obs_dict["ee_mask"]), dtype=torch.float32).unsqueeze(0),
            torch.as_tensor(np.asarray(obs_dict["goal_mask"]), dtype=torch.float32).unsqueeze(0),
            torch.as_tensor(np.asarray(obs_dict["scalars"]), dtype=torch.float32).unsqueeze(0))


def _quantile_huber_loss(current, target, taus):
    # current: (B, N, Q); target: (B, K)
    pairwise = target.unsqueeze(1).unsqueeze(1) - current.unsqueeze(-1)  # (B,N,Q,K)
    abs_pairwise = pairwise.abs()
    huber = torch.where(abs_pairwise <= 1.0, 0.5 * pairwise ** 2, abs_pairwise - 0.5)
    loss = (taus.view(1, 1, -1, 1) - (pairwise.detach() < 0).float()).abs() * huber
    return loss.mean()


class Trainer:
    def __init__(self, cfg: TrainingConfig, handle: VecEnvHandle):
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.handle = handle
        self.rng = np.random.default_rng(cfg.seed)
        quantile = cfg.algorithm == "tqc"
        self.actor = Actor(cfg)
        self.critic = Critics(cfg, quantile=quantile)
        self.critic_target = copy.deepcopy(self.critic)
        self.actor_target = copy.deepcopy(self.actor) if cfg.algorithm == "td3" else None
        for p in self.critic_target.parameters():
            p.requires_grad_(False)
        if self.actor_target is not None:
            for p in self.actor_target.parameters():
                p.requires_grad_(False)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=cfg.learning_rate)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=cfg.learning_rate)
        # entropy temperature, tuned automatically (SAC and TQC)
        self.log_alpha = torch.zeros(1, requires_grad=True)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=cfg.learning_rate)
        self.target_entropy = -float(ACTION_DIM)
        if quantile:
            q = cfg.n_quantiles
            self.taus = (torch.arange(q, dtype=torch.float32) + 0.5) / q
        self.buffer = ReplayBuffer(min(cfg.buffer_size, cfg.total_steps + 1))
        self.updates = 0

    # -- action selection ------------------------------------------------------

    def explore(self, obs_dict: dict) -> np.ndarray:
        """Policy mean plus Gaussian exploration noise, clipped to the box."""
        with torch.no_grad():
            mean = self.actor.deterministic(_obs_to_tensors(obs_dict))[0].numpy()
        noise = self.rng.normal(0.0, self.cfg.exploration_std, ACTION_DIM)
        return np.clip(mean + noise, -1.0, 1.0)

    def act(self, obs_dict: dict) -> np.ndarray:
        with torch.no_grad():
            return self.actor.deterministic(_obs_to_tensors(obs_dict))[0].numpy()

    # -- updates ---------------------------------------------------------------

    def _soft_update(self, online: nn.Module, target: nn.Module):
        with torch.no_grad():
            for p, tp in zip(online.parameters(), target.parameters()):
                tp.mul_(1.0 - self.cfg.tau).add_(self.cfg.tau * p)

    def update(self) -> dict:
        cfg = self.cfg
        obs, act, rew, done, nxt = self.buffer.sample(cfg.batch_size, self.rng)
        alpha = self.log_alpha.exp().detach()

        if cfg.algorithm == "tqc":
            with torch.no_grad():
                next_a, next_logp = self.actor.sample(nxt)
                next_q = self.critic_target(nxt, next_a)           # (B, N, Q)
                pooled = next_q.reshape(next_q.shape[0], -1).sort(dim=1).values
                keep = pooled.shape[1] - cfg.top_quantiles_to_drop * cfg.n_critics
                kept = pooled[:, :keep]
                target = rew.unsqueeze(1) + cfg.gamma * (1.0 - done).unsqueeze(1) * (
                    kept - alpha * next_logp.unsqueeze(1))
            current = self.critic(obs, act)
            critic_loss = _quantile_huber_loss(current, target, self.taus)
        elif cfg.algorithm == "sac":
            with torch.no_grad():
                next_a, next_logp = self.actor.sample(nxt)
                next_q = self.critic_target(nxt, next_a).squeeze(-1).min(dim=1).values
                target = rew + cfg.gamma * (1.0 - done) * (next_q - alpha * next_logp)
            current = self.critic(obs, act).squeeze(-1)
            critic_loss = sum(nn.functional.mse_loss(current[:, i], target)
                              for i in range(cfg.n_critics))
        else:  # td3
            with torch.no_grad():
                noise = torch.clamp(
                    torch.randn_like(act) * cfg.target_noise,
                    -cfg.target_noise_clip, cfg.target_noise_clip)
                next_a = torch.clamp(self.actor_target.deterministic(nxt) + noise,
                                     -1.0, 1.0)
                next_q = self.critic_target(nxt, next_a).squeeze(-1).min(dim=1).values
                target = rew + cfg.gamma * (1.0 - done) * next_q
            current = self.critic(obs, act).squeeze(-1)
            critic_loss = sum(nn.functional.mse_loss(current[:, i], target)
                              for i in range(cfg.n_critics))

        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        stats = {"critic_loss": float(critic_loss.detach())}
        self.updates += 1

        update_actor = (cfg.algorithm != "td3") or (self.updates % cfg.policy_delay == 0)
        if update_actor:
            if cfg.algorithm == "td3":
                a = self.actor.deterministic(obs)
                actor_loss = -self.critic(obs, a).squeeze(-1)[:, 0].mean()
            else:
                a, logp = self.actor.sample(obs)
                q = self.critic(obs, a)
                q = q.mean(dim=(1, 2)) if cfg.algorithm == "tqc" \
                    else q.squeeze(-1).min(dim=1).values
                actor_loss = (alpha * logp - q).mean()
                alpha_loss = -(self.log_alpha
                               * (logp.detach() + self.target_entropy)).mean()
                self.alpha_opt.zero_grad()
                alpha_loss.backward()
                self.alpha_opt.step()
            self.actor_opt.zero_grad()
            actor_loss.backward()
            self.actor_opt.step()
            stats["actor_loss"] = float(actor_loss.detach())
            if self.actor_target is not None:
                self._soft_update(self.actor, self.actor_target)

        self._soft_update(self.critic, self.critic_target)

        if not all(math.isfinite(v) for v in stats.values()):
            raise TrainingDiverged(f"non-finite loss at update {self.updates}: {stats}")
        return stats

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "config": asdict(self.cfg),
            "arch": {"encoder": self.cfg.encoder, "hidden": list(self.cfg.hidden),
                     "cnn": "2x(conv3x3 stride2) + linear64 per branch"},
            "actor": self.actor.state_dict(),
            "critic": self.critic.state_dict(),
            "log_alpha": self.log_alpha.detach().clone(),
            "updates": self.updates,
        }, path)


def load_checkpoint(path) -> tuple[Actor, TrainingConfig]:
    blob = torch.load(path, weights_only=False)
    saved = blob["config"]
    saved["hidden"] = tuple(saved["hidden"])
    cfg = TrainingConfig(**saved)
    actor = Actor(cfg)
    actor.load_state_dict(blob["actor"])
    actor.eval()
    return actor, cfg


# -- evaluation ----------------------------------------------------------------

def evaluate_policy(actor: Actor, eval_cfg: BindingConfig, episodes: int,
                    base_seed: int) -> tuple[float, float, list[float]]:
    """Mean episode return of the deterministic policy over fixed seeds."""
    env = EnvBinding(eval_cfg)
    returns = []
    for ep in range(episodes):
        obs = env.reset(seed=base_seed + ep)
        total, done = 0.0, False
        while not done:
            with torch.no_grad():
                action = actor.deterministic(_obs_to_tensors(obs))[0].numpy()
            obs, r, done, _ = env.step(action)
            total += r
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns)), returns


def random_baseline_returns(eval_cfg: BindingConfig, episodes: int,
                            base_seed: int) -> list[float]:
    """Episode returns of the random baseline on the same goals and seeds."""
    from sandshaper.baselines import run_random_episode
    env = EnvBinding(eval_cfg)
    returns = []
    for ep in range(episodes):
        env.reset(seed=base_seed + ep)
        trace = run_random_episode(env.env, env.env.goal, seed=base_seed + ep)
        returns.append(float(sum(row["reward"] for row in trace.rows)))
    return returns


def train(cfg: TrainingConfig, handle: VecEnvHandle,
          eval_cfg: BindingConfig | None = None) -> tuple[Path, list[dict]]:
    """Run training; returns (final checkpoint path, eval curve rows).

    The curve is evaluated on held-out episodes before training starts and
    after every eval_interval steps, and persisted as CSV
    (wallclock,steps,mean_reward,std_reward) under cfg.out_dir.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if eval_cfg is None:
        eval_cfg = BindingConfig(**{**handle.cfg.__dict__, "seed": cfg.eval_seed,
                                    "goal_seed": handle.cfg.goal_seed + 10_000})
    trainer = Trainer(cfg, handle)
    curve: list[dict] = []
    t_start = time.time()

    def evaluate(step):
        mean, std, _ = evaluate_policy(trainer.actor, eval_cfg,
                                       cfg.eval_episodes, cfg.eval_seed)
        curve.append({"wallclock": time.time() - t_start, "steps": step,
                      "mean_reward": mean, "std_reward": std})
        trainer.save_checkpoint(out_dir / f"checkpoint_{step:08d}.pt")
        _write_curve(out_dir / "eval_curve.csv", curve)

    evaluate(0)
    obs_list = handle.reset_all()
    for step in range(1, cfg.total_steps + 1):
        actions = np.stack([
            trainer.explore(o) if trainer.buffer.size >= cfg.learning_starts
            else trainer.rng.uniform(-1.0, 1.0, ACTION_DIM)
            for o in obs_list])
        next_obs, rewards, dones, infos = handle.step(actions)
        for rank in range(handle.n_envs):
            trainer.buffer.add(obs_list[rank], actions[rank], rewards[rank],
                               dones[rank], next_obs[rank])
        obs_list = next_obs
        if trainer.buffer.size >= cfg.learning_starts and step % cfg.gradient_interval == 0:
            trainer.update()
        if step % cfg.eval_interval == 0:
            evaluate(step)
    if curve[-1]["steps"] != cfg.total_steps:
        evaluate(cfg.total_steps)
    final = out_dir / f"checkpoint_{cfg.total_steps:08d}.pt"
    return final, curve


def _write_curve(path, curve) -> None:
    lines = ["wallclock,steps,mean_reward,std_reward"]
    for row in curve:
        lines.append(f"{row['wallclock']:.3f},{row['steps']},"
                     f"{row['mean_reward']:.6f},{row['std_reward']:.6f}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
