"""Benchmark metrics, batch evaluation over goal sets, significance testing.

Height Diff is the goal-area mean absolute height error of the final bed;
Changed is the share of goal cells the tool ever manipulated during the
episode; Execution counts the steps until the tool has left the medium for
three consecutive steps after first entering it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import EpisodeTrace, run_bcpp_episode, run_random_episode
from .env import EnvConfig, SandShapingEnv
from .goals import GoalSpec, load_goal
from .rewards import d_hat

APPROACHES = ("rand", "bcpp")

CSV_HEADER = "episode,goal_id,approach,height_diff_mm,changed_pct,execution_steps,seed"


@dataclass
class EpisodeResult:
    episode: int
    goal_id: str
    approach: str
    height_diff: float        # meters
    changed_pct: float
    execution_steps: int
    seed: int

    def csv_row(self) -> str:
        return (f"{self.episode},{self.goal_id},{self.approach},"
                f"{self.height_diff * 1000:.6f},{self.changed_pct:.6f},"
                f"{self.execution_steps},{self.seed}")


def metric_height_diff(final_map, goal: GoalSpec) -> float:
    """Goal-area mean |goal - truncated current| of the final bed, meters."""
    return d_hat(final_map, goal, "goal_area")


def metric_changed(final_map, goal: GoalSpec, eps_changed: float = 5e-4) -> float:
    """Percent of goal cells whose final height differs from the bed by > eps."""
    h = final_map.heights if hasattr(final_map, "heights") else np.asarray(final_map)
    mask = goal.goal_mask
    changed = np.abs(h[mask] - goal.h0) > eps_changed
    return 100.0 * float(changed.sum()) / float(mask.sum())


def metric_execution(in_medium_flags) -> int:
    """Steps from episode start until the tool has left the medium to stay.

    "To stay" means the earliest window of three consecutive out-of-medium
    steps after the tool first entered; without an entry the count is zero,
    without such a window it is the episode length.
    """
    flags = [bool(f) for f in in_medium_flags]
    try:
        first_in = flags.index(True)
    except ValueError:
        return 0
    for w in range(first_in + 1, len(flags) - 2):
        if not flags[w] and not flags[w + 1] and not flags[w + 2]:
            return w
    return len(flags)


def _rank_with_ties(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fractional ranks (ties get the mean rank) and tie-group sizes."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    tie_sizes = []
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, np.array(tie_sizes)


def _u_statistic(a, b) -> float:
    """U for sample a: pairs where a wins, ties counting half."""
    u = 0.0
    for x in a:
        for y in b:
            if x > y:
                u += 1.0
            elif x == y:
                u += 0.5
    return u


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns (U of the first sample, p).

    Small samples (both sizes <= 8) are tested by exact enumeration over all
    group assignments of the pooled values; larger ones use the normal
    approximation with tie and continuity corrections. An all-constant pooled
    sample is degenerate and reports p = 1.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    u1 = _u_statistic(a, b)

    pooled = np.concatenate([a, b])
    if pooled.min() == pooled.max():
        return u1, 1.0

    if n1 <= 8 and n2 <= 8:
        lo = hi = 0
        total = 0
        idx = range(n1 + n2)
        for combo in itertools.combinations(idx, n1):
            sel = np.zeros(n1 + n2, dtype=bool)
            sel[list(combo)] = True
            u = _u_statistic(pooled[sel], pooled[~sel])
            total += 1
            if u <= u1 + 1e-12:
                lo += 1
            if u >= u1 - 1e-12:
                hi += 1
        p = 2.0 * min(lo / total, hi / total)
        return u1, min(p, 1.0)

    ranks, ties = _rank_with_ties(pooled)
    n = n1 + n2
    mu = n1 * n2 / 2.0
    tie_term = float(((ties ** 3 - ties).sum())) / (n * (n - 1))
    sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if sigma2 <= 0:
        return u1, 1.0
    big_u = max(u1, n1 * n2 - u1)
    z = (big_u - mu - 0.5) / math.sqrt(sigma2)
    p = 2.0 * 0.5 * math.erfc(z / math.sqrt(2.0))
    return u1, min(p, 1.0)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    return ""


def load_goal_dir(goal_dir) -> list[GoalSpec]:
    paths = sorted(Path(goal_dir).rglob("*.ghm"))
    if not paths:
        raise FileNotFoundError(f"no .ghm goal files under {goal_dir}")
    return [load_goal(p) for p in paths]


def run_episode(approach: str, env: SandShapingEnv, goal: GoalSpec,
                seed: int) -> EpisodeTrace:
    if approach == "rand":
        return run_random_episode(env, goal, seed)
    if approach == "bcpp":
        return run_bcpp_episode(env, goal, seed)
    raise ValueError(f"unknown approach {approach!r}, expected one of {APPROACHES}")


def env_config_for(approach: str, observation_mode: str = "privileged",
                   **overrides) -> EnvConfig:
    # the coverage baseline runs until its plan is done, not to a step cap
    n_steps = None if approach == "bcpp" else overrides.pop("n_steps", 40)
    return EnvConfig(n_steps=n_steps, observation_mode=observation_mode, **overrides)


def run_benchmark(approach: str, goals: list[GoalSpec], episodes: int, seed: int,
                  observation_mode: str = "privileged") -> tuple[list[EpisodeResult], list[EpisodeTrace]]:
    """Evaluate an approach over a goal set; deterministic in the seed.

    Episode i runs goal i modulo the goal count with per-episode seed
    seed + i. Metrics come from the privileged final map regardless of the
    observation mode (the mode only changes what the reward pipeline sees).
    """
    if approach not in APPROACHES:
        raise ValueError(f"unknown approach {approach!r}, expected one of {APPROACHES}")
    results: list[EpisodeResult] = []
    traces: list[EpisodeTrace] = []
    for i in range(episodes):
        goal = goals[i % len(goals)]
        env = SandShapingEnv(env_config_for(approach, observation_mode))
        trace = run_episode(approach, env, goal, seed=seed + i)
        hd = metric_height_diff(env.world.height_map(), goal)
        mask = goal.goal_mask
        changed = 100.0 * float((env.world.ever_changed & mask).sum()) / float(mask.sum())
        execution = metric_execution(trace.in_medium_flags())
        results.append(EpisodeResult(
            episode=i, goal_id=goal.id, approach=approach,
            height_diff=hd, changed_pct=changed,
            execution_steps=execution, seed=seed + i))
        traces.append(trace)
    return results, traces


def results_to_csv(results: list[EpisodeResult],
                   recon_errors: list[float] | None = None) -> str:
    header = CSV_HEADER
    if recon_errors is not None:
        header += ",recon_error_mm"
    lines = [header]
    for i, r in enumerate(results):
        row = r.csv_row()
        if recon_errors is not None:
            row += f",{recon_errors[i] * 1000:.6f}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def summarize(results: list[EpisodeResult]) -> dict:
    hd = np.array([r.height_diff for r in results]) * 1000.0
    ch = np.array([r.changed_pct for r in results])
    ex = np.array([r.execution_steps for r in results], dtype=np.float64)
    return {
        "episodes": len(results),
        "height_diff_mm": (float(hd.mean()), float(hd.std())),
        "changed_pct": (float(ch.mean()), float(ch.std())),
        "execution_steps": (float(ex.mean()), float(ex.std())),
    }


def summary_table(summaries: dict[str, dict]) -> str:
    """Text table of mean +- std per metric, one column per approach."""
    rows = [("Height Diff. [mm]", "height_diff_mm"),
            ("Changed [%]", "changed_pct"),
            ("Execution [steps]", "execution_steps")]
    names = list(summaries)
    width = 22
    out = ["Metric".ljust(26) + "".join(n.upper().ljust(width) for n in names)]
    for label, key in rows:
        cells = []
        for n in names:
            mean, std = summaries[n][key]
            cells.append(f"{mean:.1f} +- {std:.1f}".ljust(width))
        out.append(label.ljust(26) + "".join(cells))
    return "\n".join(out)
