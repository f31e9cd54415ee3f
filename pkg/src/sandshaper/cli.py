"""Command-line entry point: goal generation, benchmark runs, significance
tests, and map rendering.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command is
deterministic given its flags and seed. A plain key-value config file can
supply defaults for any long flag name (CLI > file > built-in default).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .evaluation import (APPROACHES, load_goal_dir, mann_whitney_u,
                         results_to_csv, run_benchmark, significance_stars,
                         summarize, summary_table)
from .goals import FAMILIES, gen_goal, save_goal
from .heightfield import heightmap_to_pgm, load_ghm


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path) -> dict:
    """Plain `key = value` lines; '#' starts a comment."""
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Overlay config-file values onto flags left at their defaults."""
    if not getattr(args, "config", None):
        return
    overlay = _load_config_file(args.config)
    specified = {a.dest for a in parser._actions}
    for key, value in overlay.items():
        if key not in specified:
            raise UsageError(f"config file key {key!r} does not match any flag")
        default = parser.get_default(key)
        if getattr(args, key) == default:
            if isinstance(default, bool):
                value = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            setattr(args, key, value)


def cmd_gen_goals(args, parser) -> int:
    _apply_config(args, parser)
    families = args.families.split(",") if args.families else list(FAMILIES)
    for fam in families:
        if fam not in FAMILIES:
            raise UsageError(f"unknown family {fam!r}, expected one of {FAMILIES}")
    if args.per_family < 1:
        raise UsageError("--per-family must be >= 1")
    out_dir = Path(args.out_dir)
    manifest = []
    for fam_idx, fam in enumerate(families):
        fam_dir = out_dir / fam
        fam_dir.mkdir(parents=True, exist_ok=True)
        for i in range(args.per_family):
            goal_id = f"{fam}-{i:04d}"
            spec = gen_goal(fam, seed=[args.seed, fam_idx, i], goal_id=goal_id)
            save_goal(spec, fam_dir / f"{goal_id}.ghm")
            manifest.append(f"{goal_id},{fam}")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.csv", "w", newline="\n") as f:
        f.write("id,family\n")
        f.write("\n".join(manifest) + "\n")
    print(f"wrote {len(manifest)} goals to {out_dir}")
    return 0


def cmd_run(args, parser) -> int:
    _apply_config(args, parser)
    if args.policy not in APPROACHES:
        raise UsageError(f"unknown policy {args.policy!r}, expected one of {APPROACHES}")
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    mode = {"priv": "privileged", "recon": "reconstructed"}[args.obs]
    goals = load_goal_dir(args.goals)
    results, traces = run_benchmark(args.policy, goals, args.episodes, args.seed,
                                    observation_mode=mode)
    recon_errors = None
    if mode == "reconstructed":
        recon_errors = [float(np.mean([r["recon_error"] for r in t.rows]))
                        for t in traces]
    csv_text = results_to_csv(results, recon_errors)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="\n") as f:
        f.write(csv_text)
    print(summary_table({args.policy: summarize(results)}))
    print(f"results written to {out}")
    return 0


def _read_metric(path, metric: str) -> list[float]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or metric not in reader.fieldnames:
            raise UsageError(
                f"{path}: metric column {metric!r} missing "
                f"(have: {', '.join(reader.fieldnames or [])})")
        return [float(row[metric]) for row in reader]


def cmd_eval(args, parser) -> int:
    _apply_config(args, parser)
    a = _read_metric(args.a, args.metric)
    b = _read_metric(args.b, args.metric)
    u, p = mann_whitney_u(a, b)
    stars = significance_stars(p)
    print(f"metric: {args.metric}")
    print(f"A: {Path(args.a).name}  n={len(a)}  mean={np.mean(a):.4f}  std={np.std(a):.4f}")
    print(f"B: {Path(args.b).name}  n={len(b)}  mean={np.mean(b):.4f}  std={np.std(b):.4f}")
    print(f"Mann-Whitney U={u:.1f}  two-sided p={p:.6g}  {stars}")
    return 0


def cmd_render(args, parser) -> int:
    _apply_config(args, parser)
    if args.format != "pgm":
        raise UsageError(f"unsupported format {args.format!r}")
    hmap, _, _ = load_ghm(args.map)
    heightmap_to_pgm(args.out, hmap)
    print(f"rendered {args.map} -> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="sandshaper",
                     description="Granular-media shaping benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-goals", help="generate procedural goal height maps")
    p.add_argument("--families", default="",
                   help=f"comma-separated families (default: all of {','.join(FAMILIES)})")
    p.add_argument("--per-family", type=int, default=100,
                   help="goals per family (default 100)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--out-dir", default="goals", help="output directory (default goals)")
    p.add_argument("--config", default="", help="key=value config file")
    p.set_defaults(func=cmd_gen_goals, parser=p)

    p = sub.add_parser("run", help="run a baseline over a goal set")
    p.add_argument("--policy", required=True, help="rand or bcpp")
    p.add_argument("--goals", required=True, help="goal directory")
    p.add_argument("--episodes", type=int, default=100, help="episodes (default 100)")
    p.add_argument("--obs", choices=("priv", "recon"), default="priv",
                   help="observation mode (default priv)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--out", default="results.csv", help="output CSV (default results.csv)")
    p.add_argument("--config", default="", help="key=value config file")
    p.set_defaults(func=cmd_run, parser=p)

    p = sub.add_parser("eval", help="Mann-Whitney significance between two result files")
    p.add_argument("--a", required=True, help="first results CSV")
    p.add_argument("--b", required=True, help="second results CSV")
    p.add_argument("--metric", default="height_diff_mm",
                   help="metric column (default height_diff_mm)")
    p.add_argument("--config", default="", help="key=value config file")
    p.set_defaults(func=cmd_eval, parser=p)

    p = sub.add_parser("render", help="export a GHM height map as 16-bit PGM")
    p.add_argument("--map", required=True, help="input .ghm file")
    p.add_argument("--out", required=True, help="output .pgm file")
    p.add_argument("--format", default="pgm", help="output format (default pgm)")
    p.add_argument("--config", default="", help="key=value config file")
    p.set_defaults(func=cmd_render, parser=p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, args.parser)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
