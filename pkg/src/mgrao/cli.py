"""Command line entry point: ``mgrao run|sweep|verify|dump-state``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from .scenarios import (
    PRESETS,
    ScenarioConfig,
    compare,
    emit,
    parse_variant,
    preset,
    run_one,
)

log = logging.getLogger("mgrao")

_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}
CLI_KEYS = {"scenario", "out", "format", "jobs", "seed", "n_seeds"}


class ConfigError(ValueError):
    pass


def _unit(name):
    def parse(text):
        try:
            x = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not 0.0 <= x <= 1.0:
            raise argparse.ArgumentTypeError(f"{name} must be in [0, 1], got {x}")
        return x
    return parse


def _gamma(text):
    x = _unit("gamma")(text)
    if x >= 1.0:
        raise argparse.ArgumentTypeError(f"gamma must be in [0, 1), got {x}")
    return x


def _positive(text):
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if x < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {x}")
    return x


def _int_list(text):
    """``1,2,5`` or an inclusive-exclusive range ``0:20``."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return tuple(range(int(lo), int(hi)))
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 1,2,5 or a range 0:20, got {text!r}") from None


def _str_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


# (flag, dest, type, help); defaults come from the scenario preset
SCENARIO_FLAGS = [
    ("--parents", "n_parents", _positive, "number of parent agents |PG| (default 10; large 50)"),
    ("--children", "n_children", _positive, "number of child agents |CG| (default 1; multi 3)"),
    ("--group-sizes", "group_sizes", _int_list,
     "parent-agent group sizes to run, e.g. 1,2,5,10,25,50 (default 1; large sweeps 1,2,5,10,25,50)"),
    ("--churn-probability", "churn_probability", _unit("churn_probability"),
     "per-episode probability a parent leaves or rejoins (default 0; volatile 0.25)"),
    ("--epsilon", "epsilon", _unit("epsilon"), "parent exploration probability (default 0, multi 0.1)"),
    ("--episodes", "episodes", _positive, "episodes per run (default 100)"),
    ("--alpha", "alpha", _unit("alpha"), "learning rate in [0, 1] (default 0.1)"),
    ("--gamma", "gamma", _gamma, "eligibility trace decay in [0, 1) (default 0.9)"),
    ("--task-types", "n_task_types", _positive, "number of atomic task types |TP| (default 20)"),
    ("--composite-size", "composite_size", _positive, "atomic tasks per composite type (default 5)"),
    ("--composite-types", "n_composite_types", _positive, "number of composite task types (default 10)"),
    ("--resources", "n_resources", _positive, "number of resource types |R| (default 1)"),
    ("--variants", "variants", _str_list,
     "explicit variant labels, e.g. fixed-uniform,mgrao-1:1,mgrao-max (default: uniform plus one per group size)"),
]


def _add_common(p: argparse.ArgumentParser, default_scenario: str) -> None:
    p.add_argument("--config", type=Path, help="flat key=value file using ScenarioConfig field names")
    p.add_argument("--scenario", choices=sorted(PRESETS) + ["custom"], default=None,
                   help=f"experiment preset (default {default_scenario})")
    for flag, dest, typ, text in SCENARIO_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None, help=text)
    p.add_argument("--seed", type=int, default=None,
                   help="root seed; runs use seed, seed+1, ... (fallback: $MGRAO_SEED, then 0)")
    p.add_argument("--n-seeds", dest="n_seeds", type=_positive, default=None,
                   help="number of seeds starting at --seed (default 1)")
    p.add_argument("--seeds", dest="seeds", type=_int_list, default=None,
                   help="explicit seed list or range, e.g. 0:20 (overrides --seed/--n-seeds)")
    p.add_argument("--out", type=Path, default=None, help="output directory (default ./results)")
    p.add_argument("--format", choices=["csv", "json", "both"], default=None, help="output files (default both)")
    p.add_argument("--jobs", type=_positive, default=None, help="parallel worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(default_scenario=default_scenario)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgrao",
        description="Multi-group resource allocation learning: simulations and checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one scenario for its variants and seeds"), "single")
    _add_common(sub.add_parser("sweep", help="group-size sweep (defaults to the large system)"), "large")
    sub.add_parser("verify", help="oracle checks for the hand-derivable examples")
    dump = sub.add_parser("dump-state", help="run one variant/seed and print each child's learner state as JSON")
    _add_common(dump, "single")
    dump.add_argument("--variant", default="mgrao-max")
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in _FIELD_TYPES and key not in CLI_KEYS or key == "name":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


_FILE_PARSERS = {dest: typ for _, dest, typ, _ in SCENARIO_FLAGS}
_FILE_PARSERS.update(seeds=_int_list, seed=int, n_seeds=_positive, jobs=_positive, out=Path,
                     format=str, scenario=str)


def resolve(args: argparse.Namespace, environ=os.environ) -> tuple[ScenarioConfig, dict]:
    """Merge preset < config file < flags into a ScenarioConfig plus run options."""
    file_values = {}
    if getattr(args, "config", None):
        for key, text in read_config_file(args.config).items():
            try:
                file_values[key] = _FILE_PARSERS[key](text)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"{args.config}: {key}: {exc}") from None

    def pick(key, default=None):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        return file_values.get(key, default)

    scenario = pick("scenario", args.default_scenario)
    if scenario not in PRESETS and scenario != "custom":
        raise ConfigError(f"unknown scenario {scenario!r}")
    overrides = {}
    for _, dest, _, _ in SCENARIO_FLAGS:
        value = pick(dest)
        if value is not None:
            overrides[dest] = value
    seeds = pick("seeds")
    if seeds is None:
        root = pick("seed")
        if root is None:
            root = int(environ.get("MGRAO_SEED", 0))
        seeds = tuple(range(root, root + pick("n_seeds", 1)))
    overrides["seeds"] = tuple(seeds)
    cfg = preset(scenario, **overrides)
    options = {
        "out": Path(pick("out", Path("results"))),
        "format": pick("format", "both"),
        "jobs": pick("jobs", 1),
    }
    if options["format"] not in ("csv", "json", "both"):
        raise ConfigError(f"unknown format {options['format']!r}")
    return cfg, options


def _run_task(task):
    cfg, tag, seed = task
    out = run_one(cfg, parse_variant(tag, cfg.n_parents), seed)
    return out.records


def execute(cfg: ScenarioConfig, jobs: int = 1):
    """All (variant, seed) runs, records in a fixed variant-then-seed order."""
    cfg.validate()
    tasks = [(cfg, tag, seed) for tag in cfg.variant_tags() for seed in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    for (_, tag, seed), recs in zip(tasks, chunks):
        log.info("%s %s seed %d: cumulative utility %.6f", cfg.name, tag, seed, recs[-1].cumulative_utility)
    return [r for chunk in chunks for r in chunk]


def cmd_run(args) -> int:
    cfg, options = resolve(args)
    records = execute(cfg, options["jobs"])
    summary = compare(records)
    try:
        written = emit(records, summary, options["format"], options["out"])
    except OSError as exc:
        print(f"mgrao: {exc}", file=sys.stderr)
        return 2
    print(summary.table())
    for path in written:
        log.info("wrote %s", path)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}  (error {r.error:.3g})")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if not failed else 1


def cmd_dump_state(args) -> int:
    cfg, options = resolve(args)
    cfg.validate()
    variant = parse_variant(args.variant, cfg.n_parents)
    if variant.n_groups is None:
        raise ConfigError("fixed-uniform has no learner state")
    out = run_one(cfg, variant, cfg.seeds[0])
    state = {
        "scenario": cfg.name,
        "variant": variant.tag,
        "seed": cfg.seeds[0],
        "episodes": cfg.episodes,
        "children": {str(ch.id): ch.policy.state_dict() for ch in out.children},
    }
    text = json.dumps(state, indent=2) + "\n"
    if args.out:
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"{cfg.name}_{variant.tag}_{cfg.seeds[0]}_state.json").write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"mgrao: cannot write state to {args.out}: {exc}", file=sys.stderr)
            return 2
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
                        format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_run, "verify": cmd_verify, "dump-state": cmd_dump_state}
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError) as exc:
        print(f"mgrao: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
