"""Experiment configurations, runs, comparisons and result files."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .environment import (
    ChildSelectionPolicy,
    Simulation,
    SystemSpec,
    VolatilityModel,
    build_world,
    make_children,
)
from .learner import ParentGroupMap

CSV_HEADER = ("scenario", "variant", "seed", "episode", "utility", "cumulative_utility")
UNIFORM = "fixed-uniform"
MAX = "mgrao-max"
ONE = "mgrao-1:1"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "single"
    n_parents: int = 10
    n_children: int = 1
    group_sizes: tuple[int, ...] = (1,)
    churn_probability: float = 0.0
    epsilon: float = 0.0
    episodes: int = 100
    seeds: tuple[int, ...] = (0,)
    alpha: float = 0.1
    gamma: float = 0.9
    n_task_types: int = 20
    composite_size: int = 5
    n_composite_types: int = 10
    n_resources: int = 1
    variants: tuple[str, ...] = ()  # empty: uniform plus one variant per group size

    def validate(self) -> None:
        problems = []
        if self.name not in PRESETS and self.name != "custom":
            problems.append(f"unknown scenario {self.name!r}")
        for key in ("n_parents", "n_children", "episodes", "n_task_types", "composite_size",
                    "n_composite_types", "n_resources"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1")
        if self.composite_size > self.n_task_types:
            problems.append("composite_size exceeds n_task_types")
        if self.n_parents < self.n_composite_types:
            problems.append("need at least one parent per composite type")
        if any(g < 1 for g in self.group_sizes):
            problems.append("group sizes must be >= 1")
        if not self.seeds:
            problems.append("no seeds")
        for key in ("churn_probability", "epsilon", "alpha"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                problems.append(f"{key} must be in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            problems.append("gamma must be in [0, 1)")
        for tag in self.variant_tags():
            try:
                parse_variant(tag, self.n_parents)
            except ValueError as exc:
                problems.append(str(exc))
        if problems:
            raise ValueError(f"invalid scenario config: {'; '.join(problems)}")

    def variant_tags(self) -> list[str]:
        if self.variants:
            return list(self.variants)
        tags = [UNIFORM]
        for gs in self.group_sizes:
            tag = variant_tag(math.ceil(self.n_parents / gs), self.n_parents)
            if tag not in tags:
                tags.append(tag)
        return tags

    def system_spec(self) -> SystemSpec:
        return SystemSpec(self.n_parents, self.n_children, self.n_task_types,
                          self.n_composite_types, self.composite_size, self.n_resources)


PRESETS = {
    "single": ScenarioConfig("single"),
    "multi": ScenarioConfig("multi", n_children=3, epsilon=0.1),
    "volatile": ScenarioConfig("volatile", churn_probability=0.25),
    "large": ScenarioConfig("large", n_parents=50, group_sizes=(1, 2, 5, 10, 25, 50)),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    base = PRESETS.get(name, ScenarioConfig("custom"))
    return replace(base, name=name, **overrides)


@dataclass(frozen=True)
class AlgorithmVariant:
    tag: str
    n_groups: int | None  # None: fixed uniform weights

    def groups(self, parents: Sequence[int]) -> ParentGroupMap | None:
        if self.n_groups is None:
            return None
        ordered = sorted(parents)
        return ParentGroupMap({p: k % self.n_groups for k, p in enumerate(ordered)})


def variant_tag(n_groups: int, n_parents: int) -> str:
    if n_groups >= n_parents:
        return MAX
    if n_groups == 1:
        return ONE
    return f"mgrao-{n_groups}:1"


_RATIO = re.compile(r"mgrao-(\d+):(\d+)$")


def parse_variant(tag: str, n_parents: int) -> AlgorithmVariant:
    """Resolve a label to its group count; ``x:y`` means x groups per y children."""
    if tag == UNIFORM:
        return AlgorithmVariant(tag, None)
    if tag == MAX:
        return AlgorithmVariant(tag, n_parents)
    match = _RATIO.match(tag)
    if not match:
        raise ValueError(f"unknown variant {tag!r}")
    x, y = int(match.group(1)), int(match.group(2))
    if y < 1 or x < y or x % y:
        raise ValueError(f"variant {tag!r}: ratio must be a positive whole number of groups")
    if x // y > n_parents:
        raise ValueError(f"variant {tag!r}: more groups than the {n_parents} parents")
    return AlgorithmVariant(tag, x // y)


@dataclass(frozen=True)
class MetricsRecord:
    scenario: str
    variant: str
    seed: int
    episode: int
    utility: float
    cumulative_utility: float


@dataclass
class RunOutput:
    records: list[MetricsRecord]
    conservation_checks: int
    max_conservation_error: float
    churn_flips: list[int] = field(default_factory=list)
    children: list = field(default_factory=list)


def run_one(cfg: ScenarioConfig, variant: AlgorithmVariant, seed: int) -> RunOutput:
    """Run one (variant, seed) pair; every variant sees the same world for a seed."""
    world_seq, sim_seq = np.random.SeedSequence(seed).spawn(2)
    world = build_world(cfg.system_spec(), np.random.default_rng(world_seq))
    children = make_children(world, variant.groups(world.sd.parents), cfg.alpha, cfg.gamma)
    sim = Simulation(world, children, ChildSelectionPolicy(cfg.epsilon),
                     VolatilityModel(cfg.churn_probability), np.random.default_rng(sim_seq))
    records = []
    flips = []
    cumulative = 0.0
    worst = 0.0
    for episode in range(cfg.episodes):
        res = sim.step()
        cumulative += res.utility
        worst = max(worst, res.max_conservation_error)
        flips.append(res.flips)
        records.append(MetricsRecord(cfg.name, variant.tag, seed, episode, res.utility, cumulative))
    return RunOutput(records, sim.conservation_checks, worst, flips, children)


def run_scenario(cfg: ScenarioConfig, variant: AlgorithmVariant | str) -> list[MetricsRecord]:
    cfg.validate()
    if isinstance(variant, str):
        variant = parse_variant(variant, cfg.n_parents)
    records = []
    for seed in cfg.seeds:
        records.extend(run_one(cfg, variant, seed).records)
    return records


@dataclass
class VariantSummary:
    variant: str
    mean: float
    std: float
    pct_from_uniform: float | None
    pct_from_max: float | None
    pct_of_max: float | None
    final: dict[int, float]  # seed -> cumulative utility at the last episode


@dataclass
class ComparisonSummary:
    scenario: str
    seeds: list[int]
    variants: list[VariantSummary]

    def get(self, tag: str) -> VariantSummary:
        for v in self.variants:
            if v.variant == tag:
                return v
        raise KeyError(tag)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seeds": self.seeds,
            "variants": [
                {
                    "variant": v.variant,
                    "mean_cumulative_utility": _sig(v.mean),
                    "std_cumulative_utility": _sig(v.std),
                    "pct_from_uniform": _sig(v.pct_from_uniform),
                    "pct_from_max": _sig(v.pct_from_max),
                    "pct_of_max": _sig(v.pct_of_max),
                    "final_cumulative_utility": {str(s): _sig(x) for s, x in sorted(v.final.items())},
                }
                for v in self.variants
            ],
        }

    def table(self) -> str:
        """Plain-text table, one row per variant with the percentage columns."""
        head = f"{'Algorithm':<16}{'mean u':>12}{'sd':>10}{'% from uniform':>16}{'% from max':>12}{'% of max':>10}"
        lines = [f"{self.scenario}: cumulative utility, {len(self.seeds)} seed(s)", head]
        for v in self.variants:
            lines.append(
                f"{v.variant:<16}{v.mean:>12.4f}{v.std:>10.4f}"
                f"{_pct(v.pct_from_uniform):>16}{_pct(v.pct_from_max):>12}{_pct(v.pct_of_max):>10}"
            )
        return "\n".join(lines)


def final_cumulative(records: Iterable[MetricsRecord]) -> dict[str, dict[int, float]]:
    """variant -> seed -> cumulative utility at that run's last episode."""
    last: dict[tuple[str, int], MetricsRecord] = {}
    for r in records:
        key = (r.variant, r.seed)
        if key not in last or r.episode > last[key].episode:
            last[key] = r
    out: dict[str, dict[int, float]] = {}
    for (variant, seed), r in last.items():
        out.setdefault(variant, {})[seed] = r.cumulative_utility
    return out


def compare(records: Sequence[MetricsRecord]) -> ComparisonSummary:
    if not records:
        return ComparisonSummary("", [], [])
    scenarios = {r.scenario for r in records}
    if len(scenarios) > 1:
        raise ValueError(f"records mix scenarios {sorted(scenarios)}")
    finals = final_cumulative(records)
    seed_sets = {variant: frozenset(d) for variant, d in finals.items()}
    if len(set(seed_sets.values())) > 1:
        raise ValueError(f"variants were run on different seed sets: "
                         f"{ {v: sorted(s) for v, s in seed_sets.items()} }")
    means = {v: float(np.mean(list(d.values()))) for v, d in finals.items()}
    uniform = means.get(UNIFORM)
    best = means.get(MAX)
    summaries = []
    for variant in _ordered(finals):
        vals = np.array([finals[variant][s] for s in sorted(finals[variant])])
        mean = means[variant]
        summaries.append(VariantSummary(
            variant=variant,
            mean=mean,
            std=float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            pct_from_uniform=None if not uniform else (mean - uniform) / uniform * 100,
            pct_from_max=None if not best else (mean - best) / best * 100,
            pct_of_max=None if not best else mean / best * 100,
            final=dict(finals[variant]),
        ))
    seeds = sorted(next(iter(seed_sets.values())))
    return ComparisonSummary(next(iter(scenarios)), seeds, summaries)


def _ordered(finals) -> list[str]:
    def key(tag):
        if tag == UNIFORM:
            return (0, 0)
        if tag == MAX:
            return (2, 0)
        m = _RATIO.match(tag)
        return (1, int(m.group(1)) / int(m.group(2))) if m else (3, tag)
    return sorted(finals, key=key)


def _sig(x):
    return None if x is None else float(f"{x:.9g}")


def _pct(x):
    return "-" if x is None else f"{x:.2f}"


def records_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.scenario, r.variant, r.seed, r.episode,
                         f"{r.utility:.9g}", f"{r.cumulative_utility:.9g}"])
    return buf.getvalue()


def emit(records: Sequence[MetricsRecord], summary: ComparisonSummary, fmt: str, path) -> list[Path]:
    """Write per-run CSVs, a combined CSV and the JSON summary into directory ``path``."""
    if fmt not in ("csv", "json", "both"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(path)
    scenario = summary.scenario or (records[0].scenario if records else "empty")
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            runs: dict[tuple[str, int], list[MetricsRecord]] = {}
            for r in records:
                runs.setdefault((r.variant, r.seed), []).append(r)
            for (variant, seed), rs in runs.items():
                written.append(_write(out / f"{scenario}_{variant}_{seed}.csv", records_csv(rs)))
            written.append(_write(out / f"{scenario}_metrics.csv", records_csv(records)))
        if fmt in ("json", "both"):
            body = json.dumps(summary.to_dict(), indent=2) + "\n"
            written.append(_write(out / f"{scenario}_summary.json", body))
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc.strerror or exc}") from exc
    return written


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def config_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)
