"""Multi-run experiments: the component ablation grid and one-parameter sweeps.

Every run in a grid shares the run seed and step budget of the base config;
only the split seed (which landmarks are labeled) changes between repeats.
Domains are built once per split seed and reused by every row.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import TrainConfig, from_dict, to_dict
from .errors import ConfigError
from .trainer import prepare_domains, train
from .uda import UdaTerm

log = logging.getLogger(__name__)

__all__ = [
    "ABLATION_GRID",
    "RunResult",
    "baseline_config",
    "ablation_config",
    "row_label",
    "with_split_seed",
    "set_path",
    "run_many",
    "ablation_runs",
    "sweep_runs",
    "summarize",
]

# (categorical alignment, strong augmentation on labeled paths, consistency alignment)
ABLATION_GRID: Tuple[Tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


@dataclass
class RunResult:
    label: str
    seed: int
    target_mca: float
    seconds: float
    params: Dict[str, object] = field(default_factory=dict)

    def as_row(self) -> Dict[str, object]:
        return {"label": self.label, "seed": self.seed, **self.params, "target_mca": self.target_mca, "seconds": self.seconds}


def baseline_config(config: TrainConfig) -> TrainConfig:
    """Source-plus-landmarks training: no alignment terms, no plugin, weak labeled views."""
    return config.replace(lambda1=0.0, lambda2=0.0, uda=UdaTerm("none", config.uda.weight), strong_labeled=False)


def ablation_config(config: TrainConfig, ca: bool, sa: bool, cona: bool) -> TrainConfig:
    """``config`` with each component switched off unless requested; the plugin is kept."""
    return config.replace(
        lambda1=config.lambda1 if ca else 0.0,
        strong_labeled=sa,
        lambda2=config.lambda2 if cona else 0.0,
    )


def row_label(ca: bool, sa: bool, cona: bool) -> str:
    on = [name for name, flag in (("CA", ca), ("SA", sa), ("CONA", cona)) if flag]
    return "+".join(on) if on else "plugin"


def with_split_seed(config: TrainConfig, seed: int) -> TrainConfig:
    data = replace(config.data, split=replace(config.data.split, split_seed=seed))
    return config.replace(data=data)


def set_path(config: TrainConfig, path: str, value) -> TrainConfig:
    """Copy of ``config`` with the dotted field ``path`` set to ``value`` (validated)."""
    doc = to_dict(config)
    node = doc
    keys = path.split(".")
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"{path}: {k!r} is not a config section")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"{path}: unknown config field {keys[-1]!r}")
    node[keys[-1]] = value
    return from_dict(TrainConfig, json.loads(json.dumps(doc)))


def run_many(
    jobs: Iterable[Tuple[str, Dict[str, object], TrainConfig]],
    seeds: Sequence[int],
    progress: Optional[Callable[[RunResult], None]] = None,
) -> List[RunResult]:
    """Train every (label, params, config) job once per split seed."""
    jobs = list(jobs)
    results: List[RunResult] = []
    for seed in seeds:
        domains = None
        for label, params, config in jobs:
            cfg = with_split_seed(config, seed)
            if domains is None:
                domains = prepare_domains(cfg)
            t0 = time.perf_counter()
            summary = train(cfg, domains=domains)
            res = RunResult(label, seed, float(summary["target_mca"]), time.perf_counter() - t0, dict(params))
            log.info("%s seed %d: target MCA %.4f (%.1fs)", label, seed, res.target_mca, res.seconds)
            results.append(res)
            if progress:
                progress(res)
    return results


def ablation_runs(
    config: TrainConfig,
    seeds: Sequence[int],
    grid: Sequence[Tuple[bool, bool, bool]] = ABLATION_GRID,
    include_baseline: bool = True,
    progress: Optional[Callable[[RunResult], None]] = None,
) -> List[RunResult]:
    """The baseline plus one run per grid row, for each split seed."""
    jobs = []
    if include_baseline:
        jobs.append(("ST", {"ca": 0, "sa": 0, "cona": 0, "uda": "none"}, baseline_config(config)))
    for ca, sa, cona in grid:
        params = {"ca": int(ca), "sa": int(sa), "cona": int(cona), "uda": config.uda.name}
        jobs.append((row_label(ca, sa, cona), params, ablation_config(config, ca, sa, cona)))
    return run_many(jobs, seeds, progress)


def sweep_runs(
    config: TrainConfig,
    path: str,
    values: Sequence[object],
    seeds: Sequence[int],
    include_baseline: bool = True,
    progress: Optional[Callable[[RunResult], None]] = None,
) -> List[RunResult]:
    """One run per value of the dotted config field ``path``, per split seed."""
    jobs = []
    if include_baseline:
        jobs.append(("ST", {path: None}, baseline_config(config)))
    for v in values:
        jobs.append((f"{path}={v}", {path: v}, set_path(config, path, v)))
    return run_many(jobs, seeds, progress)


def summarize(results: Sequence[RunResult]) -> List[Dict[str, object]]:
    """Mean and sample std of target MCA per label, in first-seen order."""
    order: List[str] = []
    groups: Dict[str, List[RunResult]] = {}
    for r in results:
        if r.label not in groups:
            order.append(r.label)
            groups[r.label] = []
        groups[r.label].append(r)
    base = groups.get("ST")
    base_mean = float(np.mean([r.target_mca for r in base])) if base else None
    rows = []
    for label in order:
        vals = np.array([r.target_mca for r in groups[label]])
        row = {
            "label": label,
            **groups[label][0].params,
            "runs": len(vals),
            "mean_mca": float(vals.mean()),
            "std_mca": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "seconds": float(sum(r.seconds for r in groups[label])),
        }
        if base_mean is not None:
            row["delta_vs_st"] = row["mean_mca"] - base_mean
        rows.append(row)
    return rows
