"""Strategy comparison runs: dynamic weight vs grid, average and random search.

Every (task, seed, omega) fit is cached as a metrics CSV under
``<out>/runs/<config-fingerprint>/``, so grid and average search share runs
and reruns over the same directory are free.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datagen import ShiftScenario, make_task, read_dataset, write_dataset
from .trainer import MetricsRow, Omega, TrainConfig, fit, read_metrics, write_metrics

log = logging.getLogger(__name__)

GRID = tuple(round(0.1 * i, 1) for i in range(11))
STRATEGIES = ("dynamic", "grid", "average", "random")


@dataclass(frozen=True)
class Task:
    kind: str
    magnitude: float

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.magnitude:g}"

    def scenario(self, seed: int) -> ShiftScenario:
        return ShiftScenario(self.kind, self.magnitude, seed)


DEFAULT_TASKS = (
    Task("marginal", 2.0),
    Task("marginal", 3.0),
    Task("conditional", 0.75),
    Task("conditional", 1.0),
)


@dataclass
class ExperimentConfig:
    train: TrainConfig
    out: Path
    tasks: Tuple[Task, ...] = DEFAULT_TASKS
    repeats: int = 5
    t: int = 20
    n: int = 600
    wall_clock: bool = False

    def __post_init__(self):
        self.out = Path(self.out)
        self.tasks = tuple(self.tasks)
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if self.t < 1:
            raise ValueError(f"random search needs t >= 1, got {self.t}")
        if not self.tasks:
            raise ValueError("no tasks configured")

    @property
    def seeds(self) -> List[int]:
        return [self.train.seed + i for i in range(self.repeats)]


@dataclass
class StrategyResult:
    strategy: str
    task: str
    seeds: List[int]
    seed_accuracies: List[float]
    accuracies: List[List[float]]
    omegas: List[List[float]] = field(default_factory=list)
    best_omega: Optional[List[float]] = None
    omega_error: Optional[float] = None
    runs: List[List[str]] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.seed_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.seed_accuracies))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StrategyResult":
        return cls(**json.loads(text))


def omega_error(method_acc: float, grid_best_acc: float) -> float:
    """Signed gap to the grid optimum in percentage points."""
    for v in (method_acc, grid_best_acc):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracies must lie in [0, 1], got {v}")
    return (grid_best_acc - method_acc) * 100.0


def attach_error(result: StrategyResult, grid: StrategyResult) -> StrategyResult:
    if result.strategy == "grid":
        result.omega_error = 0.0
        return result
    best = dict(zip(grid.seeds, grid.seed_accuracies))
    missing = [s for s in result.seeds if s not in best]
    if missing:
        raise ValueError(f"grid results lack seeds {missing} for task {result.task}")
    result.omega_error = float(np.mean([omega_error(a, best[s]) for s, a in zip(result.seeds, result.seed_accuracies)]))
    return result


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def config_fingerprint(cfg: TrainConfig) -> str:
    """Hash of everything that shapes a run except the weight and the seed."""
    d = asdict(replace(cfg, omega="dynamic", seed=0, net=replace(cfg.net, init_seed=0)))
    return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def run_tag(omega: Omega) -> str:
    return "dynamic" if omega == "dynamic" else f"fixed-{float(omega)!r}"


class Experiment:
    """Owns an output directory: datasets, cached runs, strategy results."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = cfg.out
        self.fingerprint = config_fingerprint(cfg.train)

    def data_dir(self, task: Task, seed: int) -> Path:
        return self.out / "data" / task.name / f"seed{seed}"

    def dataset(self, task: Task, seed: int):
        """Generate once, persist, and always train on the reloaded copy."""
        path = self.data_dir(task, seed)
        if not (path / "source.csv").exists():
            net = self.cfg.train.net
            src, tgt = make_task(task.scenario(seed), n=self.cfg.n, num_classes=net.num_classes, dim=net.input_dim)
            write_dataset(path, src, tgt)
        return read_dataset(path)

    def run_path(self, task: Task, seed: int, omega: Omega) -> Path:
        return self.out / "runs" / self.fingerprint / task.name / f"seed{seed}" / f"{run_tag(omega)}.csv"

    def run(self, task: Task, seed: int, omega: Omega) -> List[MetricsRow]:
        path = self.run_path(task, seed, omega)
        if path.exists():
            return read_metrics(path)
        src, tgt = self.dataset(task, seed)
        train = replace(self.cfg.train, omega=omega, seed=seed, net=replace(self.cfg.train.net, init_seed=seed))
        log.info("fit %s seed=%d omega=%s", task.name, seed, omega)
        rows = fit(train, src, tgt).metrics
        path.parent.mkdir(parents=True, exist_ok=True)
        write_metrics(path, rows, self.cfg.wall_clock)
        return read_metrics(path)

    def final_accuracy(self, task: Task, seed: int, omega: Omega) -> float:
        rows = self.run(task, seed, omega)
        if not rows:
            raise ValueError("zero-epoch runs have no final accuracy")
        return rows[-1].target_accuracy

    def _rel(self, task, seed, omega) -> str:
        return self.run_path(task, seed, omega).relative_to(self.out).as_posix()

    # -------------------------------------------------------- strategies

    def run_dynamic(self, task: Task) -> StrategyResult:
        accs = [self.final_accuracy(task, s, "dynamic") for s in self.cfg.seeds]
        return StrategyResult(
            "dynamic", task.name, self.cfg.seeds, accs, [[a] for a in accs],
            runs=[[self._rel(task, s, "dynamic")] for s in self.cfg.seeds],
        )

    def _grid_runs(self, task: Task):
        seeds = self.cfg.seeds
        accs = [[self.final_accuracy(task, s, w) for w in GRID] for s in seeds]
        runs = [[self._rel(task, s, w) for w in GRID] for s in seeds]
        return seeds, accs, runs

    def run_grid(self, task: Task) -> StrategyResult:
        seeds, accs, runs = self._grid_runs(task)
        best = [GRID[int(np.argmax(a))] for a in accs]
        return StrategyResult(
            "grid", task.name, seeds, [max(a) for a in accs], accs,
            omegas=[list(GRID)] * len(seeds), best_omega=best, omega_error=0.0, runs=runs,
        )

    def run_average(self, task: Task) -> StrategyResult:
        seeds, accs, runs = self._grid_runs(task)
        return StrategyResult(
            "average", task.name, seeds, [float(np.mean(a)) for a in accs], accs,
            omegas=[list(GRID)] * len(seeds), runs=runs,
        )

    def random_omegas(self, seed: int) -> List[float]:
        rng = np.random.default_rng([seed, 0x52414E44])
        return [float(w) for w in rng.uniform(0.0, 1.0, self.cfg.t)]

    def run_random(self, task: Task) -> StrategyResult:
        seeds = self.cfg.seeds
        omegas = [self.random_omegas(s) for s in seeds]
        accs = [[self.final_accuracy(task, s, w) for w in ws] for s, ws in zip(seeds, omegas)]
        return StrategyResult(
            "random", task.name, seeds, [float(np.mean(a)) for a in accs], accs, omegas=omegas,
            runs=[[self._rel(task, s, w) for w in ws] for s, ws in zip(seeds, omegas)],
        )

    def run_strategy(self, name: str, task: Task) -> StrategyResult:
        fn = {
            "dynamic": self.run_dynamic,
            "grid": self.run_grid,
            "average": self.run_average,
            "random": self.run_random,
        }.get(name)
        if fn is None:
            raise ValueError(f"unknown strategy {name!r}; choose from {STRATEGIES}")
        result = fn(task)
        grid_path = self.result_path(task.name, "grid")
        if name == "grid":
            pass
        elif grid_path.exists():
            attach_error(result, StrategyResult.from_json(grid_path.read_text()))
        self.save(result)
        return result

    def result_path(self, task_name: str, strategy: str) -> Path:
        return self.out / "results" / task_name / f"{strategy}.json"

    def save(self, result: StrategyResult) -> Path:
        path = self.result_path(result.task, result.strategy)
        _atomic_write(path, result.to_json())
        return path


# ---------------------------------------------------------------- report

SUMMARY_COLUMNS = ("strategy", "mean_accuracy", "std", "omega_error")


def _g9(v: Optional[float]) -> str:
    return "nan" if v is None or v != v else format(float(v), ".9g")


@dataclass
class Report:
    summaries: List[Path]
    trajectories: List[Path]
    missing: List[str]


def report(out) -> Report:
    """Write ``summary_<task>.csv`` and per-seed ``omega_<task>_seed<k>.csv`` files.

    Missing run files are collected in ``Report.missing``; summaries are
    written for whatever results remain.
    """
    out = Path(out)
    results_dir = out / "results"
    tasks = sorted(p for p in results_dir.iterdir() if p.is_dir()) if results_dir.is_dir() else []
    found = {t.name: {s: t / f"{s}.json" for s in STRATEGIES if (t / f"{s}.json").exists()} for t in tasks}
    if not any(found.values()):
        raise FileNotFoundError(f"{out}: no strategy results found (0 runs)")
    summaries, trajectories, missing = [], [], []
    for task, files in found.items():
        results = {s: StrategyResult.from_json(p.read_text()) for s, p in files.items()}
        for r in results.values():
            missing += [rel for rels in r.runs for rel in rels if not (out / rel).exists()]
        grid = results.get("grid")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for name in STRATEGIES:
            if name not in results:
                continue
            r = results[name]
            if grid is not None:
                attach_error(r, grid)
            w.writerow([name, _g9(r.mean_accuracy), _g9(r.std), _g9(r.omega_error)])
        path = out / f"summary_{task}.csv"
        _atomic_write(path, buf.getvalue())
        summaries.append(path)
        dyn = results.get("dynamic")
        if dyn is not None:
            for seed, rels in zip(dyn.seeds, dyn.runs):
                src = out / rels[0]
                if not src.exists():
                    continue
                tbuf = io.StringIO()
                tw = csv.writer(tbuf, lineterminator="\n")
                tw.writerow(("epoch", "omega"))
                for row in read_metrics(src):
                    tw.writerow((row.epoch, _g9(row.omega)))
                tpath = out / f"omega_{task}_seed{seed}.csv"
                _atomic_write(tpath, tbuf.getvalue())
                trajectories.append(tpath)
    return Report(summaries, trajectories, sorted(set(missing)))
