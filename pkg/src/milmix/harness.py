"""Repeated-split evaluation over a grid of (fusion preset, augmentation) cells.

All cells of one experiment share the same split, initialisation stream and
visiting-order stream per repetition, so differences between cells come from
the cell alone.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .augment import AugmentConfig
from .core import SPLIT, Dataset, RngStream, SplitPlan, make_splits
from .io import SyntheticSpec, generate_synthetic, load_dataset
from .model import PRESETS, DualStreamModel, ModelConfig, predict
from .train import DivergenceError, TrainConfig, train_one

BETAS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class Cell:
    preset: str
    augment: AugmentConfig

    @property
    def id(self) -> str:
        return f"{self.preset}|{self.augment.label}"


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str | SyntheticSpec
    presets: tuple[str, ...] = ("EMB", "2/2")
    augments: tuple[AugmentConfig, ...] = (AugmentConfig(),)
    repetitions: int = 32
    seed: int = 0
    train_fraction: float = 0.8
    stratified: bool = True
    # False gives every cell its own splits (drawn from a child of the root seed)
    share_splits: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    # ModelConfig fields other than D, C and the fusion weights
    model_options: dict = field(default_factory=dict)
    # explicit cell list; when None the grid is presets x augments
    cells: tuple[Cell, ...] | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        for p in self.presets:
            if p not in PRESETS:
                raise ValueError(f"unknown fusion preset {p!r}")
        if self.cells is None and (not self.presets or not self.augments):
            raise ValueError("experiment grid is empty")
        if self.cells is not None and not self.cells:
            raise ValueError("experiment grid is empty")

    def grid(self) -> list[Cell]:
        if self.cells is not None:
            return list(self.cells)
        return [Cell(p, a) for p in self.presets for a in self.augments]


@dataclass
class ExperimentResult:
    cell_id: str
    model_preset: str
    augment: AugmentConfig
    accuracies: list[float]
    seed: int

    @property
    def n(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        """Sample standard deviation (n - 1); nan for a single repetition."""
        if self.n < 2:
            return float("nan")
        return float(np.std(self.accuracies, ddof=1))


class CellFailure(RuntimeError):
    def __init__(self, cell_id: str, repetition: int, cause: Exception):
        super().__init__(f"cell {cell_id!r}, repetition {repetition}: {cause}")
        self.cell_id = cell_id
        self.repetition = repetition


def evaluate(model: DualStreamModel, test_bags, test_labels) -> float:
    """Fraction of bags whose fused-logit argmax matches the label argmax."""
    if len(test_bags) == 0:
        raise ValueError("empty test set")
    hits = sum(predict(model, b) == int(np.argmax(lab.probs)) for b, lab in zip(test_bags, test_labels))
    return hits / len(test_bags)


def resolve_dataset(source) -> Dataset:
    if isinstance(source, Dataset):
        return source
    if isinstance(source, SyntheticSpec):
        return generate_synthetic(source)
    return load_dataset(source)


def full_grid(
    qs: Iterable[float] = (0.25, 0.5, 0.75),
    sigmas: Iterable[float] = (0.1, 0.5, 1.0),
    betas: Iterable[float] = BETAS,
) -> list[Cell]:
    """The full comparison grid.

    First every fusion preset without augmentation, then EMB and 2/2 with
    each sampling/noise baseline and each MixUp variant.
    """
    cells = [Cell(p, AugmentConfig()) for p in PRESETS]
    baselines = [AugmentConfig(kind="random_sampling", q=q) for q in qs]
    baselines += [AugmentConfig(kind="selective_sampling", q=q) for q in qs]
    baselines += [AugmentConfig(kind="gaussian_noise", sigma=s) for s in sigmas]
    mixups = [AugmentConfig(kind="inter_v1"), AugmentConfig(kind="inter_v2")]
    mixups += [AugmentConfig(kind=k, beta=b) for k in ("intra_linear", "intra_multilinear") for b in betas]
    for aug in baselines + mixups:
        for p in ("EMB", "2/2"):
            cells.append(Cell(p, aug))
    return cells


# worker-process state, set once per process by _init_worker
_WORKER: dict = {}


def _init_worker(dataset, plans, spec):
    _WORKER.update(dataset=dataset, plans=plans, spec=spec)


def _run_task(cell: Cell, repetition: int) -> float:
    data: Dataset = _WORKER["dataset"]
    plan: SplitPlan = _WORKER["plans"][cell.id][repetition]
    spec: ExperimentSpec = _WORKER["spec"]
    train_set = data.subset(plan.train_indices)
    test_set = data.subset(plan.test_indices)
    mcfg = ModelConfig(D=data.D, C=data.C, **spec.model_options).with_preset(cell.preset)
    tcfg = replace(spec.train, augment=cell.augment, seed=spec.seed)
    try:
        net, _ = train_one(train_set, tcfg, mcfg, RngStream(spec.seed, 0, (repetition,)))
    except (DivergenceError, FloatingPointError) as exc:
        raise CellFailure(cell.id, repetition, exc) from exc
    return evaluate(net, test_set.bags, test_set.labels)


def _task_result(args):
    cell, repetition = args
    try:
        return cell, repetition, _run_task(cell, repetition), None
    except CellFailure as exc:
        return cell, repetition, None, str(exc)


def result_record(cell: Cell, repetition: int, accuracy: float, seed: int) -> dict:
    return {
        "cell_id": cell.id,
        "model_preset": cell.preset,
        "augment": cell.augment.to_dict(),
        "repetition": repetition,
        "accuracy": accuracy,
        "seed": seed,
    }


def run_experiment(
    spec: ExperimentSpec,
    jobs: int = 1,
    on_result: Callable[[dict], None] | None = None,
    completed: dict[tuple[str, int], float] | None = None,
    dataset: Dataset | None = None,
) -> list[ExperimentResult]:
    """Train and test every cell on every repetition.

    ``dataset`` short-circuits loading ``spec.dataset``.
    ``completed`` maps ``(cell_id, repetition)`` to accuracies already known
    (e.g. from a results file); those tasks are skipped. ``on_result`` is
    called with one record per finished task, in completion order. Results
    do not depend on ``jobs``.
    """
    data = dataset if dataset is not None else resolve_dataset(spec.dataset)
    cells = spec.grid()
    ids = [c.id for c in cells]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate cells in experiment grid")
    plans = {}
    shared = make_splits(data, spec.repetitions, spec.train_fraction, spec.seed, spec.stratified)
    for k, c in enumerate(cells):
        if spec.share_splits:
            plans[c.id] = shared
        else:
            cell_seed = int(RngStream(spec.seed, SPLIT, (k,)).integers(0, 2**63))
            plans[c.id] = make_splits(data, spec.repetitions, spec.train_fraction, cell_seed, spec.stratified)
    done = dict(completed or {})
    todo = [(c, r) for c in cells for r in range(spec.repetitions) if (c.id, r) not in done]

    failures = []

    def collect(item):
        cell, r, acc, err = item
        if err is not None:
            failures.append(err)
            return
        done[(cell.id, r)] = acc
        if on_result is not None:
            on_result(result_record(cell, r, acc, spec.seed))

    if jobs <= 1 or len(todo) <= 1:
        _init_worker(data, plans, spec)
        for task in todo:
            collect(_task_result(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(data, plans, spec)) as pool:
            for item in pool.map(_task_result, todo):
                collect(item)
    if failures:
        raise RuntimeError("; ".join(failures))

    return [
        ExperimentResult(c.id, c.preset, c.augment, [done[(c.id, r)] for r in range(spec.repetitions)], spec.seed)
        for c in cells
    ]


def read_results(path) -> dict[tuple[str, int], float]:
    """Completed ``(cell_id, repetition) -> accuracy`` pairs of a JSON-lines results file."""
    path = Path(path)
    done = {}
    if not path.exists():
        return done
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            # a torn last line from an interrupted run
            continue
        done[(rec["cell_id"], int(rec["repetition"]))] = float(rec["accuracy"])
    return done


def summary_csv(results: list[ExperimentResult]) -> str:
    lines = ["cell_id,mean,std,n"]
    for res in results:
        lines.append(f"{_csv_field(res.cell_id)},{res.mean!r},{res.std!r},{res.n}")
    return "\n".join(lines) + "\n"


def _csv_field(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def default_jobs() -> int:
    return os.cpu_count() or 1
