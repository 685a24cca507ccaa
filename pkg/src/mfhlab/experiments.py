"""Seeded multi-run sweeps with mean / sample-std aggregation.

Every random draw comes from a substream keyed by
``(master_seed, sweep code, point key, seed index, stage)``, so results do
not depend on scheduling, and adding a stage never shifts the draws of
another.  Within a seed all grid points share their random draws (point
key 0): the hyperplane, the samples and the initialisations are common
random numbers, and only what the point itself changes differs between
points.  Point-specific draws, such as random nullify plans, carry the
point key.
"""
from __future__ import annotations

import csv
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .kd import distill_from_probs, evaluate
from .models import GdOptions, Model, make_model, train_ce
from .mvd import (ALPHA_TOTALS, GAMMA_OVERLAPS, GENERAL, build_alpha_point, build_gamma_point,
                  build_nested_point, build_table2_point, sample, table2_general_count)
from .ranking import (MaskedTeacher, ground_truth_plan, joint_train, make_nullify_plan,
                      rank_features, retrained_teacher)
from .seeding import substream
from .theory import TheoremCertificate, verify_bound

KINDS = ("gamma", "alpha", "table2", "nullify_ratio", "ranking", "permutation_count")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
_VERIFY_CODE = 100

# stage codes; never renumber, only append
DATA, TEST, TEACHER, NOKD, KD, MG_TEACHER, MG_KD, JOINT, RANK, RANDOM_PLAN, RERUN, INIT = range(12)

DEFAULT_POINTS = {
    "gamma": GAMMA_OVERLAPS,
    "alpha": ALPHA_TOTALS,
    "table2": (0.25, 0.5, 0.75),
    "nullify_ratio": (0.0, 0.25, 0.5, 0.75, 0.9),
    "ranking": (1 / 3, 0.5),
    "permutation_count": (1, 2, 5, 10, 20),
}
DEFAULT_RHO = {"gamma": 0.5, "alpha": 0.5, "table2": 0.5, "nullify_ratio": 0.0, "ranking": 0.5,
               "permutation_count": 0.0}
DEFAULT_N_TRAIN = {"ranking": 1000}

# nullify / permutation sweeps: 20 general, 20 specific and 10 noise channels in modality a
NULLIFY_GENERAL, NULLIFY_DECISIVE = 20, 40
RERUNS = 5

RECIPES = {
    "gamma": "d1=25, d2=50, d=20, J1={0..9}, J2={10-overlap..19-overlap}; point = overlap",
    "alpha": "d1=d2=50, J1={0..d-1}, J2={0..9}; point = d_total",
    "table2": "d1=d2=50, d=12, J1={0..11}, J2={0..12*gamma-1}; point = gamma",
    "nullify_ratio": f"d1=d2=50, J1={{0..{NULLIFY_DECISIVE - 1}}}, J2={{0..{NULLIFY_GENERAL - 1}}}; "
                     "point = nullified ratio of modality a",
    "ranking": "d1=d2=50, d=12, J1={0..11}, J2={0..12*gamma-1}; point = gamma",
    "permutation_count": f"d1=d2=50, J1={{0..{NULLIFY_DECISIVE - 1}}}, J2={{0..{NULLIFY_GENERAL - 1}}}; "
                         "point = M",
}


@dataclass(frozen=True)
class SweepConfig:
    """One sweep.  ``None`` for points, rho or n_train selects the kind's default."""

    kind: str
    points: tuple | None = None
    n_train: int | None = None
    n_test: int = 1000
    rho: float | None = None
    n_seeds: int = 10
    master_seed: int = 7
    model_kind: str = "logistic-binary"
    gd: GdOptions = field(default_factory=GdOptions)
    M: int = 5
    nullify_ratio: float = 0.75
    dist_space: str = "logits"
    hidden: int = 16
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be at least 1")
        if self.n_test < 1 or (self.n_train is not None and self.n_train < 1):
            raise ValueError("n_train and n_test must be positive")
        if self.rho is not None and not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho out of [0,1]")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not 0.0 <= self.nullify_ratio <= 1.0:
            raise ValueError("nullify_ratio out of [0,1]")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.points is not None:
            object.__setattr__(self, "points", tuple(self.points))
            if not self.points:
                raise ValueError("points must not be empty")

    @property
    def resolved_points(self) -> tuple:
        return self.points if self.points is not None else DEFAULT_POINTS[self.kind]

    @property
    def resolved_rho(self) -> float:
        return self.rho if self.rho is not None else DEFAULT_RHO[self.kind]

    @property
    def resolved_n_train(self) -> int:
        return self.n_train if self.n_train is not None else DEFAULT_N_TRAIN.get(self.kind, 200)


@dataclass(frozen=True)
class ResultRow:
    sweep_kind: str
    point: float
    metric: str
    mean: float
    std: float
    n_seeds: int
    values: tuple = field(default=(), repr=False, compare=False)


# -- helpers ------------------------------------------------------------------------
def _stream(cfg: SweepConfig, point_key: int, seed: int, stage: int, *extra: int):
    return substream(cfg.master_seed, _KIND_CODE[cfg.kind], point_key, seed, stage, *extra)


def _init(cfg: SweepConfig, d: int, point_key: int, seed: int, stage: int) -> Model:
    return make_model(cfg.model_kind, d, _stream(cfg, point_key, seed, INIT, stage), hidden=cfg.hidden)


def _draw(cfg, spec, point_key, seed):
    train = sample(spec, cfg.resolved_n_train, _stream(cfg, point_key, seed, DATA))
    test = sample(spec, cfg.n_test, _stream(cfg, point_key, seed, TEST))
    return train, test


def _student(cfg, teacher, train, point_key, seed, stage):
    probs = teacher.predict_proba(train.xa)
    init = _init(cfg, train.xb.shape[1], point_key, seed, stage)
    return distill_from_probs(probs, train.xb, train.y, cfg.resolved_rho, init, cfg.gd)


def _point_key(kind, point) -> int:
    if kind in ("gamma", "alpha", "permutation_count"):
        return int(point)
    if kind in ("table2", "ranking"):
        return table2_general_count(point)
    return int(round(float(point) * 10000))


def _point_value(kind, point) -> float:
    """x-axis value reported for a grid point."""
    if kind == "gamma":
        return float(Fraction(int(point), 20 - int(point)))
    if kind == "alpha":
        return float(1 - Fraction(10, int(point)))
    if kind in ("table2", "ranking"):
        return float(Fraction(table2_general_count(point), 12))
    return float(point)


def _spec_for(cfg, point, seed):
    rng = _stream(cfg, 0, seed, DATA, 1)
    if cfg.kind == "gamma":
        return build_gamma_point(int(point), rng)
    if cfg.kind == "alpha":
        return build_alpha_point(int(point), rng)
    return build_table2_point(point, rng)


# -- per-seed workers -----------------------------------------------------------------
def _crossmodal_task(cfg: SweepConfig, point, seed: int) -> dict:
    key = 0
    spec = _spec_for(cfg, point, seed)
    train, test = _draw(cfg, spec, key, seed)
    teacher = train_ce(_init(cfg, spec.d1, key, seed, TEACHER), train.xa, train.y, cfg.gd, stage="teacher")
    nokd = train_ce(_init(cfg, spec.d2, key, seed, NOKD), train.xb, train.y, cfg.gd, stage="student_nokd")
    kd = _student(cfg, teacher, train, key, seed, KD)
    out = {
        "teacher_acc": evaluate(teacher, test.xa, test.y),
        "student_nokd_acc": evaluate(nokd, test.xb, test.y),
        "student_kd_acc": evaluate(kd, test.xb, test.y),
    }
    out["kd_gain"] = out["student_kd_acc"] - out["student_nokd_acc"]
    if cfg.kind == "table2":
        plan = ground_truth_plan(train.roles_a, train.xa)
        mg_teacher = retrained_teacher(_init(cfg, spec.d1, key, seed, MG_TEACHER), plan, train.xa, train.y,
                                       cfg.gd)
        mg_kd = _student(cfg, mg_teacher, train, key, seed, MG_KD)
        out["teacher_mg_acc"] = evaluate(mg_teacher, test.xa, test.y)
        out["student_mg_kd_acc"] = evaluate(mg_kd, test.xb, test.y)
    return {(point, m): v for m, v in out.items()}


def fs_accuracy(saliency: np.ndarray, roles) -> float:
    """Share of channels whose top-k / rest split matches general / non-general.

    ``k`` is the true number of general channels; ties favour lower indices.
    """
    is_general = np.array([r == GENERAL for r in roles])
    k = int(is_general.sum())
    order = np.lexsort((np.arange(len(saliency)), -np.asarray(saliency, dtype=float)))
    predicted = np.zeros(len(saliency), dtype=bool)
    predicted[order[:k]] = True
    return float(np.mean(predicted == is_general))


def _ranking_task(cfg: SweepConfig, point, seed: int) -> dict:
    key = 0
    spec = _spec_for(cfg, point, seed)
    train = sample(spec, cfg.resolved_n_train, _stream(cfg, key, seed, DATA))
    f1, f2 = joint_train(train, cfg.gd, cfg.model_kind, _stream(cfg, key, seed, JOINT), cfg.dist_space,
                         cfg.hidden)
    rank_seed = int(_stream(cfg, key, seed, RANK).integers(2 ** 63))
    sal = rank_features(f1, f2, train, "a", cfg.M, rank_seed, cfg.dist_space)
    baseline = _stream(cfg, key, seed, RANDOM_PLAN).random(spec.d1)
    return {
        (point, "fs_acc"): fs_accuracy(sal.p, train.roles_a),
        (point, "fs_acc_random"): fs_accuracy(baseline, train.roles_a),
    }


def _shared_setup(cfg: SweepConfig, seed: int):
    """Data, teachers and jointly trained ranking pair shared by every point of a seed."""
    spec = build_nested_point(NULLIFY_GENERAL, NULLIFY_DECISIVE, _stream(cfg, 0, seed, DATA, 1))
    train, test = _draw(cfg, spec, 0, seed)
    teacher = train_ce(_init(cfg, spec.d1, 0, seed, TEACHER), train.xa, train.y, cfg.gd, stage="teacher")
    nokd = train_ce(_init(cfg, spec.d2, 0, seed, NOKD), train.xb, train.y, cfg.gd, stage="student_nokd")
    f1, f2 = joint_train(train, cfg.gd, cfg.model_kind, _stream(cfg, 0, seed, JOINT), cfg.dist_space,
                         cfg.hidden)
    return spec, train, test, teacher, nokd, f1, f2


def _rank_seed(cfg, seed, rerun=0):
    return int(_stream(cfg, 0, seed, RANK, rerun).integers(2 ** 63))


class _KdCache:
    """Memoises crossmodal students by nullified set; equal plans give equal students."""

    def __init__(self, cfg, teacher, train, seed):
        self.cfg, self.teacher, self.train, self.seed = cfg, teacher, train, seed
        self._done = {}

    def __call__(self, plan):
        if plan.channels not in self._done:
            view = MaskedTeacher(self.teacher, plan)
            self._done[plan.channels] = _student(self.cfg, view, self.train, 0, self.seed, KD)
        return self._done[plan.channels]


def _nullify_task(cfg: SweepConfig, seed: int) -> dict:
    spec, train, test, teacher, nokd, f1, f2 = _shared_setup(cfg, seed)
    sal = rank_features(f1, f2, train, "a", cfg.M, _rank_seed(cfg, seed), cfg.dist_space)
    students = _KdCache(cfg, teacher, train, seed)
    empty = make_nullify_plan(sal, "modality-general", 0.0, train.xa)
    regular = evaluate(students(empty), test.xb, test.y)
    nokd_acc = evaluate(nokd, test.xb, test.y)
    out = {}
    for ratio in cfg.resolved_points:
        key = _point_key(cfg.kind, ratio)
        out[(ratio, "student_regular_kd_acc")] = regular
        out[(ratio, "student_nokd_acc")] = nokd_acc
        for mode, name in (("modality-general", "general"), ("modality-specific", "specific"),
                           ("random", "random")):
            plan = make_nullify_plan(sal, mode, float(ratio), train.xa,
                                     _stream(cfg, key, seed, RANDOM_PLAN))
            out[(ratio, f"student_{name}_kd_acc")] = evaluate(students(plan), test.xb, test.y)
            out[(ratio, f"teacher_{name}_acc")] = evaluate(MaskedTeacher(teacher, plan), test.xa, test.y)
    return out


def _permutation_task(cfg: SweepConfig, seed: int) -> dict:
    spec, train, test, teacher, nokd, f1, f2 = _shared_setup(cfg, seed)
    students = _KdCache(cfg, teacher, train, seed)
    out = {}
    for M in cfg.resolved_points:
        M = int(M)
        runs = [rank_features(f1, f2, train, "a", M, _rank_seed(cfg, seed, r), cfg.dist_space).p
                for r in range(RERUNS)]
        plan = make_nullify_plan(rank_features(f1, f2, train, "a", M, _rank_seed(cfg, seed), cfg.dist_space),
                                 "modality-general", cfg.nullify_ratio, train.xa)
        out[(M, "student_general_kd_acc")] = evaluate(students(plan), test.xb, test.y)
        out[(M, "salience_rerun_var")] = float(np.mean(np.var(np.array(runs), axis=0, ddof=1)))
    return out


_POINT_TASKS = {"gamma": _crossmodal_task, "alpha": _crossmodal_task, "table2": _crossmodal_task,
                "ranking": _ranking_task}
_SEED_TASKS = {"nullify_ratio": _nullify_task, "permutation_count": _permutation_task}


def _run_unit(args):
    cfg, point, seed = args
    if cfg.kind in _POINT_TASKS:
        return _POINT_TASKS[cfg.kind](cfg, point, seed)
    return _SEED_TASKS[cfg.kind](cfg, seed)


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def _map(fn, units, jobs):
    if jobs <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, units))


# -- aggregation ---------------------------------------------------------------------
def aggregate(kind: str, samples: dict) -> list[ResultRow]:
    """``{(point, metric): [per-seed values]}`` -> rows sorted by (point value, metric)."""
    rows = []
    for (point, metric), vals in samples.items():
        vals = [float(v) for v in vals]
        # exact rational arithmetic: identical runs give their value back and std 0
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        rows.append(ResultRow(kind, _point_value(kind, point), metric, statistics.mean(vals), std, len(vals),
                              tuple(vals)))
    rows.sort(key=lambda r: (r.point, r.metric))
    return rows


def run_sweep(cfg: SweepConfig) -> list[ResultRow]:
    seeds = range(cfg.n_seeds)
    if cfg.kind in _POINT_TASKS:
        units = [(cfg, p, s) for p in cfg.resolved_points for s in seeds]
    else:
        units = [(cfg, None, s) for s in seeds]
    samples: dict = {}
    for result in _map(_run_unit, units, cfg.jobs):
        for key, value in result.items():
            samples.setdefault(key, []).append(value)
    return aggregate(cfg.kind, samples)


def _checked(cfg, kind):
    if cfg.kind != kind:
        raise ValueError(f"expected a {kind} sweep config, got {cfg.kind}")
    return run_sweep(cfg)


def run_gamma_sweep(cfg: SweepConfig) -> list[ResultRow]:
    return _checked(cfg, "gamma")


def run_alpha_sweep(cfg: SweepConfig) -> list[ResultRow]:
    return _checked(cfg, "alpha")


def run_table2(cfg: SweepConfig) -> list[ResultRow]:
    """Regular and ground-truth-general teachers with their crossmodal students."""
    return _checked(cfg, "table2")


def run_nullify_sweep(cfg: SweepConfig) -> list[ResultRow]:
    return _checked(cfg, "nullify_ratio")


def run_ranking_eval(cfg: SweepConfig) -> list[ResultRow]:
    return _checked(cfg, "ranking")


def run_permutation_ablation(cfg: SweepConfig) -> list[ResultRow]:
    return _checked(cfg, "permutation_count")


def table(rows) -> dict:
    """``{point: {metric: ResultRow}}`` view of a result list."""
    out: dict = {}
    for r in rows:
        out.setdefault(r.point, {})[r.metric] = r
    return out


# -- bound certificates -------------------------------------------------------------
VERIFY_OVERLAPS = (0, 2, 4, 6, 8)


def _verify_instance(args) -> TheoremCertificate:
    master, index, n = args
    overlap = VERIFY_OVERLAPS[index % len(VERIFY_OVERLAPS)]
    spec = build_gamma_point(overlap, substream(master, _VERIFY_CODE, index, DATA, 1))
    data = sample(spec, n, substream(master, _VERIFY_CODE, index, DATA))
    teacher = train_ce(make_model("logistic-binary", spec.d1, bias=False), data.xa, data.y, stage="teacher")
    return verify_bound(data, teacher, seed=index)


def run_verify_bound(instances: int = 100, n: int = 200, master_seed: int = 7,
                     jobs: int = 1) -> list[TheoremCertificate]:
    """Certificates for ``instances`` gamma-grid datasets (overlaps 0..8 in turn)."""
    if instances < 1:
        raise ValueError("instances must be at least 1")
    return _map(_verify_instance, [(master_seed, i, n) for i in range(instances)], jobs)


# -- output ------------------------------------------------------------------------------
RESULT_COLUMNS = ("sweep_kind", "point", "metric", "mean", "std", "n_seeds")


def save_results(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r.sweep_kind, repr(r.point), r.metric, repr(r.mean), repr(r.std), r.n_seeds])


def load_results(path) -> list[ResultRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(RESULT_COLUMNS)}")
        return [ResultRow(r["sweep_kind"], float(r["point"]), r["metric"], float(r["mean"]), float(r["std"]),
                          int(r["n_seeds"])) for r in reader]


def config_echo(cfg: SweepConfig) -> dict:
    echo = asdict(cfg)
    echo["points"] = list(cfg.resolved_points)
    echo["rho"] = cfg.resolved_rho
    echo["n_train"] = cfg.resolved_n_train
    return echo


def save_metadata(cfg: SweepConfig, path, wall_time: float) -> None:
    meta = {
        "config": config_echo(cfg),
        "master_seed": cfg.master_seed,
        "library_version": __version__,
        "wall_time_s": round(wall_time, 3),
        "data_recipe": RECIPES[cfg.kind],
        "permutation_split": "train",
        "student_split": "teacher training split",
        "teacher_view": {"table2": "ground-truth general, retrained on nullified data",
                         "nullify_ratio": "ranked, masked at inference",
                         "permutation_count": "ranked general, masked at inference"}.get(cfg.kind, "regular"),
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


__all__ = [
    "SweepConfig", "ResultRow", "run_sweep", "run_gamma_sweep", "run_alpha_sweep", "run_table2",
    "run_nullify_sweep", "run_ranking_eval", "run_permutation_ablation", "run_verify_bound", "aggregate",
    "fs_accuracy", "table", "save_results", "load_results", "save_metadata", "default_jobs",
]
