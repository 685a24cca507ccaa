"""Teacher-to-student distillation with the weighted task/KD objective.

``loss = rho * CE(y, student) + (1 - rho) * KL(teacher || student)``, both
terms averaged over samples.  Teachers are anything with a
``predict_proba(X)`` method, so masked teacher views plug in directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import CrossEntropy, GdOptions, Model, TeacherKL, Weighted, fit, kl_div, train_ce
from .mvd import MultimodalDataset

INPUTS = ("a", "b", "ab")


@dataclass(frozen=True)
class KdConfig:
    rho: float = 0.5
    teacher_input: str = "a"
    student_input: str = "b"
    gd: GdOptions = field(default_factory=GdOptions)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho out of [0,1]")
        if self.teacher_input not in INPUTS:
            raise ValueError(f"teacher_input must be one of {INPUTS}")
        if self.student_input not in ("a", "b"):
            raise ValueError("student_input must be 'a' or 'b'")


def kd_loss(student_probs: np.ndarray, teacher_probs: np.ndarray, y: np.ndarray, rho: float,
            clamp: float = 1e-12) -> float:
    s = np.asarray(student_probs, dtype=float)
    t = np.asarray(teacher_probs, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if s.shape != t.shape or s.ndim != 2 or len(y) != s.shape[0]:
        raise ValueError("student, teacher and labels disagree in shape")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho out of [0,1]")
    picked = np.clip(s[np.arange(len(y)), y], clamp, 1 - clamp)
    ce = float(-np.log(picked).mean())
    return rho * ce + (1 - rho) * kl_div(t, s, clamp)


def kd_objective(teacher_probs: np.ndarray, y: np.ndarray, rho: float, clamp: float = 1e-12):
    """Logit-space loss for :func:`mfhlab.models.fit`."""
    return Weighted((rho, CrossEntropy(y, clamp)), (1.0 - rho, TeacherKL(teacher_probs, clamp)))


def distill_from_probs(teacher_probs: np.ndarray, X: np.ndarray, y: np.ndarray, rho: float,
                       student_init: Model, opts: GdOptions = GdOptions()) -> Model:
    if rho == 1.0:
        return train_ce(student_init, X, y, opts, stage="distill")
    if teacher_probs.shape != (np.shape(X)[0], student_init.n_classes):
        raise ValueError("teacher probabilities do not match the student output shape")
    student, _ = fit(student_init, X, kd_objective(teacher_probs, y, rho, opts.prob_clamp), opts,
                     stage="distill")
    return student


def distill(teacher, data: MultimodalDataset, cfg: KdConfig, student_init: Model) -> Model:
    """Train ``student_init`` on ``cfg.student_input`` against a frozen teacher."""
    xt = data.view(cfg.teacher_input)
    xs = data.view(cfg.student_input)
    if xs.shape[1] != student_init.n_inputs:
        raise ValueError(f"student expects {student_init.n_inputs} inputs, "
                         f"modality {cfg.student_input} has {xs.shape[1]}")
    if cfg.rho == 1.0:
        return train_ce(student_init, xs, data.y, cfg.gd, stage="distill")
    teacher_probs = teacher.predict_proba(xt)
    return distill_from_probs(teacher_probs, xs, data.y, cfg.rho, student_init, cfg.gd)


def evaluate(model, X: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of ``argmax predict_proba``; ties go to the lowest class index."""
    y = np.asarray(y)
    if len(y) != np.shape(X)[0]:
        raise ValueError("X and y disagree on the number of samples")
    pred = np.argmax(model.predict_proba(X), axis=1)
    return float(np.mean(pred == y))
