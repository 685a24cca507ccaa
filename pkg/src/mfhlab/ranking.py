"""Permutation ranking of modality-general channels and channel nullification.

Two unimodal networks are trained jointly so their outputs agree while each
still fits the labels.  A channel of the ranked modality is salient when
shuffling it breaks that agreement.  Salience drives nullify plans, which
replace a set of channels by their training-set means to build teachers
that lean on modality-general (or modality-specific) information.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import (GdOptions, Model, _backward, _dlogits_to_dscores, _forward,
                     _scores_to_logits, _unflatten, ce_from_logits, gradient_descent,
                     make_model, softmax, train_ce)
from .mvd import GENERAL, MultimodalDataset
from .seeding import SeedLike, as_generator, substream

MODES = ("modality-general", "modality-specific", "random")
DIST_SPACES = ("logits", "probs")


def _outputs(kind, scores, space):
    if space == "logits":
        return scores
    return softmax(_scores_to_logits(kind, scores))


def output_distance(f1: Model, X1: np.ndarray, f2: Model, X2: np.ndarray,
                    space: str = "logits") -> float:
    """Mean squared difference between the two networks' outputs."""
    if space not in DIST_SPACES:
        raise ValueError(f"space must be one of {DIST_SPACES}")
    o1 = _outputs(f1.kind, f1.scores(X1), space)
    o2 = _outputs(f2.kind, f2.scores(X2), space)
    if o1.shape != o2.shape:
        raise ValueError("the two networks produce outputs of different shape")
    return float(np.mean((o1 - o2) ** 2))


def _dist_and_grads(kind1, s1, kind2, s2, space):
    """Distance value and its gradient with respect to each network's scores."""
    if space == "logits":
        diff = s1 - s2
        value = np.mean(diff ** 2)
        g = 2.0 * diff / diff.size
        return value, g, -g
    p1 = softmax(_scores_to_logits(kind1, s1))
    p2 = softmax(_scores_to_logits(kind2, s2))
    diff = p1 - p2
    value = np.mean(diff ** 2)
    gp = 2.0 * diff / diff.size

    def to_scores(kind, p, g):
        dlogits = p * (g - (p * g).sum(axis=1, keepdims=True))
        return _dlogits_to_dscores(kind, dlogits)

    return value, to_scores(kind1, p1, gp), to_scores(kind2, p2, -gp)


def joint_objective(f1: Model, X1: np.ndarray, f2: Model, X2: np.ndarray, y: np.ndarray,
                    space: str = "logits", clamp: float = 1e-12):
    """``Dist(f1(X1), f2(X2)) + CE(y, f1(X1)) + CE(y, f2(X2))`` over both flat vectors."""
    X1, X2 = f1._check(X1), f2._check(X2)
    y = np.asarray(y, dtype=np.int64)
    lay1, lay2 = f1._layout(), f2._layout()
    split = f1.flatten().size

    def objective(vec):
        p1 = _unflatten(lay1, vec[:split])
        p2 = _unflatten(lay2, vec[split:])
        s1, c1 = _forward(f1.kind, p1, X1)
        s2, c2 = _forward(f2.kind, p2, X2)
        dist, ds1, ds2 = _dist_and_grads(f1.kind, s1, f2.kind, s2, space)
        ce1, g1 = ce_from_logits(_scores_to_logits(f1.kind, s1), y, clamp)
        ce2, g2 = ce_from_logits(_scores_to_logits(f2.kind, s2), y, clamp)
        ds1 = ds1 + _dlogits_to_dscores(f1.kind, g1)
        ds2 = ds2 + _dlogits_to_dscores(f2.kind, g2)
        gr1 = _backward(f1.kind, p1, X1, c1, ds1)
        gr2 = _backward(f2.kind, p2, X2, c2, ds2)
        grad = np.concatenate([np.ravel(gr1[n]) for n, _ in lay1] + [np.ravel(gr2[n]) for n, _ in lay2])
        return dist + ce1 + ce2, grad

    return objective


def joint_train(data: MultimodalDataset, opts: GdOptions = GdOptions(), model_kind: str = "logistic",
                rng: SeedLike = None, space: str = "logits", hidden: int = 16) -> tuple[Model, Model]:
    """Jointly fit ``f1`` on modality a and ``f2`` on modality b."""
    gen = as_generator(rng)
    f1 = make_model(model_kind, data.xa.shape[1], gen, hidden=hidden)
    f2 = make_model(model_kind, data.xb.shape[1], gen, hidden=hidden)
    objective = joint_objective(f1, data.xa, f2, data.xb, data.y, space, opts.prob_clamp)
    split = f1.flatten().size
    res = gradient_descent(objective, np.concatenate([f1.flatten(), f2.flatten()]), opts,
                           stage="joint_train")
    return f1.with_flat(res.x[:split]), f2.with_flat(res.x[split:])


@dataclass(frozen=True, eq=False)
class SaliencyVector:
    p: np.ndarray
    permutations_used: int
    degenerate: bool = False
    space: str = "logits"

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return len(self.p)

    def order(self) -> np.ndarray:
        """Channel indices by ascending salience, ties by lower index first."""
        return np.lexsort((np.arange(len(self.p)), self.p))

    def top(self, k: int) -> np.ndarray:
        """The ``k`` most salient channels; ties favour the lower index."""
        return np.lexsort((np.arange(len(self.p)), -self.p))[:k]


def rank_features(f1: Model, f2: Model, data: MultimodalDataset, target: str = "a", M: int = 5,
                  seed: int = 0, space: str = "logits") -> SaliencyVector:
    """Average output distance after shuffling each channel of ``target``, max-normalised.

    Channel ``i``, repeat ``m`` draws its permutation from the substream
    ``(seed, i, m)``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if target == "a":
        moving, fixed_model, fixed_x = f1, f2, data.xb
        X = f1._check(data.xa)
    elif target == "b":
        moving, fixed_model, fixed_x = f2, f1, data.xa
        X = f2._check(data.xb)
    else:
        raise ValueError("target must be 'a' or 'b'")
    ref = _outputs(fixed_model.kind, fixed_model.scores(fixed_x), space)
    base = moving.scores(X)
    n, d = X.shape
    p = np.zeros(d)
    for i in range(d):
        col = X[:, i]
        total = 0.0
        for m in range(M):
            perm = substream(seed, i, m).permutation(n)
            # only column i moves, so shift the cached scores instead of a full forward
            if moving.kind == "logistic-binary":
                s = base + ((col[perm] - col) * moving.params["theta"][i])[:, None]
            else:
                Xt = X.copy()
                Xt[:, i] = col[perm]
                s = moving.scores(Xt)
            total += np.mean((_outputs(moving.kind, s, space) - ref) ** 2)
        p[i] = total / M
    peak = p.max()
    if not peak > 0:
        warnings.warn("all salience values are zero; returning the zero vector", RuntimeWarning)
        return SaliencyVector(np.zeros(d), M, degenerate=True, space=space)
    return SaliencyVector(p / peak, M, space=space)


@dataclass(frozen=True, eq=False)
class NullifyPlan:
    mode: str
    ratio: float
    channels: tuple[int, ...]
    replacement: np.ndarray

    def __post_init__(self):
        rep = np.array(self.replacement, dtype=float)
        if not np.all(np.isfinite(rep)):
            raise ValueError("replacement values must be finite")
        rep.setflags(write=False)
        object.__setattr__(self, "replacement", rep)
        object.__setattr__(self, "channels", tuple(sorted(int(c) for c in self.channels)))

    @property
    def width(self) -> int:
        return len(self.replacement)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.width, dtype=bool)
        m[list(self.channels)] = True
        return m


def nullify_count(ratio: float, d: int) -> int:
    return int(round(ratio * d))


def make_nullify_plan(saliency: SaliencyVector | None, mode: str, ratio: float, X_train: np.ndarray,
                      rng: SeedLike = None) -> NullifyPlan:
    """Pick ``round(ratio * d)`` channels to replace by their training means.

    modality-general drops the least salient channels, modality-specific the
    most salient, random draws without replacement.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    X_train = np.asarray(X_train, dtype=float)
    d = X_train.shape[1]
    k = nullify_count(ratio, d)
    if mode == "random":
        chosen = as_generator(rng).choice(d, size=k, replace=False)
    else:
        if saliency is None or len(saliency) != d:
            raise ValueError("a saliency vector matching X_train is required")
        chosen = saliency.order()[:k] if mode == "modality-general" else saliency.top(k)
    return NullifyPlan(mode, float(ratio), tuple(chosen), X_train.mean(axis=0))


def ground_truth_plan(roles, X_train: np.ndarray) -> NullifyPlan:
    """Nullify every channel whose true role is not general-decisive."""
    X_train = np.asarray(X_train, dtype=float)
    chosen = [j for j, r in enumerate(roles) if r != GENERAL]
    return NullifyPlan("ground-truth-general", len(chosen) / len(roles), tuple(chosen), X_train.mean(axis=0))


def apply_nullify(plan: NullifyPlan, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != plan.width:
        raise ValueError(f"expected {plan.width} columns, got shape {X.shape}")
    out = X.copy()
    if plan.channels:
        idx = list(plan.channels)
        out[:, idx] = plan.replacement[idx]
    return out


class MaskedTeacher:
    """Teacher view that sees inputs through a nullify plan."""

    def __init__(self, model: Model, plan: NullifyPlan, retrained: bool = False):
        if plan.width != model.n_inputs:
            raise ValueError("plan and teacher disagree on input width")
        self.model = model
        self.plan = plan
        self.retrained = retrained

    @property
    def n_inputs(self) -> int:
        return self.model.n_inputs

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_proba(apply_nullify(self.plan, X))


def masked_teacher(teacher: Model, plan: NullifyPlan) -> MaskedTeacher:
    return MaskedTeacher(teacher, plan)


def retrained_teacher(model_init: Model, plan: NullifyPlan, X_train: np.ndarray, y: np.ndarray,
                      opts: GdOptions = GdOptions()) -> MaskedTeacher:
    """Fresh teacher fit on the nullified training matrix, masked at inference too."""
    model = train_ce(model_init, apply_nullify(plan, X_train), y, opts, stage="teacher_retrain")
    return MaskedTeacher(model, plan, retrained=True)


def save_saliency(saliency: SaliencyVector, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "salience"])
        for j, v in enumerate(saliency.p):
            w.writerow([j, repr(float(v))])


def save_plan(plan: NullifyPlan, path) -> None:
    mask = plan.mask()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "nullified", "replacement_value"])
        for j in range(plan.width):
            w.writerow([j, int(mask[j]), repr(float(plan.replacement[j]))])
