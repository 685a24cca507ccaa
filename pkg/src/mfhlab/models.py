"""Small differentiable classifiers, loss primitives and full-batch GD.

Three model kinds share one interface:

* ``logistic-binary``: a single score ``z = x @ theta + bias``; the class
  probabilities are ``(1 - sigmoid(z), sigmoid(z))``.
* ``softmax-linear``: scores ``x @ W.T + b`` over ``K`` classes.
* ``mlp1``: one rectified hidden layer followed by a linear softmax head.

Every loss is written against the logit matrix (``n x K``) and returns its
gradient with respect to the logits; :meth:`Model.backward` pushes that
gradient to the parameters.  Training functions never mutate their inputs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit, log_expit

from .seeding import SeedLike, as_generator

LOGISTIC = "logistic-binary"
SOFTMAX = "softmax-linear"
MLP = "mlp1"
KINDS = (LOGISTIC, SOFTMAX, MLP)

_PARAM_NAMES = {
    LOGISTIC: ("theta", "bias"),
    SOFTMAX: ("W", "b"),
    MLP: ("W1", "b1", "W2", "b2"),
}


class NumericalError(RuntimeError):
    """Non-finite loss or gradient; ``stage`` names the failing step."""

    def __init__(self, message: str, stage: str = "train"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class GdOptions:
    learning_rate: float = 0.1
    max_iters: int = 5000
    grad_tol: float = 1e-6
    prob_clamp: float = 1e-12

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be nonnegative")
        if not 0 < self.prob_clamp <= 1e-3:
            raise ValueError("prob_clamp must lie in (0, 1e-3]")


class Model:
    """Immutable parameter container plus forward/backward passes."""

    __slots__ = ("kind", "params")

    def __init__(self, kind: str, params: dict[str, np.ndarray]):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        frozen = {}
        for name, value in params.items():
            arr = np.array(value, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} is not finite")
            arr.setflags(write=False)
            frozen[name] = arr
        expected = [n for n in _PARAM_NAMES[kind] if n in frozen]
        if kind != LOGISTIC and len(expected) != len(_PARAM_NAMES[kind]):
            raise ValueError(f"{kind} needs parameters {_PARAM_NAMES[kind]}")
        if "theta" not in frozen and kind == LOGISTIC:
            raise ValueError("logistic model needs theta")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", {n: frozen[n] for n in expected})

    def __setattr__(self, name, value):
        raise AttributeError("Model is immutable")

    def __reduce__(self):
        return (Model, (self.kind, dict(self.params)))

    def __repr__(self):
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self.params.items())
        return f"Model({self.kind}: {shapes})"

    @property
    def n_inputs(self) -> int:
        p = self.params
        if self.kind == LOGISTIC:
            return p["theta"].shape[0]
        if self.kind == SOFTMAX:
            return p["W"].shape[1]
        return p["W1"].shape[1]

    @property
    def n_classes(self) -> int:
        if self.kind == LOGISTIC:
            return 2
        if self.kind == SOFTMAX:
            return self.params["W"].shape[0]
        return self.params["W2"].shape[0]

    @property
    def has_bias(self) -> bool:
        return self.kind != LOGISTIC or "bias" in self.params

    # -- flat parameter vector -------------------------------------------
    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def with_flat(self, vec: np.ndarray) -> "Model":
        return Model(self.kind, _unflatten(self._layout(), vec))

    def _layout(self):
        return [(k, v.shape) for k, v in self.params.items()]

    # -- forward -----------------------------------------------------------
    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValueError(f"expected inputs with {self.n_inputs} columns, got shape {X.shape}")
        return X

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Raw network outputs, ``n x 1`` for logistic and ``n x K`` otherwise."""
        return _forward(self.kind, self.params, self._check(X))[0]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return _scores_to_logits(self.kind, self.scores(X))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.predict_proba(X[None, :])[0]
        return softmax(self.logits(X))

    def backward(self, X: np.ndarray, dscores: np.ndarray) -> dict[str, np.ndarray]:
        X = self._check(X)
        _, cache = _forward(self.kind, self.params, X)
        return _backward(self.kind, self.params, X, cache, dscores)


def _unflatten(layout, vec):
    out, pos = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        out[name] = vec[pos:pos + size].reshape(shape)
        pos += size
    if pos != len(vec):
        raise ValueError("flat vector length does not match the model")
    return out


def _forward(kind, p, X):
    if kind == LOGISTIC:
        z = X @ p["theta"]
        if "bias" in p:
            z = z + p["bias"]
        return z[:, None], None
    if kind == SOFTMAX:
        return X @ p["W"].T + p["b"], None
    pre = X @ p["W1"].T + p["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ p["W2"].T + p["b2"], (pre, hidden)


def _backward(kind, p, X, cache, ds):
    if kind == LOGISTIC:
        g = {"theta": X.T @ ds[:, 0]}
        if "bias" in p:
            g["bias"] = np.asarray(ds[:, 0].sum())
        return g
    if kind == SOFTMAX:
        return {"W": ds.T @ X, "b": ds.sum(axis=0)}
    pre, hidden = cache
    dpre = (ds @ p["W2"]) * (pre > 0)
    return {"W1": dpre.T @ X, "b1": dpre.sum(axis=0), "W2": ds.T @ hidden, "b2": ds.sum(axis=0)}


def _scores_to_logits(kind, s):
    if kind == LOGISTIC:
        return np.hstack([np.zeros_like(s), s])
    return s


def _dlogits_to_dscores(kind, g):
    # the logistic model's first logit is the constant 0
    if kind == LOGISTIC:
        return g[:, 1:2]
    return g


# -- constructors -------------------------------------------------------------
def logistic_model(d: int, bias: bool = True) -> Model:
    params = {"theta": np.zeros(d)}
    if bias:
        params["bias"] = np.zeros(())
    return Model(LOGISTIC, params)


def softmax_model(d: int, n_classes: int = 2) -> Model:
    return Model(SOFTMAX, {"W": np.zeros((n_classes, d)), "b": np.zeros(n_classes)})


def mlp_model(d: int, hidden: int = 16, n_classes: int = 2, rng: SeedLike = None,
              init_std: float = 0.1) -> Model:
    gen = as_generator(rng)
    return Model(MLP, {
        "W1": init_std * gen.standard_normal((hidden, d)),
        "b1": np.zeros(hidden),
        "W2": init_std * gen.standard_normal((n_classes, hidden)),
        "b2": np.zeros(n_classes),
    })


def make_model(kind: str, d: int, rng: SeedLike = None, *, hidden: int = 16,
               n_classes: int = 2, bias: bool = True) -> Model:
    """Default-initialised model: zeros for linear kinds, N(0, 0.1^2) for mlp1."""
    if kind in ("logistic", LOGISTIC):
        return logistic_model(d, bias=bias)
    if kind in ("softmax", SOFTMAX):
        return softmax_model(d, n_classes)
    if kind == MLP:
        return mlp_model(d, hidden, n_classes, rng)
    raise ValueError(f"unknown model kind {kind!r}")


# -- probability and loss primitives -------------------------------------------
def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def predict_proba(model: Model, x: np.ndarray) -> np.ndarray:
    return model.predict_proba(x)


def _clamped_log(logp, clamp):
    lo, hi = math.log(clamp), math.log1p(-clamp)
    active = (logp > lo) & (logp < hi)
    return np.clip(logp, lo, hi), active


def ce_from_logits(logits: np.ndarray, y: np.ndarray, clamp: float = 1e-12):
    """Mean cross-entropy and its gradient with respect to the logits."""
    y = np.asarray(y, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(n)
    clipped, active = _clamped_log(logp[rows, y], clamp)
    loss = -clipped.mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad *= active[:, None] / n
    return loss, grad


def kl_from_logits(teacher_probs: np.ndarray, logits: np.ndarray, clamp: float = 1e-12):
    """Mean over rows of KL(teacher || softmax(logits)) and its logit gradient."""
    t = np.asarray(teacher_probs, dtype=float)
    n = logits.shape[0]
    logs = log_softmax(logits)
    clipped, active = _clamped_log(logs, clamp)
    loss = (_neg_entropy_terms(t) - t * clipped).sum() / n
    g = -t * active / n
    grad = g - np.exp(logs) * g.sum(axis=1, keepdims=True)
    return loss, grad


def _neg_entropy_terms(t):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, t * np.log(t), 0.0)


# |z| below this keeps every clamped log-probability strictly inside
# (ln 1e-12, ln(1 - 1e-12)) for any prob_clamp <= 1e-3, so clamping is a no-op
_SAFE_SCORE = 27.0


class CrossEntropy:
    """Mean clamped cross-entropy as a logit-space loss.

    ``binary(z)`` is the same loss for a logistic model's scalar score, so
    the two-class path avoids building ``n x 2`` logit matrices.
    """

    def __init__(self, y, clamp: float = 1e-12):
        self.y = np.asarray(y, dtype=np.int64)
        self.clamp = clamp
        self._ysign = np.where(self.y == 1, 1.0, -1.0)
        self._safe = clamp <= 1e-12

    def __call__(self, logits):
        return ce_from_logits(logits, self.y, self.clamp)

    def binary(self, z):
        n = len(z)
        u = self._ysign * z
        logp = log_expit(u)
        if self._safe and abs(z).max() < _SAFE_SCORE:
            return -logp.sum() / n, self._ysign * expit(-u) * (-1.0 / n)
        clipped, active = _clamped_log(logp, self.clamp)
        return -clipped.sum() / n, -self._ysign * expit(-u) * active / n


class TeacherKL:
    """Mean KL(teacher || student) against fixed teacher probabilities."""

    def __init__(self, teacher_probs, clamp: float = 1e-12):
        self.t = np.asarray(teacher_probs, dtype=float)
        self.clamp = clamp
        self._ent = _neg_entropy_terms(self.t).sum()
        self._t0 = np.ascontiguousarray(self.t[:, 0])
        self._t1 = np.ascontiguousarray(self.t[:, 1])
        self._safe = clamp <= 1e-12

    def __call__(self, logits):
        return kl_from_logits(self.t, logits, self.clamp)

    def binary(self, z):
        n = len(z)
        t0, t1 = self._t0, self._t1
        raw1 = log_expit(z)
        if self._safe and abs(z).max() < _SAFE_SCORE:
            # t0 + t1 = 1, so the cross term collapses to raw1 - t0 * z
            loss = (self._ent - raw1.sum() + t0 @ z) / n
            return loss, (expit(z) - t1) / n
        log1, act1 = _clamped_log(raw1, self.clamp)
        log0, act0 = _clamped_log(raw1 - z, self.clamp)
        loss = (self._ent - t1 @ log1 - t0 @ log0) / n
        g1, g0 = -t1 * act1 / n, -t0 * act0 / n
        return loss, g1 - expit(z) * (g0 + g1)


class Weighted:
    """``sum w_k * loss_k`` for losses sharing the logit-space interface."""

    def __init__(self, *terms):
        self.terms = [(w, f) for w, f in terms if w != 0]

    def __call__(self, logits):
        return self._combine(f(logits) for _, f in self.terms)

    def binary(self, z):
        return self._combine(f.binary(z) for _, f in self.terms)

    def _combine(self, results):
        loss, grad = 0.0, 0.0
        for (w, _), (l, g) in zip(self.terms, results):
            loss = loss + w * l
            grad = grad + w * g
        return loss, grad


def ce_loss(model: Model, X: np.ndarray, y: np.ndarray, clamp: float = 1e-12) -> float:
    """Mean of ``-ln p(y_i)`` with probabilities clamped to ``[clamp, 1-clamp]``."""
    return float(ce_from_logits(model.logits(X), y, clamp)[0])


def kl_div(p: np.ndarray, q: np.ndarray, clamp: float = 1e-12) -> float:
    """``sum p ln(p/q)`` with ``q`` clamped; zero entries of ``p`` contribute 0.

    Row-wise matrices give the mean over rows.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    qc = np.clip(q, clamp, 1 - clamp)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(qc)), 0.0)
    if p.ndim == 1:
        return float(terms.sum())
    return float(terms.sum(axis=-1).mean())


def grad_ce(model: Model, X: np.ndarray, y: np.ndarray, clamp: float = 1e-12) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`ce_loss`, shaped like ``model.params``."""
    _, g = ce_from_logits(model.logits(X), y, clamp)
    return model.backward(X, _dlogits_to_dscores(model.kind, g))


# -- gradient descent -------------------------------------------------------------
MAX_HALVINGS = 30
LOSS_RTOL = 1e-12


@dataclass(frozen=True)
class GdResult:
    x: np.ndarray
    loss: float
    initial_loss: float
    iterations: int
    converged: bool
    grad_inf: float
    learning_rate: float


def gradient_descent(objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
                     x0: np.ndarray, opts: GdOptions, stage: str = "train") -> GdResult:
    """Fixed-step GD stopped at ``grad_tol`` (infinity norm) or ``max_iters``.

    A step that raises the loss (or overflows) is retried with half the step;
    the reduced step is kept.  Rises below ``LOSS_RTOL`` relative are
    rounding noise near the optimum and do not count.  At most ``MAX_HALVINGS`` halvings in total,
    after which the run stops where it is.
    """
    x = np.array(x0, dtype=float)
    loss, g = objective(x)
    gnorm = _inf_norm(g)
    if not (math.isfinite(loss) and math.isfinite(gnorm)):
        raise NumericalError("non-finite loss or gradient at the initial point", stage)
    initial = float(loss)
    lr = opts.learning_rate
    halvings = 0
    it = 0
    converged = gnorm < opts.grad_tol
    while it < opts.max_iters and not converged:
        while True:
            x_new = x - lr * g
            loss_new, g_new = objective(x_new)
            gnorm_new = _inf_norm(g_new)
            # a NaN anywhere in g makes the max NaN, so one check covers both
            finite = math.isfinite(loss_new) and math.isfinite(gnorm_new)
            if finite and loss_new <= loss + LOSS_RTOL * max(abs(loss), 1.0):
                break
            halvings += 1
            lr *= 0.5
            if halvings > MAX_HALVINGS:
                if not finite:
                    raise NumericalError(
                        f"loss or gradient stayed non-finite after {MAX_HALVINGS} step halvings", stage)
                return GdResult(x, float(loss), initial, it, False, gnorm, lr)
        x, loss, g, gnorm = x_new, loss_new, g_new, gnorm_new
        it += 1
        converged = gnorm < opts.grad_tol
    return GdResult(x, float(loss), initial, it, converged, gnorm, lr)


def _inf_norm(g):
    return float(abs(g).max()) if g.size else 0.0


LogitLoss = Callable[[np.ndarray], tuple[float, np.ndarray]]


def model_objective(template: Model, X: np.ndarray, loss_of_logits: LogitLoss):
    """Flat-vector objective ``v -> (loss, grad)`` for a logit-space loss."""
    X = template._check(X)
    layout = template._layout()
    kind = template.kind

    if kind == LOGISTIC and hasattr(loss_of_logits, "binary"):
        d = template.n_inputs
        bias = template.has_bias

        def objective(vec):
            z = X @ vec[:d]
            if bias:
                z = z + vec[d]
            loss, dz = loss_of_logits.binary(z)
            grad = np.empty_like(vec)
            grad[:d] = dz @ X
            if bias:
                grad[d] = dz.sum()
            return loss, grad

        return objective

    def objective(vec):
        p = _unflatten(layout, vec)
        scores, cache = _forward(kind, p, X)
        loss, dlogits = loss_of_logits(_scores_to_logits(kind, scores))
        grads = _backward(kind, p, X, cache, _dlogits_to_dscores(kind, dlogits))
        return loss, np.concatenate([np.ravel(grads[name]) for name, _ in layout])

    return objective


def fit(model_init: Model, X: np.ndarray, loss_of_logits: LogitLoss, opts: GdOptions,
        stage: str = "train") -> tuple[Model, GdResult]:
    objective = model_objective(model_init, X, loss_of_logits)
    result = gradient_descent(objective, model_init.flatten(), opts, stage)
    return model_init.with_flat(result.x), result


def train_ce(model_init: Model, X: np.ndarray, y: np.ndarray, opts: GdOptions = GdOptions(),
             stage: str = "train") -> Model:
    """Full-batch GD on :func:`ce_loss`; returns a new model."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) != np.shape(X)[0]:
        raise ValueError("X and y disagree on the number of samples")
    model, _ = fit(model_init, X, CrossEntropy(y, opts.prob_clamp), opts, stage)
    return model


# -- persistence ----------------------------------------------------------------------
def save_model(model: Model, path) -> None:
    """Flat ``tensor_name, index, value`` CSV; 2-D indices are written ``i:j``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tensor_name", "index", "value"])
        for name, arr in model.params.items():
            if arr.ndim == 0:
                w.writerow([name, "0", repr(float(arr))])
                continue
            for idx in np.ndindex(arr.shape):
                w.writerow([name, ":".join(map(str, idx)), repr(float(arr[idx]))])


def load_model(path) -> Model:
    entries: dict[str, list[tuple[tuple[int, ...], float]]] = {}
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            idx = tuple(int(i) for i in rec["index"].split(":"))
            entries.setdefault(rec["tensor_name"], []).append((idx, float(rec["value"])))
    names = set(entries)
    if "theta" in names:
        kind = LOGISTIC
    elif "W1" in names:
        kind = MLP
    elif "W" in names:
        kind = SOFTMAX
    else:
        raise ValueError(f"{path}: cannot infer model kind from tensors {sorted(names)}")
    scalar = {"bias"}
    params = {}
    for name, items in entries.items():
        if name in scalar:
            params[name] = np.asarray(items[0][1])
            continue
        shape = tuple(max(i[k] for i, _ in items) + 1 for k in range(len(items[0][0])))
        arr = np.zeros(shape)
        for idx, v in items:
            arr[idx] = v
        params[name] = arr
    return Model(kind, params)
