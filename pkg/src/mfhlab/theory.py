"""Distillation-loss bound for crossmodal KD between linear binary classifiers.

Data enter as ``Z^u`` with samples as columns (``d_u x n``); callers holding
row-major sample matrices pass ``X.T``.  All matrix norms are spectral
norms, estimated by power iteration.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .models import GdOptions, Model, gradient_descent
from .mvd import MultimodalDataset

RANK_TOL = 1e-12


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def lemma_l(b, a):
    """Bernoulli KL between ``sigmoid(a)`` (reference) and ``sigmoid(b)``, from logits."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    sa = 1.0 / (1.0 + np.exp(-a))
    val = sa * (_log_sigmoid(a) - _log_sigmoid(b)) + (1.0 - sa) * (_log_sigmoid(-a) - _log_sigmoid(-b))
    val = np.maximum(val, 0.0)
    return float(val) if val.ndim == 0 else val


def lemma_l_max(eps: float) -> float:
    """Largest ``lemma_l(b, a)`` over ``|a - b| <= eps``.

    Closed form ``r - 1 - ln r`` with ``r = eps / (1 - exp(-eps))``; below
    ``1e-6`` the series value ``eps**2 / 8`` is used (error O(eps**4)).
    """
    if eps < 0 or math.isnan(eps):
        raise ValueError("eps must be nonnegative")
    if eps < 1e-6:
        return eps * eps / 8.0
    if math.isinf(eps):
        return math.inf
    r = eps / -math.expm1(-eps)
    return (r - 1.0) - math.log(r)


def bound_value(n: int, eps_star: float) -> float:
    return n * lemma_l_max(eps_star)


def epsilon_star(lam: float, gamma: float, eps: float) -> float:
    return lam ** 1.5 * (lam ** 2 + 1.0) * (1.0 - gamma) * eps


# -- spectral norms -----------------------------------------------------------------
def power_iteration(matvec: Callable[[np.ndarray], np.ndarray], dim: int, tol: float = 1e-10,
                    max_iter: int = 20000) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite operator.

    Stops once the eigen-residual drops below ``tol`` relative to the
    Rayleigh quotient.
    """
    v = np.ones(dim) + np.linspace(0.0, 0.5, dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        lam = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            break
        v = w / norm_w
    return lam


def sym_spectral_norm(A: np.ndarray, tol: float = 1e-10) -> float:
    """Spectral norm of a symmetric PSD matrix."""
    return power_iteration(lambda v: A @ v, A.shape[0], tol)


def spectral_norm(M: np.ndarray, tol: float = 1e-10) -> float:
    """Spectral norm of an arbitrary matrix via its smaller Gram matrix."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    if M.shape[0] <= M.shape[1]:
        val = power_iteration(lambda v: M @ (M.T @ v), M.shape[0], tol)
    else:
        val = power_iteration(lambda v: M.T @ (M @ v), M.shape[1], tol)
    return math.sqrt(max(val, 0.0))


def _gram_factor(Z: np.ndarray, name: str):
    G = Z @ Z.T
    top = sym_spectral_norm(G)
    try:
        factor = cho_factor(G)
    except LinAlgError as exc:
        raise ValueError(f"Gram matrix of {name} is singular") from exc
    inv_top = power_iteration(lambda v: cho_solve(factor, v), G.shape[0])
    if inv_top <= 0 or 1.0 / inv_top < RANK_TOL * top:
        raise ValueError(f"Gram matrix of {name} is rank deficient")
    return G, factor, top, inv_top


def gram_norms(Z: np.ndarray) -> tuple[float, float]:
    """``(||Z Z^T||, ||(Z Z^T)^{-1}||)``; rank-deficient Gram matrices are rejected."""
    _, _, top, inv_top = _gram_factor(np.asarray(Z, dtype=float), "Z")
    return top, inv_top


def estimate_lambda(Za: np.ndarray, Zb: np.ndarray) -> float:
    values = []
    for name, Z in (("Za", Za), ("Zb", Zb)):
        _, _, top, inv_top = _gram_factor(np.asarray(Z, dtype=float), name)
        values.extend([top, inv_top])
    return max(values)


def estimate_epsilon(Za: np.ndarray, Zb: np.ndarray, gamma: float) -> float:
    """Smallest eps with ``||Za^T Za - Zb^T Zb|| <= (1 - gamma) eps`` on this sample."""
    Za = np.asarray(Za, dtype=float)
    Zb = np.asarray(Zb, dtype=float)
    if Za.shape[1] != Zb.shape[1]:
        raise ValueError("Za and Zb must have the same number of samples")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")

    def diff(v):
        return Za.T @ (Za @ v) - Zb.T @ (Zb @ v)

    gap = math.sqrt(max(power_iteration(lambda v: diff(diff(v)), Za.shape[1]), 0.0))
    if gamma == 1.0:
        if gap <= 1e-9:
            return 0.0
        raise ValueError("gamma = 1 requires Za^T Za == Zb^T Zb")
    return gap / (1.0 - gamma)


def closed_form_student(Za: np.ndarray, Zb: np.ndarray, theta_t: np.ndarray) -> np.ndarray:
    """Least-squares fit of student logits ``Zb^T theta`` to teacher logits ``Za^T theta_t``."""
    Za = np.asarray(Za, dtype=float)
    Zb = np.asarray(Zb, dtype=float)
    theta_t = np.asarray(theta_t, dtype=float)
    if theta_t.shape != (Za.shape[0],):
        raise ValueError(f"theta_t must have length {Za.shape[0]}")
    _, factor, _, _ = _gram_factor(Zb, "Zb")
    return cho_solve(factor, Zb @ (Za.T @ theta_t))


def matrix_lemma_lhs(Za: np.ndarray, Zb: np.ndarray) -> float:
    """``||Zb^T (Zb Zb^T)^{-1} Zb Za^T - Za^T||``: how far Za^T sits from the row space of Zb."""
    Za = np.asarray(Za, dtype=float)
    Zb = np.asarray(Zb, dtype=float)
    _, factor, _, _ = _gram_factor(Zb, "Zb")
    residual = Zb.T @ cho_solve(factor, Zb @ Za.T) - Za.T
    return spectral_norm(residual)


def empirical_dis_risk(theta_s: np.ndarray, theta_t: np.ndarray, Xa: np.ndarray, Xb: np.ndarray) -> float:
    """Summed Bernoulli KL between teacher ``Xa @ theta_t`` and student ``Xb @ theta_s`` logits."""
    a = np.asarray(Xa, dtype=float) @ np.asarray(theta_t, dtype=float)
    b = np.asarray(Xb, dtype=float) @ np.asarray(theta_s, dtype=float)
    return float(np.sum(lemma_l(b, a)))


def dis_risk_objective(theta_t: np.ndarray, Xa: np.ndarray, Xb: np.ndarray):
    a = Xa @ theta_t
    sa = 1.0 / (1.0 + np.exp(-a))

    def objective(theta_s):
        b = Xb @ theta_s
        sb = 1.0 / (1.0 + np.exp(-b))
        return float(np.sum(lemma_l(b, a))), Xb.T @ (sb - sa)

    return objective


@dataclass(frozen=True)
class TheoremCertificate:
    n: int
    gamma: float
    lam: float
    epsilon: float
    epsilon_star: float
    bound_value: float
    risk_closed_form: float
    risk_trained: float
    matrix_lemma_lhs: float
    converged: bool
    holds: bool
    seed: int | None = None


def verify_bound(data: MultimodalDataset, theta_t, gd: GdOptions = GdOptions(max_iters=200000, grad_tol=1e-8),
                 gamma: float | None = None, seed: int | None = None) -> TheoremCertificate:
    """Measure every quantity of the bound on one dataset and check it.

    ``theta_t`` is a bias-free teacher weight vector (or logistic model) on
    modality a; it is rescaled to unit norm.  The student is trained from
    zero by GD on the summed distillation risk with step
    ``min(gd.learning_rate, 1/L)``, ``L`` the risk's curvature bound.
    """
    if isinstance(theta_t, Model):
        if theta_t.kind != "logistic-binary" or theta_t.has_bias:
            raise ValueError("the bound needs a bias-free logistic teacher")
        theta_t = theta_t.params["theta"]
    theta_t = np.asarray(theta_t, dtype=float)
    norm = np.linalg.norm(theta_t)
    if norm == 0:
        raise ValueError("teacher weights are zero")
    theta_t = theta_t / norm
    Xa, Xb = data.xa, data.xb
    n = data.n
    if n < max(Xa.shape[1], Xb.shape[1]):
        raise ValueError("need at least as many samples as channels in each modality")
    if gamma is None:
        if data.spec is None:
            raise ValueError("gamma is required when the dataset carries no spec")
        gamma = float(data.spec.gamma)
    Za, Zb = Xa.T, Xb.T

    lam = estimate_lambda(Za, Zb)
    eps = estimate_epsilon(Za, Zb, gamma)
    eps_s = epsilon_star(lam, gamma, eps)
    bound = bound_value(n, eps_s)
    lhs = matrix_lemma_lhs(Za, Zb)
    theta_star = closed_form_student(Za, Zb, theta_t)
    risk_cf = empirical_dis_risk(theta_star, theta_t, Xa, Xb)

    curvature = 0.25 * gram_norms(Zb)[0]
    opts = GdOptions(learning_rate=min(gd.learning_rate, 1.0 / curvature), max_iters=gd.max_iters,
                     grad_tol=gd.grad_tol, prob_clamp=gd.prob_clamp)
    res = gradient_descent(dis_risk_objective(theta_t, Xa, Xb), np.zeros(Xb.shape[1]), opts,
                           stage="verify_bound")
    risk_tr = empirical_dis_risk(res.x, theta_t, Xa, Xb)

    slack = 1e-9
    holds = bool(res.converged and risk_tr <= bound + slack and risk_cf <= bound + slack
                 and lhs <= eps_s + slack)
    return TheoremCertificate(n=n, gamma=float(gamma), lam=lam, epsilon=eps, epsilon_star=eps_s,
                              bound_value=bound, risk_closed_form=risk_cf, risk_trained=risk_tr,
                              matrix_lemma_lhs=lhs, converged=bool(res.converged), holds=holds, seed=seed)


CERT_COLUMNS = ("seed", "n", "gamma", "lambda", "epsilon", "epsilon_star", "bound", "risk_closed_form",
                "risk_trained", "matrix_lemma_lhs", "holds")


def save_certificates(certs, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CERT_COLUMNS)
        for c in certs:
            row = asdict(c)
            w.writerow(["" if c.seed is None else c.seed, c.n, repr(c.gamma), repr(c.lam), repr(c.epsilon),
                        repr(c.epsilon_star), repr(c.bound_value), repr(c.risk_closed_form),
                        repr(row["risk_trained"]), repr(c.matrix_lemma_lhs), str(c.holds).lower()])
