"""Property-based checks of the module invariants (at least 100 cases each)."""
import numpy as np
from hypothesis import assume, given, settings, strategies as st

from mfhlab.kd import kd_loss
from mfhlab.models import (LOGISTIC, MLP, SOFTMAX, CrossEntropy, GdOptions, TeacherKL, logistic_model,
                           make_model, model_objective, softmax, train_ce)
from mfhlab.mvd import NOISE, MultimodalDataset, MvdSpec, alpha_of, beta_of, gamma_of, sample
from mfhlab.ranking import SaliencyVector, apply_nullify, joint_objective, make_nullify_plan, rank_features
from mfhlab.theory import bound_value, empirical_dis_risk, epsilon_star, lemma_l, lemma_l_max

from oracles import central_difference

CASES = settings(max_examples=100, deadline=None)
seeds = st.integers(0, 2 ** 32 - 1)
finite = st.floats(-30, 30, allow_nan=False)


def _rel_close(g, fd, tol=1e-4):
    return np.linalg.norm(g - fd) <= tol * max(np.linalg.norm(fd), 1e-6)


def _random_model(kind, d, rng):
    m = make_model(kind, d, rng, hidden=4, n_classes=3 if kind == SOFTMAX else 2)
    return m.with_flat(rng.normal(0, 0.7, m.flatten().size))


def _away_from_kinks(model, X):
    if model.kind != MLP:
        return True
    pre = X @ model.params["W1"].T + model.params["b1"]
    return np.min(np.abs(pre)) > 1e-3


@CASES
@given(seed=seeds, kind=st.sampled_from([LOGISTIC, SOFTMAX, MLP]), loss=st.sampled_from(["ce", "kl"]))
def test_gradient_matches_finite_differences(seed, kind, loss):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
    model = _random_model(kind, d, rng)
    X = rng.normal(size=(n, d))
    assume(_away_from_kinks(model, X))
    K = model.n_classes
    if loss == "ce":
        fn = CrossEntropy(rng.integers(0, K, n))
    else:
        fn = TeacherKL(rng.dirichlet(np.ones(K), size=n))
    obj = model_objective(model, X, fn)
    v = model.flatten()
    _, g = obj(v)
    assert _rel_close(g, central_difference(lambda u: obj(u)[0], v))


@CASES
@given(seed=seeds, kind=st.sampled_from([LOGISTIC, SOFTMAX, MLP]), space=st.sampled_from(["logits", "probs"]))
def test_joint_loss_gradient_matches_finite_differences(seed, kind, space):
    rng = np.random.default_rng(seed)
    n, d1, d2 = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    f1 = _random_model(kind, d1, rng)
    f2 = _random_model(kind, d2, rng)
    if f1.n_classes != f2.n_classes:
        f2 = make_model(kind, d2, rng, n_classes=f1.n_classes)
        f2 = f2.with_flat(rng.normal(0, 0.7, f2.flatten().size))
    X1, X2 = rng.normal(size=(n, d1)), rng.normal(size=(n, d2))
    assume(_away_from_kinks(f1, X1) and _away_from_kinks(f2, X2))
    y = rng.integers(0, f1.n_classes, n)
    obj = joint_objective(f1, X1, f2, X2, y, space)
    v = np.concatenate([f1.flatten(), f2.flatten()])
    _, g = obj(v)
    assert _rel_close(g, central_difference(lambda u: obj(u)[0], v))


@CASES
@given(seed=seeds, rho=st.floats(0, 1))
def test_kd_loss_is_affine_in_rho(seed, rho):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    s = rng.dirichlet(np.ones(2), size=n)
    t = rng.dirichlet(np.ones(2), size=n)
    y = rng.integers(0, 2, n)
    mixed = rho * kd_loss(s, t, y, 1.0) + (1 - rho) * kd_loss(s, t, y, 0.0)
    assert abs(kd_loss(s, t, y, rho) - mixed) <= 1e-12 * max(1.0, abs(mixed))
    assert kd_loss(s, t, y, rho) >= 0


@CASES
@given(seed=seeds, ratio=st.floats(0, 1), mode=st.sampled_from(["modality-general", "modality-specific", "random"]))
def test_nullify_is_idempotent(seed, ratio, mode):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(int(rng.integers(2, 20)), int(rng.integers(1, 12))))
    sal = SaliencyVector(rng.random(X.shape[1]), 1)
    plan = make_nullify_plan(sal, mode, ratio, X, rng)
    once = apply_nullify(plan, X)
    assert len(plan.channels) == int(round(ratio * X.shape[1]))
    assert np.array_equal(apply_nullify(plan, once), once)


@CASES
@given(seed=seeds)
def test_repeated_runs_are_byte_identical(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    spec = MvdSpec(d1=d + 2, d2=d + 1, d=d, j1=range(d), j2=range(d), delta=rng.normal(size=d) + 0.1)
    a = sample(spec, 30, seed)
    b = sample(spec, 30, seed)
    assert a.xa.tobytes() == b.xa.tobytes() and a.xb.tobytes() == b.xb.tobytes()
    opts = GdOptions(max_iters=40)
    m1 = train_ce(logistic_model(spec.d1), a.xa, a.y, opts)
    m2 = train_ce(logistic_model(spec.d1), b.xa, b.y, opts)
    assert m1.flatten().tobytes() == m2.flatten().tobytes()
    p1 = rank_features(m1, m1, MultimodalDataset(a.xa, a.xa, a.y, a.roles_a, a.roles_a), M=2, seed=seed)
    p2 = rank_features(m2, m2, MultimodalDataset(b.xa, b.xa, b.y, b.roles_a, b.roles_a), M=2, seed=seed)
    assert p1.p.tobytes() == p2.p.tobytes()


@CASES
@given(seed=seeds, shift=st.floats(-50, 50))
def test_softmax_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 5, size=(int(rng.integers(1, 6)), int(rng.integers(1, 6))))
    assert np.max(np.abs(softmax(z + shift) - softmax(z))) <= 1e-12


@CASES
@given(lam=st.floats(1e-3, 50), gamma=st.floats(0, 1), eps=st.floats(0, 1e3), c=st.floats(0, 1e3))
def test_epsilon_star_homogeneous_and_vanishing(lam, gamma, eps, c):
    base = epsilon_star(lam, gamma, eps)
    assert abs(epsilon_star(lam, gamma, c * eps) - c * base) <= 1e-12 * max(1.0, abs(c * base))
    assert epsilon_star(lam, 1.0, eps) == 0.0


@CASES
@given(a=finite, b=finite)
def test_lemma_function_bounded_by_its_max(a, b):
    val = lemma_l(b, a)
    assert 0.0 <= val <= lemma_l_max(abs(a - b)) * (1 + 1e-9) + 1e-15
    assert abs(val - lemma_l(-b, -a)) <= 1e-12 * max(1.0, val)


@CASES
@given(e1=st.floats(1e-4, 50), e2=st.floats(1e-4, 50))
def test_lemma_max_strictly_increasing(e1, e2):
    assume(abs(e1 - e2) > 1e-6 * max(e1, e2))
    lo, hi = sorted((e1, e2))
    assert lemma_l_max(lo) < lemma_l_max(hi)


@CASES
@given(n=st.integers(1, 10 ** 6), e=st.floats(0, 100))
def test_bound_linear_in_n(n, e):
    assert abs(bound_value(2 * n, e) - 2 * bound_value(n, e)) <= 1e-12 * max(1.0, bound_value(2 * n, e))


@CASES
@given(seed=seeds)
def test_dis_risk_label_flip_invariance(seed):
    rng = np.random.default_rng(seed)
    n, da, db = int(rng.integers(1, 20)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    Xa, Xb = rng.normal(size=(n, da)), rng.normal(size=(n, db))
    ts, tt = rng.normal(size=db), rng.normal(size=da)
    r = empirical_dis_risk(ts, tt, Xa, Xb)
    assert abs(empirical_dis_risk(-ts, -tt, Xa, Xb) - r) <= 1e-12 * max(1.0, r)


@CASES
@given(d=st.integers(1, 30), data=st.data())
def test_ratios_sum_to_one(d, data):
    j1 = data.draw(st.sets(st.integers(0, d - 1)))
    j2 = data.draw(st.sets(st.integers(0, d - 1)))
    assume(j1 or j2)
    spec = MvdSpec(d1=d, d2=d, d=d, j1=j1, j2=j2, delta=np.ones(d))
    assert gamma_of(spec) + alpha_of(spec) + beta_of(spec) == 1
    assert spec.roles("a").count("general-decisive") == spec.roles("b").count("general-decisive")
    assert all(r == NOISE for j, r in enumerate(spec.roles("a")) if j not in j1)


@CASES
@given(seed=seeds, kind=st.sampled_from([LOGISTIC, SOFTMAX, MLP]))
def test_predict_proba_rows_are_distributions(seed, kind):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    model = _random_model(kind, d, rng)
    P = model.predict_proba(rng.normal(0, 10, size=(int(rng.integers(1, 9)), d)))
    assert np.all(P >= 0) and np.all(np.abs(P.sum(axis=1) - 1) <= 1e-12)


PROPERTIES = [
    test_gradient_matches_finite_differences,
    test_joint_loss_gradient_matches_finite_differences,
    test_kd_loss_is_affine_in_rho,
    test_nullify_is_idempotent,
    test_repeated_runs_are_byte_identical,
    test_softmax_shift_invariance,
    test_epsilon_star_homogeneous_and_vanishing,
    test_lemma_function_bounded_by_its_max,
    test_lemma_max_strictly_increasing,
    test_bound_linear_in_n,
    test_dis_risk_label_flip_invariance,
    test_ratios_sum_to_one,
    test_predict_proba_rows_are_distributions,
]
