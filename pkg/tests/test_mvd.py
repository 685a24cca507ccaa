from fractions import Fraction

import numpy as np
import pytest

from mfhlab.kd import evaluate
from mfhlab.models import logistic_model, train_ce
from mfhlab.mvd import (GENERAL, NOISE, SPECIFIC, MultimodalDataset, MvdSpec, alpha_of, beta_of,
                        build_alpha_point, build_gamma_point, build_nested_point, build_table2_point, gamma_of,
                        load_dataset, sample, save_dataset, table2_general_count)


@pytest.mark.parametrize("overlap", [0, 2, 4, 6, 8, 10])
def test_gamma_grid_ratios(overlap):
    spec = build_gamma_point(overlap, 0)
    assert spec.gamma == Fraction(overlap, 20 - overlap)
    assert spec.alpha == spec.beta == (1 - spec.gamma) / 2
    assert (spec.d1, spec.d2, spec.d) == (25, 50, 20)
    assert len(spec.j1) == len(spec.j2) == 10


def test_gamma_grid_published_values():
    got = [round(float(build_gamma_point(o, 0).gamma), 2) for o in (0, 2, 4, 6, 8, 10)]
    assert got == [0, 0.11, 0.25, 0.43, 0.67, 1]
    assert build_gamma_point(10, 0).j1 == build_gamma_point(10, 0).j2


@pytest.mark.parametrize("bad", [-2, 1, 3, 12])
def test_gamma_grid_rejects_other_overlaps(bad):
    with pytest.raises(ValueError):
        build_gamma_point(bad)


def test_alpha_grid():
    got = [round(float(build_alpha_point(d, 0).alpha), 2) for d in (10, 20, 30, 40, 50)]
    assert got == [0, 0.5, 0.67, 0.75, 0.8]
    spec = build_alpha_point(40, 0)
    assert spec.alpha == Fraction(3, 4) and spec.gamma == Fraction(1, 4) and spec.beta == 0
    with pytest.raises(ValueError):
        build_alpha_point(60)


def test_ratio_examples():
    spec = MvdSpec(d1=20, d2=20, d=12, j1=range(10), j2=range(2, 12), delta=np.ones(12))
    assert gamma_of(spec) == Fraction(8, 12)
    same = MvdSpec(d1=5, d2=5, d=5, j1=[1, 2], j2=[2, 1], delta=np.ones(5))
    assert (gamma_of(same), alpha_of(same), beta_of(same)) == (1, 0, 0)
    disjoint = MvdSpec(d1=4, d2=4, d=4, j1=[0, 1], j2=[2, 3], delta=np.ones(4))
    assert alpha_of(disjoint) == beta_of(disjoint) == Fraction(1, 2)


def test_empty_union_rejected():
    spec = MvdSpec(d1=3, d2=3, d=3, j1=[], j2=[], delta=np.ones(3))
    with pytest.raises(ValueError):
        gamma_of(spec)


@pytest.mark.parametrize("kwargs", [
    dict(d1=3, d2=5, d=4, j1=[0], j2=[0], delta=np.ones(4)),
    dict(d1=5, d2=5, d=4, j1=[0, 0], j2=[0], delta=np.ones(4)),
    dict(d1=5, d2=5, d=4, j1=[4], j2=[0], delta=np.ones(4)),
    dict(d1=5, d2=5, d=4, j1=[0], j2=[0], delta=np.zeros(4)),
])
def test_spec_invariants_enforced(kwargs):
    with pytest.raises(ValueError):
        MvdSpec(**kwargs)


def test_table2_recipe_hits_gamma_exactly():
    for g in (0.25, 0.5, 0.75, 1 / 3, 0.33, 0.66):
        spec = build_table2_point(g, 0)
        assert abs(float(spec.gamma) - g) < 0.01
        assert spec.beta == 0 and len(spec.j1) == 12
    assert table2_general_count(0.5) == 6
    with pytest.raises(ValueError):
        table2_general_count(0.3)


def test_copied_columns_match_regenerated_decisive_vector():
    spec = build_gamma_point(4, 3)
    data = sample(spec, 50, 11)
    x_star = np.random.default_rng(11).standard_normal((50, spec.d))
    assert np.array_equal(data.xa[:, list(spec.j1)], x_star[:, list(spec.j1)])
    assert np.array_equal(data.xb[:, list(spec.j2)], x_star[:, list(spec.j2)])
    assert np.array_equal(data.y, (x_star @ spec.delta > 0).astype(int))


def test_roles_follow_index_sets():
    spec = build_gamma_point(4, 0)
    roles_a = spec.roles("a")
    general = set(spec.j1) & set(spec.j2)
    for j, r in enumerate(roles_a):
        expected = GENERAL if j in general else SPECIFIC if j in spec.j1 else NOISE
        assert r == expected
    assert roles_a.count(GENERAL) == spec.roles("b").count(GENERAL) == 4


def test_threshold_on_copied_channel_is_perfect():
    spec = MvdSpec(d1=3, d2=3, d=1, j1=[0], j2=[], delta=[1.0])
    data = sample(spec, 500, 5)
    assert np.array_equal((data.xa[:, 0] > 0).astype(int), data.y)


def test_modality_without_decisive_channels_is_uncorrelated():
    spec = MvdSpec(d1=6, d2=6, d=4, j1=[], j2=[0, 1, 2, 3], delta=np.ones(4))
    data = sample(spec, 1000, 21)
    corr = [abs(np.corrcoef(data.xa[:, j], data.y)[0, 1]) for j in range(6)]
    assert max(corr) < 0.1


def test_sampling_is_deterministic_and_balanced():
    spec = build_gamma_point(6, 1)
    a, b = sample(spec, 400, 9), sample(spec, 400, 9)
    assert np.array_equal(a.xa, b.xa) and np.array_equal(a.xb, b.xb) and np.array_equal(a.y, b.y)
    assert abs(a.y.mean() - 0.5) <= 4 / np.sqrt(400)


def test_teacher_accuracy_in_expected_range():
    # teacher that sees every decisive feature (nested recipe, n=200/1000)
    accs = []
    for seed in range(10):
        spec = build_nested_point(6, 12, seed)
        train, test = sample(spec, 200, 100 + seed), sample(spec, 1000, 200 + seed)
        accs.append(evaluate(train_ce(logistic_model(50), train.xa, train.y), test.xa, test.y))
    assert 0.87 <= np.mean(accs) <= 0.92


def test_dataset_csv_round_trip(tmp_path):
    data = sample(build_gamma_point(2, 0), 7, 1)
    path = tmp_path / "d.csv"
    save_dataset(data, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:3] == ["sample_id", "y", "a_0"] and header[-1] == "b_49"
    assert (tmp_path / "d_roles.csv").read_text().splitlines()[0] == "modality,channel,role"
    back = load_dataset(path)
    assert np.array_equal(back.xa, data.xa) and np.array_equal(back.xb, data.xb)
    assert np.array_equal(back.y, data.y) and back.roles_a == data.roles_a and back.roles_b == data.roles_b


def test_dataset_validation():
    with pytest.raises(ValueError):
        MultimodalDataset(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros(3), (NOISE,) * 2, (NOISE,) * 2)
    with pytest.raises(ValueError):
        MultimodalDataset(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(3), (GENERAL, NOISE), (NOISE,) * 2)


def test_sample_rejects_empty():
    with pytest.raises(ValueError):
        sample(build_gamma_point(0, 0), 0)
