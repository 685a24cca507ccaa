"""Rank channels of one modality by how much they tie it to the other, then mask.

Step 1 trains a pair of models jointly, step 2 permutes each channel of
modality a and measures the output distance, step 3 builds a teacher that
only sees the top-ranked channels and distills it into a modality-b student.
"""
import numpy as np

from mfhlab import GdOptions, make_model, sample
from mfhlab.experiments import fs_accuracy
from mfhlab.kd import KdConfig, distill, evaluate
from mfhlab.models import train_ce
from mfhlab.mvd import GENERAL, build_nested_point
from mfhlab.ranking import joint_train, make_nullify_plan, masked_teacher, rank_features

spec = build_nested_point(20, 40, 0)
train, test = sample(spec, 200, 1), sample(spec, 1000, 2)
gd = GdOptions()

f1, f2 = joint_train(train, gd, rng=3)
sal = rank_features(f1, f2, train, M=5, seed=4)
print("ranking accuracy vs true roles:", fs_accuracy(sal.p, train.roles_a))
general = [j for j, r in enumerate(train.roles_a) if r == GENERAL]
print("mean salience, general vs rest: %.3f vs %.3f"
      % (sal.p[general].mean(), np.delete(sal.p, general).mean()))

teacher = train_ce(make_model("logistic-binary", spec.d1), train.xa, train.y, gd)
cfg = KdConfig(rho=0.0, gd=gd)
for mode in ("modality-general", "random", "modality-specific"):
    plan = make_nullify_plan(sal, mode, 0.5, train.xa, 5)
    student = distill(masked_teacher(teacher, plan), train, cfg, make_model("logistic-binary", spec.d2))
    print(f"{mode:>18}: student accuracy {evaluate(student, test.xb, test.y):.3f}")
