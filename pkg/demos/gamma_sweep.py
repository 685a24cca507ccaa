"""Crossmodal KD gain as the two modalities share more decisive features.

Run: python demos/gamma_sweep.py [n_seeds]
"""
import sys

from mfhlab.experiments import SweepConfig, run_gamma_sweep, table

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
t = table(run_gamma_sweep(SweepConfig("gamma", n_seeds=n_seeds)))
print(f"{'gamma':>6} {'teacher':>8} {'no-KD':>7} {'KD':>7} {'gain':>7}")
for g, row in sorted(t.items()):
    vals = [100 * row[m].mean for m in ("teacher_acc", "student_nokd_acc", "student_kd_acc", "kd_gain")]
    print(f"{g:6.2f} " + " ".join(f"{v:7.2f}" for v in vals))
