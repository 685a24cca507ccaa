"""Regular teacher vs a teacher restricted to the shared decisive channels.

The restricted teacher is weaker on its own modality, yet its student does better.
"""
import sys

from mfhlab.experiments import SweepConfig, run_table2, table

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cols = ("teacher_acc", "teacher_mg_acc", "student_nokd_acc", "student_kd_acc", "student_mg_kd_acc")
t = table(run_table2(SweepConfig("table2", n_seeds=n_seeds)))
print("gamma  " + "  ".join(f"{c:>17}" for c in cols))
for g, row in sorted(t.items()):
    print(f"{g:5.2f}  " + "  ".join(f"{100 * row[c].mean:8.2f} +- {100 * row[c].std:5.2f}" for c in cols))
