"""Learn six fish species one after another and watch what each method forgets.

Run from the repository root:  python3 demos/01_forgetting_benchmark.py
"""

import numpy as np

from avcil.harness import ExperimentConfig, run_experiment

# one seed of the default benchmark, nothing written to disk
cfg = ExperimentConfig(methods=("finetune", "lwf", "ewc", "icarl_nme", "hail", "joint_upper"), seeds=(0,))
records = {r.method: r for r in run_experiment(cfg, write=False)}

# rows: after learning species k, columns: accuracy on species j <= k
np.set_printoptions(precision=2, suppress=True)
for name in ("finetune", "hail"):
    A = records[name].accuracy_matrix.to_list()
    print(f"\n{name}: accuracy matrix")
    for k, row in enumerate(A, start=1):
        print(f"  after species {k}:", np.array(row))

print("\nmethod        final A_K   final F_K   retained bytes")
for name, r in records.items():
    print(f"{name:<13} {r.final_avg_acc:9.4f}   {r.final_forgetting:9.4f}   {r.storage_footprint:>12,d}")

# the joint learner sees all past data and is only a ceiling, not an incremental method
