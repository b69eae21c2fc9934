"""
A full desk-scale run and the main ablations
============================================

Same seed, same stream; only the switched-off mechanism differs. Takes
around half a minute.
"""

from uadce.config import preset
from uadce.trainer import run_experiment

cfg = preset("desk").with_overrides(seed=0)

full = run_experiment(cfg.with_overrides(out="runs/demo_full"))
print(full.table())

for ablation in ("no-uad", "no-ce", "finetune"):
    r = run_experiment(cfg.with_overrides(ablations=[ablation]), write=False)
    print(f"{ablation:>9}: final {r.final_acc:.2f}  PD {r.pd:.2f}  novel {r.sessions[-1].novel_acc:.2f}")

print("artifacts in runs/demo_full: metrics.csv, report.json, accuracy.png, *_audit.jsonl")
