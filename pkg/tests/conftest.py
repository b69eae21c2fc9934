from dataclasses import replace

import pytest

from uadce.config import DataConfig, ExperimentConfig, MemoryConfig, ModelConfig, OptimConfig
from uadce.equilibrium import SelectionPolicy
from uadce.protocol import ProtocolConfig


def tiny_config(out, seed=0, **kw) -> ExperimentConfig:
    """A few-second stream: 4 base classes, two 1-way 3-shot sessions."""
    cfg = ExperimentConfig(
        protocol=ProtocolConfig(4, 1, 3, 3, 20),
        data=DataConfig(class_count=6, samples_per_class=60, dimension=4, separation=5.0, seed=0),
        model=ModelConfig(backbone={"kind": "mlp", "hidden": [16, 16], "feature_dim": 8}, freeze_groups=1),
        optim=OptimConfig(base_lr=0.05, base_epochs=10, base_milestones=(8,), lr=0.02, supervised_epochs=2,
                          extra_epochs=1, batch_size=16),
        selection=SelectionPolicy(iteration_budget=4, iterations=2),
        memory=MemoryConfig(per_class_budget=5),
        out=str(out),
    )
    cfg = cfg.with_overrides(seed=seed)
    for section, values in kw.items():
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    return cfg


@pytest.fixture
def tiny(tmp_path):
    return lambda name="run", seed=0, **kw: tiny_config(tmp_path / name, seed, **kw)


_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record the outcome of one acceptance criterion; returns ``ok`` for asserting."""
    def record(number: int, ok: bool, detail: str) -> bool:
        _VERDICTS[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
