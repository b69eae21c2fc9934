import json
from pathlib import Path

import pytest

from uadce.cli import main
from uadce.config import ConfigError, config_from_dict, load_config, preset

TINY_TOML = """
[protocol]
base_class_count = 4
n_way = 1
k_shot = 3
session_count = 3
unlabeled_pool_size = 20

[data]
class_count = 6
samples_per_class = 60
dimension = 4
separation = 5.0

[model]
backbone = { kind = "mlp", hidden = [16, 16], feature_dim = 8 }

[optim]
base_lr = 0.05
base_epochs = 10
base_milestones = [8]
lr = 0.02
supervised_epochs = 2
extra_epochs = 1
batch_size = 16

[selection]
iteration_budget = 4
iterations = 2

[memory]
per_class_budget = 5
"""


@pytest.fixture
def toml_path(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY_TOML)
    return p


def test_verify_exits_zero_and_reports_flagged_cells(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "0 fail" in out and "4 reported cells inconsistent" in out


def test_verify_single_table(capsys):
    assert main(["-v", "verify", "--table", "CIFAR100"]) == 0
    assert "CIFAR100" in capsys.readouterr().out


def test_run_then_report(tmp_path, toml_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(toml_path), "--seed", "3", "--out", str(out), "--ablation", "no-ce"]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 3 and cfg["ablations"] == ["no-ce"]
    (out / "accuracy.png").unlink()
    assert main(["report", str(out)]) == 0
    assert (out / "accuracy.png").exists()
    assert "PD" in capsys.readouterr().out


def test_env_overrides_seed_and_out_only(toml_path, tmp_path):
    cfg = load_config(toml_path, env={"UADCE_SEED": "7", "UADCE_OUT": str(tmp_path / "o"), "UADCE_LR": "9"})
    assert cfg.seed == 7 and cfg.protocol.seed == 7 and cfg.out == str(tmp_path / "o")
    assert cfg.optim.lr == 0.02


def test_config_parsing(toml_path):
    cfg = load_config(toml_path, env={})
    assert cfg.protocol.session_count == 3 and cfg.optim.base_milestones == (8,)
    assert cfg.model.backbone["hidden"] == [16, 16]
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"optim": {"learning_rate": 1}})
    with pytest.raises(ConfigError, match="ablation"):
        config_from_dict({"ablations": ["no-such"]})
    with pytest.raises(ConfigError):
        preset("imagenet")


def test_annotated_example_config_loads():
    path = Path(__file__).resolve().parents[1] / "configs" / "desk.toml"
    cfg = load_config(path, env={})
    assert cfg.to_dict() == preset("desk").with_overrides(out=cfg.out).to_dict()


def test_full_size_presets_are_structural():
    for name, sessions in (("cifar100", 9), ("miniimagenet", 9), ("cub200", 11)):
        cfg = preset(name)
        assert cfg.protocol.session_count == sessions
        assert cfg.model.backbone["kind"] == "resnet18"
