"""Model contract: backbone, growing linear head, layer freezing and NME.

Everything runs in float64 so that finite-difference checks are meaningful;
desk-scale models are small enough for this to cost nothing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
CHECKPOINT_FORMAT = "uadce-checkpoint"
CHECKPOINT_VERSION = 1
HEAD_INIT_STD = 1e-2


class ContractError(ValueError):
    """Input shapes or model state violate an operation's contract."""


class EvaluationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Backbones. Each exposes ``groups`` (ordered parameter groups, front first),
# ``input_shape`` and ``feature_dim``.


class MLPBackbone(nn.Module):
    def __init__(self, input_shape, hidden=(64, 64), feature_dim=32):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.feature_dim = feature_dim
        widths = [int(np.prod(self.input_shape)), *hidden, feature_dim]
        self.groups = nn.ModuleList(
            nn.Sequential(nn.Linear(a, b, dtype=DTYPE), nn.ReLU())
            for a, b in zip(widths[:-1], widths[1:])
        )

    def forward(self, x):
        x = x.reshape(len(x), -1)
        for g in self.groups:
            x = g(x)
        return x


class ConvBackbone(nn.Module):
    """Two conv blocks plus a projection; for small image-shaped inputs (C, H, W)."""

    def __init__(self, input_shape, channels=(16, 32), feature_dim=64):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.feature_dim = feature_dim
        c_in, h, w = self.input_shape
        blocks = []
        for c_out in channels:
            blocks.append(nn.Sequential(
                nn.Conv2d(c_in, c_out, 3, padding=1, dtype=DTYPE), nn.ReLU(), nn.MaxPool2d(2)))
            c_in, h, w = c_out, h // 2, w // 2
        blocks.append(nn.Sequential(
            nn.Flatten(), nn.Linear(c_in * h * w, feature_dim, dtype=DTYPE), nn.ReLU()))
        self.groups = nn.ModuleList(blocks)

    def forward(self, x):
        for g in self.groups:
            x = g(x)
        return x


class ResNet18Backbone(nn.Module):
    """torchvision ResNet-18 trunk, 512-d pooled features. Needs torchvision."""

    def __init__(self, input_shape=(3, 32, 32), feature_dim=512):
        super().__init__()
        try:
            from torchvision.models import resnet18
        except ImportError as exc:  # pragma: no cover - depends on host
            raise ContractError("resnet18 backbone requires torchvision") from exc
        if feature_dim != 512:
            raise ContractError("resnet18 features are 512-dimensional")
        net = resnet18(weights=None).to(DTYPE)
        self.input_shape = tuple(input_shape)
        self.feature_dim = 512
        self.groups = nn.ModuleList([
            nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool),
            net.layer1, net.layer2, net.layer3,
            nn.Sequential(net.layer4, net.avgpool, nn.Flatten()),
        ])

    def forward(self, x):
        for g in self.groups:
            x = g(x)
        return x


BACKBONES = {"mlp": MLPBackbone, "conv": ConvBackbone, "resnet18": ResNet18Backbone}


def build_backbone(spec: Mapping) -> nn.Module:
    spec = dict(spec)
    kind = spec.pop("kind", "mlp")
    if kind not in BACKBONES:
        raise ContractError(f"unknown backbone {kind!r}; choose from {sorted(BACKBONES)}")
    if "hidden" in spec:
        spec["hidden"] = tuple(spec["hidden"])
    if "channels" in spec:
        spec["channels"] = tuple(spec["channels"])
    return BACKBONES[kind](**spec)


# --------------------------------------------------------------------------


class ModelState(nn.Module):
    """Backbone + linear head over the classes seen so far.

    ``classes[k]`` is the global class id of head output ``k``.
    """

    def __init__(self, backbone: nn.Module, classes: Sequence[int], spec: Mapping | None = None):
        super().__init__()
        self.backbone = backbone
        self.head = nn.Linear(backbone.feature_dim, len(classes), dtype=DTYPE)
        self.classes = [int(c) for c in classes]
        self.frozen_mask = [False] * len(backbone.groups)
        self.spec = dict(spec or {})

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    @property
    def class_index(self) -> dict[int, int]:
        return {c: k for k, c in enumerate(self.classes)}

    def train(self, mode: bool = True):
        super().train(mode)
        for g, frozen in zip(self.backbone.groups, self.frozen_mask):
            if frozen:
                g.eval()
        return self

    def forward(self, x):
        return self.head(self.backbone(x))

    def snapshot(self) -> "ModelState":
        """Deep copy; used for the reference model."""
        return copy.deepcopy(self)


def build_model(spec: Mapping, classes: Sequence[int], seed: int = 0) -> ModelState:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ModelState(build_backbone(spec), classes, spec)
    return model


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def _check_input(model: ModelState, x: torch.Tensor):
    shape = tuple(model.backbone.input_shape)
    if x.dim() < 1 or tuple(x.shape[1:]) != shape:
        if not (x.dim() == 2 and x.shape[1] == int(np.prod(shape))):
            raise ContractError(f"expected inputs of shape (B, {shape}), got {tuple(x.shape)}")


def logits(model: ModelState, batch) -> torch.Tensor:
    x = as_tensor(batch)
    _check_input(model, x)
    if model.head.out_features != len(model.classes):
        raise ContractError("head width does not match the known-class count")
    return model(x)


def forward(model: ModelState, batch) -> torch.Tensor:
    """Softmax probabilities over the known classes, one row per input."""
    return torch.softmax(logits(model, batch), dim=1)


def extract_features(model: ModelState, batch) -> np.ndarray:
    x = as_tensor(batch)
    _check_input(model, x)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        f = model.backbone(x)
    model.train(was_training)
    return f.numpy()


def predict_proba(model: ModelState, batch) -> np.ndarray:
    """Evaluation-mode probabilities as a numpy array."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        p = forward(model, batch)
    model.train(was_training)
    return p.numpy()


def expand_head(model: ModelState, new_class_count: int, class_ids: Sequence[int] | None = None,
                generator: torch.Generator | None = None) -> ModelState:
    """Return a copy whose head has ``new_class_count`` extra outputs.

    Old rows are copied verbatim; new weight rows are N(0, 1e-2^2), new biases 0.
    """
    if new_class_count < 0:
        raise ContractError("new_class_count must be >= 0")
    out = model.snapshot()
    if new_class_count == 0:
        return out
    if class_ids is None:
        start = max(model.classes) + 1 if model.classes else 0
        class_ids = range(start, start + new_class_count)
    class_ids = [int(c) for c in class_ids]
    if len(class_ids) != new_class_count or set(class_ids) & set(model.classes):
        raise ContractError("new class ids must be fresh and match new_class_count")
    old = model.head
    head = nn.Linear(old.in_features, old.out_features + new_class_count, dtype=DTYPE)
    with torch.no_grad():
        head.weight[: old.out_features] = old.weight
        head.bias[: old.out_features] = old.bias
        noise = torch.randn(new_class_count, old.in_features, generator=generator, dtype=DTYPE)
        head.weight[old.out_features:] = HEAD_INIT_STD * noise
        head.bias[old.out_features:] = 0.0
    out.head = head
    out.classes = model.classes + class_ids
    return out


def freeze_front_layers(model: ModelState, group_count: int) -> ModelState:
    """Freeze the first ``group_count`` backbone groups in place (and return the model)."""
    n = len(model.backbone.groups)
    if not 0 <= group_count <= n:
        raise ContractError(f"cannot freeze {group_count} groups; backbone has {n}")
    model.frozen_mask = [k < group_count for k in range(n)]
    for g, frozen in zip(model.backbone.groups, model.frozen_mask):
        for p in g.parameters():
            p.requires_grad_(not frozen)
    model.train(model.training)
    return model


def trainable_parameters(model: ModelState) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


# --------------------------------------------------------------------------
# Nearest-mean-of-exemplars


@dataclass(frozen=True)
class PrototypeTable:
    classes: tuple[int, ...]   # ascending
    means: np.ndarray          # (len(classes), feature_dim)

    def __len__(self):
        return len(self.classes)

    def __getitem__(self, c: int) -> np.ndarray:
        return self.means[self.classes.index(c)]


def compute_prototypes(model: ModelState, exemplars, classes: Sequence[int] | None = None) -> PrototypeTable:
    """Mean backbone feature per class.

    ``exemplars`` is an ExemplarSet or any mapping class-id -> stacked inputs.
    Every class in ``classes`` (default: all known head classes) needs at
    least one sample.
    """
    by_class = exemplars.inputs_by_class() if hasattr(exemplars, "inputs_by_class") else exemplars
    classes = sorted(model.classes if classes is None else classes)
    means = []
    for c in classes:
        x = by_class.get(c)
        if x is None or len(x) == 0:
            raise EvaluationError(f"class {c} has no exemplars to form a prototype")
        means.append(extract_features(model, x).mean(axis=0))
    return PrototypeTable(tuple(classes), np.stack(means))


def nme_classify(features, prototypes: PrototypeTable, normalize: bool = False) -> np.ndarray:
    """Class id of the nearest prototype (Euclidean); ties go to the smallest id."""
    if len(prototypes) == 0:
        raise EvaluationError("no prototypes")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    mu = prototypes.means
    if normalize:
        f = f / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)
        mu = mu / np.maximum(np.linalg.norm(mu, axis=1, keepdims=True), 1e-12)
    d = ((f[:, None, :] - mu[None, :, :]) ** 2).sum(-1)
    return np.asarray(prototypes.classes)[d.argmin(axis=1)]


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, model: ModelState, session_index: int, exemplars=None, extra=None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "session_index": int(session_index),
        "backbone": model.spec,
        "classes": list(model.classes),
        "frozen_mask": list(model.frozen_mask),
        "feature_dim": model.feature_dim,
        "state_dict": model.state_dict(),
        "exemplars": exemplars.to_payload() if exemplars is not None else None,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Return (model, exemplars or None, metadata dict)."""
    from .memory import ExemplarSet

    payload = torch.load(path, weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path}: not a uadce checkpoint")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported format_version {payload['format_version']}")
    model = ModelState(build_backbone(payload["backbone"]), payload["classes"], payload["backbone"])
    model.load_state_dict(payload["state_dict"])
    freeze_front_layers(model, sum(payload["frozen_mask"]))
    exemplars = ExemplarSet.from_payload(payload["exemplars"]) if payload["exemplars"] else None
    meta = {k: payload[k] for k in ("session_index", "classes", "frozen_mask", "feature_dim", "extra")}
    return model, exemplars, meta
