"""Session-by-session training loop, evaluation and run artifacts."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .distill import adaptive_weight, refine_exemplars, session_loss
from .equilibrium import PseudoLabelBatch, run_unlabeled_iterations
from .memory import ExemplarSet, update_exemplars
from .metrics import RunReport, SessionMetrics, metrics_csv
from .model import (ModelState, build_model, expand_head, extract_features, compute_prototypes,
                    freeze_front_layers, load_checkpoint, nme_classify, predict_proba, save_checkpoint,
                    trainable_parameters)
from .protocol import SessionSpec, SessionStream, build_benchmark, load_manifest, synthetic_manifest
from .seeding import derive_rng, derive_seed, derive_torch_generator

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class JsonlAudit:
    """Append-only line-delimited JSON sink; flushed per record."""

    def __init__(self, path=None, **context):
        self.path = Path(path) if path else None
        self.context = context
        self.records: list[dict] = []

    def bind(self, **context) -> "JsonlAudit":
        child = JsonlAudit(None, **{**self.context, **context})
        child.path, child.records = self.path, self.records
        return child

    def __call__(self, record: dict) -> None:
        rec = {**self.context, **record}
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")


@dataclass
class SessionState:
    """What carries from one session to the next."""
    model: ModelState
    exemplars: ExemplarSet
    metrics: list[SessionMetrics] = field(default_factory=list)


# --------------------------------------------------------------------------
# Optimization


def make_optimizer(model: ModelState, lr: float, cfg: ExperimentConfig) -> torch.optim.SGD:
    return torch.optim.SGD(trainable_parameters(model), lr=lr, momentum=cfg.optim.momentum,
                           weight_decay=cfg.optim.weight_decay)


def _batches(parts, batch_size: int, generator: torch.Generator, ordered: bool):
    """Index batches over concatenated parts.

    With ``ordered`` each part is shuffled and exhausted before the next one
    (labeled data first); otherwise everything is shuffled together.
    """
    offsets = np.cumsum([0] + [len(p) for p in parts])
    if ordered:
        for k, n in enumerate(len(p) for p in parts):
            perm = torch.randperm(n, generator=generator).numpy() + offsets[k]
            for s in range(0, n, batch_size):
                yield perm[s:s + batch_size]
    else:
        perm = torch.randperm(int(offsets[-1]), generator=generator).numpy()
        for s in range(0, len(perm), batch_size):
            yield perm[s:s + batch_size]


def run_epochs(model: ModelState, optimizer, epochs: int, parts, cfg: ExperimentConfig,
               generator: torch.Generator, reference: ModelState | None = None,
               distill_inputs=None, zeta: float = 0.0, scheduler=None, audit=None, phase="train"):
    """Minibatch SGD on the concatenation of ``parts`` [(inputs, labels), ...].

    When a reference model is given, every step adds zeta times the
    distillation loss on a minibatch of ``distill_inputs``.
    """
    parts = [p for p in parts if len(p[1])]
    if not parts or epochs == 0:
        return model
    inputs = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    n_distill = 0 if distill_inputs is None else len(distill_inputs)
    bs = cfg.optim.batch_size
    model.train()
    for epoch in range(epochs):
        totals = np.zeros(3)
        steps = 0
        for idx in _batches([p[1] for p in parts], bs, generator, cfg.optim.labeled_first):
            d_in = None
            if reference is not None and n_distill:
                d_idx = torch.randperm(n_distill, generator=generator)[:bs].numpy()
                d_in = distill_inputs[np.sort(d_idx)]
            br = session_loss(model, reference, inputs[idx], labels[idx], d_in, zeta,
                              cfg.distill.temperature)
            if not torch.isfinite(br.total):
                if audit is not None:
                    audit({"phase": phase, "epoch": epoch, "error": "non-finite loss"})
                raise TrainingError(f"non-finite loss in {phase} epoch {epoch}")
            optimizer.zero_grad()
            br.total.backward()
            optimizer.step()
            totals += [br.ce.item(), br.dl.item(), br.total.item()]
            steps += 1
        if scheduler is not None:
            scheduler.step()
        if audit is not None:
            ce, dl, total = totals / max(steps, 1)
            audit({"phase": phase, "epoch": epoch, "ce": ce, "dl": dl, "zeta": zeta, "total": total})
    model.eval()
    return model


# --------------------------------------------------------------------------
# Evaluation


def evaluate(model: ModelState, prototypes, test_inputs, test_labels, base_classes, novel_classes,
             session_index: int = 1, normalize: bool = False, cnn_head: bool = False) -> SessionMetrics:
    """NME accuracy (percent) overall, on base classes and on novel classes."""
    needed = set(np.unique(test_labels).tolist())
    missing = needed - set(prototypes.classes)
    if missing:
        from .model import EvaluationError
        raise EvaluationError(f"no prototype for classes {sorted(missing)}")
    labels = np.asarray(test_labels)
    pred = nme_classify(extract_features(model, test_inputs), prototypes, normalize)
    correct = pred == labels

    def acc(mask):
        return 100.0 * float(correct[mask].mean()) if mask.any() else None

    base_mask = np.isin(labels, list(base_classes))
    novel_mask = np.isin(labels, list(novel_classes))
    cnn = None
    if cnn_head:
        head_pred = np.asarray(model.classes)[predict_proba(model, test_inputs).argmax(axis=1)]
        cnn = 100.0 * float((head_pred == labels).mean())
    return SessionMetrics(
        session_index=session_index,
        overall_acc=100.0 * float(correct.mean()),
        base_acc=acc(base_mask) if base_mask.any() else 0.0,
        novel_acc=acc(novel_mask) if len(novel_classes) else None,
        cnn_acc=cnn,
        seen_classes=len(prototypes.classes),
    )


def prototype_inputs(exemplars: ExemplarSet, session: SessionSpec, exemplars_only: bool) -> dict:
    """Per-class inputs for prototypes: exemplars, plus the session's labeled data unless disabled."""
    by_class: dict[int, dict[int, np.ndarray]] = {}
    for e in exemplars:
        by_class.setdefault(e.class_id, {})[e.sample_id] = e.input
    if not exemplars_only:
        for sid, x, c in zip(session.labeled, session.labeled_inputs, session.labeled_labels):
            by_class.setdefault(int(c), {})[int(sid)] = x
    return {c: np.stack([d[k] for k in sorted(d)]) for c, d in by_class.items()}


def _session_eval(cfg, model, exemplars, session, stream, t0) -> SessionMetrics:
    protos = compute_prototypes(model, prototype_inputs(exemplars, session, cfg.model.nme_exemplars_only),
                                stream.seen_classes(session.index))
    base = stream.base_classes
    novel = [c for c in stream.seen_classes(session.index) if c not in base]
    m = evaluate(model, protos, session.test_inputs, session.test_labels, base, novel, session.index,
                 cfg.model.nme_normalize, cfg.model.cnn_head_eval or "cnn-head" in cfg.ablations)
    m.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    m.wall_time = time.perf_counter() - t0
    return m


# --------------------------------------------------------------------------
# Sessions


def _merge(*parts):
    parts = [p for p in parts if p[0] is not None and len(p[1])]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _labeled_triples(session: SessionSpec):
    return list(zip(session.labeled.tolist(), session.labeled_inputs, session.labeled_labels.tolist()))


def train_base_session(cfg: ExperimentConfig, session: SessionSpec, audit=None):
    """Cross-entropy training on the base classes, herding exemplars, then freezing.

    Returns (model, E_1).
    """
    if session.index != 1:
        raise ValueError("train_base_session expects the first session")
    spec = dict(cfg.model.backbone)
    spec.setdefault("input_shape", list(session.manifest.inputs.shape[1:]))
    model = build_model(spec, session.class_ids, derive_seed(cfg.seed, "init", 1))
    o = cfg.optim
    opt = make_optimizer(model, o.base_lr, cfg)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=list(o.base_milestones), gamma=0.1)
    run_epochs(model, opt, o.base_epochs, [(session.labeled_inputs, session.labeled_labels)], cfg,
               derive_torch_generator(cfg.seed, "shuffle", 1), scheduler=sched, audit=audit, phase="base")
    model.eval()
    exemplars = update_exemplars(ExemplarSet(cfg.memory.per_class_budget), _labeled_triples(session), [],
                                 model, session.class_ids, cfg.memory.selection,
                                 derive_rng(cfg.seed, "exemplars", 1))
    freeze_front_layers(model, cfg.model.freeze_groups)
    return model, exemplars


def noise_scale_for(cfg: ExperimentConfig, stream: SessionStream):
    scale = cfg.uncertainty.noise_scale
    if cfg.uncertainty.relative_noise:
        return scale * stream[0].labeled_inputs.std(axis=0)
    return scale


def run_incremental_session(cfg: ExperimentConfig, session: SessionSpec, reference: ModelState,
                            exemplars: ExemplarSet, stream: SessionStream, audits=None):
    """One N-way K-shot session. Returns (model, E_i, SessionMetrics, details)."""
    if session.index < 2:
        raise ValueError("incremental sessions start at index 2")
    audits = audits or {}
    t0 = time.perf_counter()
    i = session.index
    ab = set(cfg.ablations)
    reference = reference.snapshot().eval()
    shuffle = derive_torch_generator(cfg.seed, "shuffle", i)

    model = expand_head(reference, len(session.class_ids), session.class_ids,
                        derive_torch_generator(cfg.seed, "init", i))
    opt = make_optimizer(model, cfg.optim.lr, cfg)
    _, ex_inputs, ex_labels = exemplars.arrays()
    labeled = _merge((session.labeled_inputs, session.labeled_labels), (ex_inputs, ex_labels))

    # supervised epochs on E u D^l
    run_epochs(model, opt, cfg.optim.supervised_epochs, [labeled], cfg, shuffle,
               audit=audits.get("train"), phase=f"session{i}-supervised")

    # uncertainty-guided refinement and adaptive weight
    if "no-uad" in ab:
        refined = exemplars.copy()
    else:
        refined, records = refine_exemplars(
            exemplars, reference, cfg.uncertainty.keep_fraction, cfg.uncertainty.pass_count,
            noise_scale_for(cfg, stream), derive_seed(cfg.seed, "noise", i),
            keep_most_uncertain=cfg.uncertainty.keep_most_uncertain)
        if "refine" in audits:
            for r in records:
                audits["refine"](r)
    weight = adaptive_weight(cfg.distill.zeta_base, len(exemplars), len(refined),
                             len(reference.classes), len(session.class_ids))
    zeta = weight.zeta
    if "no-uad" in ab:
        zeta = 1.0
    elif "no-aw" in ab:
        zeta = cfg.distill.zeta_base
    if "finetune" in ab:
        zeta = 0.0
    if cfg.distill.zeta_override is not None:
        zeta = cfg.distill.zeta_override
    if "weights" in audits:
        audits["weights"]({"e_size": len(exemplars), "e_refined": len(refined),
                           "exemplar_ratio": weight.exemplar_ratio, "class_ratio": weight.class_ratio,
                           "zeta_formula": weight.zeta, "zeta_used": zeta})

    _, ref_inputs, ref_labels = refined.arrays()
    labeled = _merge((session.labeled_inputs, session.labeled_labels), (ref_inputs, ref_labels))
    policy = cfg.selection
    if "no-ce" in ab:
        policy = replace(policy, mode="threshold", proportions=None, per_class_quota=None)
    work_session = session
    if "no-unlabeled" in ab or "finetune" in ab:
        work_session = replace(session, unlabeled_pool=session.unlabeled_pool[:0])

    def train_step(m: ModelState, selected: PseudoLabelBatch) -> ModelState:
        pseudo = (session.manifest.inputs[selected.sample_ids], selected.labels)
        return run_epochs(m, opt, cfg.optim.extra_epochs, [labeled, pseudo], cfg,
                          shuffle, reference, ref_inputs, zeta, audit=audits.get("train"),
                          phase=f"session{i}-unlabeled")

    if policy.iterations == 0:
        selected = PseudoLabelBatch(session_index=i)
    else:
        selected, model = run_unlabeled_iterations(model, work_session, policy, train_step,
                                                   audits.get("ce"))

    pseudo_triples = [(c.sample_id, session.manifest.inputs[c.sample_id], c.predicted_class) for c in selected]
    new_exemplars = update_exemplars(exemplars, _labeled_triples(session), pseudo_triples, model,
                                     session.class_ids, cfg.memory.selection,
                                     derive_rng(cfg.seed, "exemplars", i))
    metrics = _session_eval(cfg, model, new_exemplars, session, stream, t0)
    details = {"zeta": zeta, "weight": weight, "selected": selected, "refined": refined}
    return model, new_exemplars, metrics, details


# --------------------------------------------------------------------------
# Experiments


def build_stream(cfg: ExperimentConfig) -> SessionStream:
    d = cfg.data
    if d.source == "synthetic":
        manifest = synthetic_manifest(d.class_count, d.samples_per_class, d.dimension, d.separation, d.seed)
    else:
        manifest = load_manifest(d.source)
    return build_benchmark(manifest, replace(cfg.protocol, seed=cfg.seed))


def _write_artifacts(out: Path, report: RunReport) -> None:
    (out / "metrics.csv").write_text(metrics_csv(report.sessions))
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, default=str))
    from .report import plot_accuracy
    plot_accuracy(report.sessions, out / "accuracy")


def run_experiment(cfg: ExperimentConfig, resume_from=None, write: bool = True) -> RunReport:
    """Run every session of the configured stream and write the run artifacts.

    ``resume_from`` is a session checkpoint written by an earlier run with the
    same config; the remaining sessions reproduce that run exactly.
    """
    out = Path(cfg.out)
    ckpt_dir = out / "checkpoints"
    audits = {}
    if write:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=str))
    names = {"train": "training_audit.jsonl", "ce": "selection_audit.jsonl",
             "refine": "refinement_audit.jsonl", "weights": "weight_audit.jsonl"}
    for key, fname in names.items():
        path = out / fname if write else None
        if write and resume_from is None and path.exists():
            path.unlink()
        audits[key] = JsonlAudit(path)

    stream = build_stream(cfg)
    if write:
        stream.export_json(out / "stream.json")

    sessions: list[SessionMetrics] = []
    if resume_from is not None:
        model, exemplars, meta = load_checkpoint(resume_from)
        start = meta["session_index"] + 1
        sessions = [SessionMetrics(**m) for m in meta["extra"].get("metrics", [])]
    else:
        t0 = time.perf_counter()
        model, exemplars = train_base_session(cfg, stream[0], audits["train"].bind(session=1))
        sessions.append(_session_eval(cfg, model, exemplars, stream[0], stream, t0))
        if write:
            save_checkpoint(ckpt_dir / "session_1.pt", model, 1, exemplars,
                            {"metrics": [_metrics_dict(m) for m in sessions]})
        start = 2

    for session in stream.sessions[start - 1:]:
        bound = {k: a.bind(session=session.index) for k, a in audits.items()}
        model, exemplars, m, _ = run_incremental_session(cfg, session, model, exemplars, stream, bound)
        sessions.append(m)
        log.info("session %d: overall %.2f base %.2f novel %s", m.session_index, m.overall_acc,
                 m.base_acc, "-" if m.novel_acc is None else f"{m.novel_acc:.2f}")
        if write:
            save_checkpoint(ckpt_dir / f"session_{session.index}.pt", model, session.index, exemplars,
                            {"metrics": [_metrics_dict(s) for s in sessions]})

    files = {k: str(out / f) for k, f in names.items()} if write else {}
    report = RunReport.from_sessions(sessions, cfg.to_dict(), files)
    if write:
        _write_artifacts(out, report)
    return report


def _metrics_dict(m: SessionMetrics) -> dict:
    from dataclasses import asdict
    return asdict(m)
