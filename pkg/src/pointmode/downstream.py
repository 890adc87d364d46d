"""Downstream harnesses: object classification and scene block localization."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import AdamW, Tensor, backward
from .autodiff import ops as T
from .geomcore import Box3D, iou
from .model import ModeModel, activate, patchify_batch
from .pretrain import PretrainConfig, forward_scene, prepare_scene

EVAL_SEED = 2024


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    n_samples: int
    fingerprint: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("a report needs at least one sample")
        for k, v in self.metrics.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric {k}={v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "metrics": self.metrics, "n_samples": self.n_samples,
                           "fingerprint": self.fingerprint, "details": self.details}, sort_keys=True, indent=2) + "\n"


def _echo(config: dict | None) -> dict:
    # reports carry the resolved config so a result can be reproduced from the file alone
    return {"config": config} if config else {}


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- classification ----------------------------------------------------

@dataclass
class ClassifyConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.05
    seed: int = 0


def shape_inputs(model: ModeModel, shapes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Patchify each shape with the object-expert grouping: ``(S, M_o, 3)`` and ``(S, M_o, k, 3)``."""
    return patchify_batch(np.asarray(shapes, dtype=np.float64), model.ocfg.M_o, model.ocfg.patch_size)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    shifted = logits - Tensor(logits.data.max(axis=-1, keepdims=True))
    logz = T.log(T.exp(shifted).sum(axis=-1))
    picked = shifted[np.arange(len(labels)), labels]
    return (logz - picked).mean()


def finetune_classify(model: ModeModel, shapes: np.ndarray, labels: np.ndarray, cfg: ClassifyConfig | None = None,
                      log=None) -> list[float]:
    """Train the object encoder and classification head with cross-entropy.

    Only the ``object_classify`` parameters enter the optimizer, so the scene
    expert and the object decoder stay bit-identical. Returns per-epoch mean loss.
    """
    cfg = cfg or ClassifyConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("classification fine-tuning needs at least two classes")
    if labels.max() >= model.ocfg.num_classes:
        raise ValueError(f"label {labels.max()} exceeds num_classes={model.ocfg.num_classes}")
    centers, patches = shape_inputs(model, shapes)
    named = dict(model.named_parameters())
    params = [named[n] for n in activate(model, "object_classify")]
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(labels))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = cross_entropy(model.classify(patches[idx], centers[idx]), labels[idx])
            backward(loss, params)
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if log:
            log(f"epoch {epoch}: loss {history[-1]:.4f}")
    return history


def predict_classes(model: ModeModel, shapes: np.ndarray, batch_size: int = 64) -> np.ndarray:
    centers, patches = shape_inputs(model, shapes)
    preds = [model.classify(patches[i:i + batch_size], centers[i:i + batch_size]).data.argmax(axis=-1)
             for i in range(0, len(centers), batch_size)]
    return np.concatenate(preds)


def accuracy_report(preds: np.ndarray, labels: np.ndarray, config: dict | None = None) -> EvalReport:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    acc = float(np.mean(preds == labels))
    return EvalReport("object_classify", {"accuracy": acc}, len(labels), fingerprint(config or {}), _echo(config))


def eval_classify(model: ModeModel, shapes: np.ndarray, labels: np.ndarray, config: dict | None = None) -> EvalReport:
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    return accuracy_report(predict_classes(model, shapes), labels, config)


# -- localization ------------------------------------------------------

def localization_metrics(pred: np.ndarray, gt: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Best IoU of each ground-truth box over the predictions paired with it (0 if unpaired)."""
    best = np.zeros(len(gt))
    for p, g in np.asarray(pairs).reshape(-1, 2):
        v = iou(Box3D(pred[p, :3], pred[p, 3:]), Box3D(gt[g, :3], gt[g, 3:]))
        best[g] = max(best[g], v)
    return best


def summarize_ious(ious: np.ndarray, config: dict | None = None) -> EvalReport:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("no ground-truth boxes to evaluate")
    metrics = {"mean_iou": float(ious.mean()), "recall_at_025": float(np.mean(ious >= 0.25)),
               "recall_at_05": float(np.mean(ious >= 0.5))}
    return EvalReport("scene_localize", metrics, int(ious.size), fingerprint(config or {}), _echo(config))


def eval_localize(model: ModeModel, scenes, cfg: PretrainConfig, seed: int = EVAL_SEED,
                  config: dict | None = None) -> EvalReport:
    """Sample blocks with a fixed seed, run the scene pipeline and score the paired boxes.

    No augmentation is applied at evaluation; the object encoder sees the
    same masked view it was pretrained on.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("eval_localize needs at least one scene")
    tg = replace(cfg.toggles, scene_rotation=False, block_rotation=False, scene_regression=True)
    ecfg = replace(cfg, toggles=tg)
    ious = []
    for i, pts in enumerate(scenes):
        prep = prepare_scene(model, pts, ecfg, 0, i, seed=seed)
        out = forward_scene(model, prep, ecfg)
        ious.append(localization_metrics(out.boxes.data, prep.gt_boxes, out.pairs))
    return summarize_ious(np.concatenate(ious), config)
