"""Block-to-scene joint pretraining.

Each scene is cut into random blocks. The blocks go to object space and
through a masked-reconstruction pass of the shared object expert, while the
scene expert regresses every block's original box from the pooled block
features. The two losses are combined with weights ``lambda1`` (Chamfer)
and ``lambda2`` (1 - GIoU).

Randomness is derived per (seed, step, batch slot, stream), so a run resumed
from a checkpoint replays the same draws, and switching augmentation on or
off leaves the block and mask draws untouched.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import io
from .autodiff import AdamW, NonFiniteError, Tensor, backward, cosine_lr
from .autodiff import ops as T
from .blocks import BlockConfig, gt_box_array, sample_blocks, to_object_space
from .geomcore import Box3D, giou, normalize_unit, rotate_about_up
from .model import ModeModel, patchify, patchify_batch, plan_mask

# RNG stream ids
BLOCKS, MASK, SCENE_AUG, BLOCK_AUG, ORDER = range(5)


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValueError("lambda1 and lambda2 cannot both be zero")


@dataclass
class Toggles:
    scene_regression: bool = True
    object_reconstruction: bool = True
    coord_transform: bool = True
    joint_coupling: bool = True
    stop_gradient: bool = True
    matching: str = "assigned"
    scene_rotation: bool = True
    block_rotation: bool = True

    def __post_init__(self):
        if not (self.scene_regression or self.object_reconstruction):
            raise ValueError("enable at least one of scene_regression / object_reconstruction")
        if self.joint_coupling and not (self.scene_regression and self.object_reconstruction):
            raise ValueError("joint_coupling needs both scene_regression and object_reconstruction")
        if self.matching not in ("assigned", "hungarian"):
            raise ValueError(f"matching must be 'assigned' or 'hungarian', got {self.matching!r}")


@dataclass
class PretrainConfig:
    blocks: BlockConfig = field(default_factory=BlockConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    toggles: Toggles = field(default_factory=Toggles)
    lr: float = 5e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 1
    batch_size: int = 1
    max_steps: int | None = None
    schedule: str = "constant"
    min_lr: float = 0.0
    checkpoint_every: int = 0
    # map each scene into [-1, 1] before anything else; IoU and GIoU are scale-free
    normalize_scene: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        self.betas = tuple(self.betas)

    def total_steps(self, n_scenes: int) -> int:
        per_epoch = -(-n_scenes // self.batch_size)
        total = self.epochs * per_epoch
        return total if self.max_steps is None else min(total, self.max_steps)

    def lr_at(self, step: int, total: int) -> float:
        if self.schedule == "cosine":
            return cosine_lr(self.lr, step, total, self.min_lr)
        return self.lr


def stream(seed: int, step: int, slot: int, which: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, slot, which])


# -- differentiable losses ---------------------------------------------

def chamfer_loss(recon: Tensor, target: np.ndarray) -> Tensor:
    """Mean over patches of the symmetric Chamfer distance; ``(P, k, 3)`` each. Empty -> 0."""
    p, k = recon.shape[0], recon.shape[1]
    if p == 0:
        return Tensor(np.zeros((), dtype=recon.dtype))
    tgt = Tensor(np.asarray(target, dtype=recon.dtype).reshape(p, 1, -1, 3))
    d = ((recon.reshape(p, k, 1, 3) - tgt) ** 2).sum(axis=-1)
    per_patch = d.min(axis=2).mean(axis=1) + d.min(axis=1).mean(axis=1)
    return per_patch.mean()


def _prod3(x: Tensor) -> Tensor:
    return x[:, 0] * x[:, 1] * x[:, 2]


def giou_tensor(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Row-wise GIoU between predicted ``(n, 6)`` boxes and fixed target boxes.

    Predicted half-extents come out of softplus and are strictly positive, so
    the union is never empty.
    """
    g = Tensor(np.asarray(gt, dtype=pred.dtype))
    pc, ph = pred[:, :3], pred[:, 3:]
    gc, gh = g[:, :3], g[:, 3:]
    plo, phi, glo, ghi = pc - ph, pc + ph, gc - gh, gc + gh
    inter = _prod3(T.relu(T.minimum(phi, ghi) - T.maximum(plo, glo)))
    union = _prod3(phi - plo) + _prod3(ghi - glo) - inter
    enclose = _prod3(T.maximum(phi, ghi) - T.minimum(plo, glo))
    return inter / union - (enclose - union) / enclose


def giou_loss(pred: Tensor, gt_boxes: np.ndarray, pairs: np.ndarray) -> Tensor:
    """Mean of ``1 - GIoU`` over ``(pred_index, gt_index)`` pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("giou_loss: empty pairing")
    g = giou_tensor(pred[pairs[:, 0]], np.asarray(gt_boxes)[pairs[:, 1]])
    return (1.0 - g).mean()


def match_predictions(pred: np.ndarray, gt: np.ndarray, mode: str = "assigned") -> np.ndarray:
    """Pair predictions with ground-truth boxes; returns ``(n, 2)`` index rows sorted by prediction.

    ``assigned`` pairs query ``j`` with block ``j mod K_o``. ``hungarian``
    solves the min-cost bijection over ``min(q, K_o)`` pairs with cost
    ``1 - GIoU``.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    q, k = len(pred), len(gt)
    if q < 1 or k < 1:
        raise ValueError("match_predictions needs at least one prediction and one target")
    if mode == "assigned":
        return np.stack([np.arange(q), np.arange(q) % k], axis=1)
    if mode != "hungarian":
        raise ValueError(f"unknown matching mode {mode!r}")
    cost = giou_cost(pred, gt)
    rows, cols = linear_sum_assignment(cost)
    return np.stack([rows, cols], axis=1).astype(np.int64)


def giou_cost(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pb = [Box3D(r[:3], r[3:]) for r in pred]
    gb = [Box3D(r[:3], r[3:]) for r in gt]
    return np.array([[1.0 - giou(a, b) for b in gb] for a in pb])


def check_pairing(pairs: np.ndarray, q: int, k: int, mode: str) -> None:
    pairs = np.asarray(pairs).reshape(-1, 2)
    if len(pairs) == 0 or pairs[:, 0].max() >= q or pairs[:, 1].max() >= k or pairs.min() < 0:
        raise ValueError(f"pairing indices out of range for q={q}, K_o={k}")
    if mode == "assigned" and len(pairs) != q:
        raise ValueError(f"assigned pairing must cover all {q} queries, got {len(pairs)}")
    if mode == "hungarian":
        if len(pairs) != min(q, k) or len(set(pairs[:, 0])) != len(pairs) or len(set(pairs[:, 1])) != len(pairs):
            raise ValueError("hungarian pairing must be a bijection over min(q, K_o) pairs")


@dataclass
class LossTerms:
    total: Tensor
    cd: Tensor
    giou: Tensor


def joint_loss(recon: Tensor | None, gt_patches, pred_boxes: Tensor | None, gt_boxes, pairs,
               weights: LossWeights, matching: str = "assigned") -> LossTerms:
    """``lambda1 * Chamfer + lambda2 * mean(1 - GIoU)``; a missing input makes its term 0."""
    zero = Tensor(np.zeros(()))
    cd = zero if recon is None else chamfer_loss(recon.reshape(-1, *recon.shape[-2:]),
                                                 np.asarray(gt_patches).reshape(-1, recon.shape[-2], 3))
    if pred_boxes is None:
        gl = zero
    else:
        check_pairing(pairs, pred_boxes.shape[0], len(gt_boxes), matching)
        gl = giou_loss(pred_boxes, gt_boxes, pairs)
    total = cd * weights.lambda1 + gl * weights.lambda2
    return LossTerms(total, cd, gl)


# -- one scene through the pipeline ------------------------------------

@dataclass
class PreparedScene:
    """All sampled, numpy-only inputs for one scene at one step."""
    scene_centers: np.ndarray
    scene_patches: np.ndarray
    gt_boxes: np.ndarray           # (K_o, 6) in scene coordinates
    vis_centers: np.ndarray        # (K_o, V, 3)
    vis_patches: np.ndarray        # (K_o, V, k, 3)
    mask_centers: np.ndarray       # (K_o, n_mask, 3)
    mask_patches: np.ndarray       # (K_o, n_mask, k, 3)


def prepare_scene(model: ModeModel, points: np.ndarray, cfg: PretrainConfig, step: int, slot: int = 0,
                  seed: int | None = None) -> PreparedScene:
    seed = cfg.seed if seed is None else seed
    tg, oc, sc = cfg.toggles, model.ocfg, model.scfg
    pts = np.asarray(points, dtype=np.float64)
    if cfg.normalize_scene:
        pts = normalize_unit(pts, center=(pts.min(axis=0) + pts.max(axis=0)) / 2)[0]
    if tg.scene_rotation:
        angle = float(stream(seed, step, slot, SCENE_AUG).uniform(0.0, 2 * np.pi))
        mid = (pts.min(axis=0) + pts.max(axis=0)) / 2
        mid[2] = 0.0
        pts = rotate_about_up(pts - mid, angle) + mid
    bs = sample_blocks(pts, cfg.blocks, stream(seed, step, slot, BLOCKS))
    gt = gt_box_array(bs, cfg.blocks.center_mode)
    block_pts = bs.points
    if tg.coord_transform:
        aug = stream(seed, step, slot, BLOCK_AUG)
        block_pts = np.stack([to_object_space(b, c, aug, rotate=tg.block_rotation, strict=cfg.blocks.strict).points
                              for b, c in zip(bs.points, bs.centers)])
    centers, patches = patchify_batch(block_pts, oc.M_o, oc.patch_size)
    mrng = stream(seed, step, slot, MASK)
    plans = [plan_mask(oc.M_o, oc.mask_ratio, mrng) for _ in range(len(block_pts))]
    vis = np.stack([p.unmasked for p in plans])
    msk = np.stack([p.masked for p in plans])
    rows = np.arange(len(block_pts))[:, None]
    s_centers, s_patches = patchify(pts, sc.M_s, sc.patch_size)
    return PreparedScene(s_centers, s_patches, gt, centers[rows, vis], patches[rows, vis],
                         centers[rows, msk], patches[rows, msk])


@dataclass
class SceneOutputs:
    terms: LossTerms
    recon: Tensor | None
    boxes: Tensor | None
    pairs: np.ndarray | None


def forward_scene(model: ModeModel, prep: PreparedScene, cfg: PretrainConfig) -> SceneOutputs:
    tg = cfg.toggles
    need_obj = tg.object_reconstruction or tg.joint_coupling
    enc = model.object_encode(prep.vis_patches, prep.vis_centers) if need_obj else None
    recon = None
    if tg.object_reconstruction:
        recon = model.object_decode_reconstruct(enc, prep.vis_centers, prep.mask_centers)
    boxes = pairs = None
    if tg.scene_regression:
        k_o = len(prep.gt_boxes)
        bg = model.block_global_features(enc, barrier=tg.stop_gradient) if tg.joint_coupling else None
        q0, _ = model.enhance_queries(bg, k_o)
        tokens = model.scene_encode(prep.scene_patches, prep.scene_centers)
        boxes = model.regress_boxes(model.scene_decode(q0, tokens))
        pairs = match_predictions(boxes.data, prep.gt_boxes, tg.matching)
    terms = joint_loss(recon, prep.mask_patches, boxes, prep.gt_boxes, pairs, cfg.weights, tg.matching)
    return SceneOutputs(terms, recon, boxes, pairs)


# -- parameters touched by a configuration ----------------------------

_OBJ_ENC = ("object.embed.", "object.encoder.")
_OBJ_DEC = ("object.mask_token", "object.dec_pos.", "object.decoder.", "object.recon_head.")


def trainable_names(model: ModeModel, toggles: Toggles) -> list[str]:
    """Parameters that receive gradient under ``toggles``; the rest are left out of the optimizer."""
    prefixes: tuple[str, ...] = ()
    if toggles.object_reconstruction:
        prefixes += _OBJ_ENC + _OBJ_DEC
    if toggles.scene_regression:
        prefixes += ("scene.",)
        if toggles.joint_coupling:
            prefixes += ("projection.",)
            if not toggles.stop_gradient:
                prefixes += _OBJ_ENC
    return [n for n, _ in model.named_parameters() if n.startswith(prefixes)]


@dataclass
class Trainer:
    model: ModeModel
    cfg: PretrainConfig
    names: list[str]
    optimizer: AdamW
    step: int = 0

    @classmethod
    def create(cls, model: ModeModel, cfg: PretrainConfig) -> "Trainer":
        names = trainable_names(model, cfg.toggles)
        named = dict(model.named_parameters())
        opt = AdamW([named[n] for n in names], lr=cfg.lr, weight_decay=cfg.weight_decay, betas=cfg.betas,
                    eps=cfg.eps)
        return cls(model, cfg, names, opt)

    # -- persistence ---------------------------------------------------
    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"model.{n}": p for n, p in self.model.state_dict().items()}
        st = self.optimizer.state
        if st.m:
            for n, m, v in zip(self.names, st.m, st.v):
                out[f"optim.m.{n}"] = m
                out[f"optim.v.{n}"] = v
        return out

    def header(self, extra: dict | None = None) -> dict:
        head = {"step": self.step, "optim_step": self.optimizer.state.step, "seed": self.cfg.seed,
                "trainable": self.names, "pretrain": config_dict(self.cfg)}
        head.update(extra or {})
        return head

    def save(self, path, extra: dict | None = None) -> None:
        io.save_checkpoint(path, self.tensors(), self.header(extra))

    def restore(self, tensors: dict[str, np.ndarray], header: dict) -> None:
        self.model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        if header.get("trainable", self.names) != self.names:
            raise ValueError("checkpoint was trained with a different parameter set (toggles differ)")
        st = self.optimizer.state
        st.step = int(header.get("optim_step", 0))
        if st.step:
            st.m = [np.array(tensors[f"optim.m.{n}"]) for n in self.names]
            st.v = [np.array(tensors[f"optim.v.{n}"]) for n in self.names]
        self.step = int(header["step"])


def config_dict(cfg: PretrainConfig) -> dict:
    d = asdict(cfg)
    d["betas"] = list(cfg.betas)
    return d


def _grad_norm(params) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params if p.grad is not None)))


def pretrain_step(trainer: Trainer, scenes: Sequence[np.ndarray], total_steps: int | None = None) -> dict:
    """Forward every scene of the batch, backprop the mean loss and take one AdamW step."""
    model, cfg, step = trainer.model, trainer.cfg, trainer.step
    named = dict(model.named_parameters())
    params = [named[n] for n in trainer.names]
    trainer.optimizer.zero_grad()
    try:
        outs = [forward_scene(model, prepare_scene(model, pts, cfg, step, slot), cfg) for slot, pts in enumerate(scenes)]
        n = float(len(outs))
        total = outs[0].terms.total
        for o in outs[1:]:
            total = total + o.terms.total
        total = total / n
        backward(total, params)
    except NonFiniteError as exc:
        raise NonFiniteError(f"step {step}: {exc}") from exc
    groups = {"object": [], "scene": [], "projection": []}
    for name in trainer.names:
        key = name.split(".", 1)[0]
        if key in groups:
            groups[key].append(named[name])
    grad_norms = {k: _grad_norm(v) for k, v in groups.items()}
    grad_norms["total"] = _grad_norm(params)
    trainer.optimizer.step(cfg.lr_at(step, total_steps or 0))
    trainer.step += 1
    return {
        "loss_total": total.item(),
        "loss_cd": sum(o.terms.cd.item() for o in outs) / n,
        "loss_giou": sum(o.terms.giou.item() for o in outs) / n,
        "grad_norms": grad_norms,
    }


def batch_schedule(n_scenes: int, cfg: PretrainConfig, step: int) -> list[int]:
    """Dataset indices used at ``step``: a fresh seeded permutation every epoch."""
    per_epoch = -(-n_scenes // cfg.batch_size)
    epoch, pos = divmod(step, per_epoch)
    order = np.random.default_rng([cfg.seed, epoch, 0, ORDER]).permutation(n_scenes)
    return order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size].tolist()


def evaluate_loss(model: ModeModel, scenes: Sequence[np.ndarray], cfg: PretrainConfig, seed: int = 12345) -> dict:
    """Mean losses on fixed draws (step 0 of ``seed``), no parameter update."""
    outs = [forward_scene(model, prepare_scene(model, pts, cfg, 0, i, seed=seed), cfg) for i, pts in enumerate(scenes)]
    n = len(outs)
    return {"loss_total": sum(o.terms.total.item() for o in outs) / n,
            "loss_cd": sum(o.terms.cd.item() for o in outs) / n,
            "loss_giou": sum(o.terms.giou.item() for o in outs) / n}


def pretrain_run(trainer: Trainer, dataset: Sequence[np.ndarray], out_dir=None, header_extra: dict | None = None,
                 on_step: Callable[[dict], None] | None = None) -> list[dict]:
    """Train from ``trainer.step`` to the configured total, emitting one record per step.

    With ``out_dir`` the records are appended to ``metrics.jsonl`` and
    checkpoints go to ``checkpoint.pmck`` (final, and every
    ``checkpoint_every`` steps). A zero-step run still writes the checkpoint.
    """
    if len(dataset) == 0:
        raise ValueError("pretrain_run needs a non-empty dataset")
    cfg = trainer.cfg
    total = cfg.total_steps(len(dataset))
    per_epoch = -(-len(dataset) // cfg.batch_size)
    out = Path(out_dir) if out_dir is not None else None
    ckpt = out / "checkpoint.pmck" if out else None
    metrics_path = out / "metrics.jsonl" if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    records = []
    while trainer.step < total:
        t0 = time.perf_counter()
        idx = batch_schedule(len(dataset), cfg, trainer.step)
        step = trainer.step
        res = pretrain_step(trainer, [dataset[i] for i in idx], total)
        rec = {"step": step, "epoch": step // per_epoch, "loss_total": res["loss_total"], "loss_cd": res["loss_cd"],
               "loss_giou": res["loss_giou"], "grad_norm": res["grad_norms"]["total"],
               "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
        records.append(rec)
        if metrics_path:
            try:
                with open(metrics_path, "a") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            except OSError as exc:
                raise OSError(f"cannot append metrics to {metrics_path}: {exc}") from exc
        if on_step:
            on_step(rec)
        if ckpt and cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0 and trainer.step < total:
            trainer.save(ckpt, header_extra)
    if ckpt:
        trainer.save(ckpt, header_extra)
    return records
