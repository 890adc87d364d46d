"""Mixture-of-domain-experts model: a scene expert plus one shared object expert.

Shapes used throughout (B = blocks or shapes in a batch):

* object tokens  ``(B, M_o, C_o)`` (visible subset ``(B, V, C_o)`` when masked)
* scene tokens   ``(1, M_s, C_s)``
* queries        ``(1, q, C_s)``
* boxes          ``(q, 6)`` as ``[center xyz, half-extents xyz]``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import MLP, DecoderLayer, LayerNorm, Linear, Module, Tensor, Transformer, stop_gradient
from .autodiff import ops as T
from .geomcore import Box3D, fps, knn_many


@dataclass
class ObjectExpertConfig:
    M_o: int = 16
    patch_size: int = 16
    C_o: int = 64
    n_o: int = 3
    m_o: int = 2
    mask_ratio: float = 0.6
    heads: int = 4
    embed_hidden: int = 64
    num_classes: int = 4

    def __post_init__(self):
        if self.C_o % self.heads:
            raise ValueError(f"C_o={self.C_o} not divisible by heads={self.heads}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if self.M_o < 1 or self.patch_size < 1:
            raise ValueError("M_o and patch_size must be positive")


@dataclass
class SceneExpertConfig:
    M_s: int = 64
    patch_size: int = 16
    C_s: int = 64
    n_s: int = 3
    m_s: int = 8
    q: int = 8
    heads: int = 4
    embed_hidden: int = 64
    # initial predicted half-extent (normalized scene units). Boxes that start
    # huge sit on a GIoU plateau with no center gradient; boxes that start tiny
    # shrink further while disjoint from their targets and never recover
    box_init_half: float = 0.3
    # optional cap on predicted half-extents (sigmoid instead of softplus); without
    # a cap the best constant prediction is a room-sized box, another such plateau
    box_max_half: float | None = None
    # multiplier on center-relative scene patch coordinates; patches of a
    # normalized room are tiny, which hides their shape from the point MLP
    patch_scale: float = 1.0

    def __post_init__(self):
        if self.box_init_half <= 0:
            raise ValueError("box_init_half must be positive")
        if self.patch_scale <= 0:
            raise ValueError("patch_scale must be positive")
        if self.box_max_half is not None and not self.box_init_half < self.box_max_half:
            raise ValueError("box_init_half must be below box_max_half")
        if self.C_s % self.heads:
            raise ValueError(f"C_s={self.C_s} not divisible by heads={self.heads}")
        if self.n_s < 1 or self.m_s < 1 or self.q < 1:
            raise ValueError("n_s, m_s and q must be >= 1")


# -- point grouping ----------------------------------------------------

def patchify(points: np.ndarray, m: int, k: int, seed_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """FPS centers and their k-NN patches in center-relative coordinates."""
    centers_idx = fps(points, m, seed_index)
    centers = points[centers_idx]
    members = knn_many(points, centers, k)
    return centers, points[members] - centers[:, None, :]


def patchify_batch(point_sets: np.ndarray, m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = [patchify(p, m, k) for p in point_sets]
    return np.stack([c for c, _ in pairs]), np.stack([p for _, p in pairs])


@dataclass
class MaskPlan:
    masked: np.ndarray
    unmasked: np.ndarray

    @property
    def n_mask(self) -> int:
        return len(self.masked)


def mask_count(M: int, ratio: float) -> int:
    return int(np.floor(ratio * M + 0.5))


def plan_mask(M: int, ratio: float, rng_seed) -> MaskPlan:
    """Mask ``round-half-up(ratio * M)`` patches chosen uniformly without replacement."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    perm = rng.permutation(M)
    n = mask_count(M, ratio)
    return MaskPlan(np.sort(perm[:n]), np.sort(perm[n:]))


# -- modules -----------------------------------------------------------

class PatchEmbed(Module):
    """Shared per-point MLP max-pooled over each patch, plus an MLP of the patch center."""

    def __init__(self, dim: int, hidden: int, rng, dtype):
        self.point_mlp = MLP(3, hidden, dim, rng, dtype)
        self.pos_mlp = MLP(3, hidden, dim, rng, dtype)

    def tokens(self, patches: Tensor) -> Tensor:
        return self.point_mlp(patches).max(axis=-2)

    def __call__(self, patches: Tensor, centers: Tensor) -> Tensor:
        return self.tokens(patches) + self.pos_mlp(centers)


class ObjectExpert(Module):
    def __init__(self, cfg: ObjectExpertConfig, rng, dtype):
        c = cfg.C_o
        self.embed = PatchEmbed(c, cfg.embed_hidden, rng, dtype)
        self.encoder = Transformer(c, cfg.n_o, cfg.heads, rng, dtype)
        self.mask_token = Tensor(rng.normal(0.0, 0.02, size=c).astype(dtype), requires_grad=True)
        self.dec_pos = MLP(3, cfg.embed_hidden, c, rng, dtype)
        self.decoder = Transformer(c, cfg.m_o, cfg.heads, rng, dtype)
        self.recon_head = Linear(c, 3 * cfg.patch_size, rng, dtype)


class SceneExpert(Module):
    def __init__(self, cfg: SceneExpertConfig, rng, dtype):
        c = cfg.C_s
        self.embed = PatchEmbed(c, cfg.embed_hidden, rng, dtype)
        self.encoder = Transformer(c, cfg.n_s, cfg.heads, rng, dtype)
        self.queries = Tensor(rng.normal(0.0, 0.02, size=(cfg.q, c)).astype(dtype), requires_grad=True)
        self.decoder = [DecoderLayer(c, cfg.heads, rng, dtype) for _ in range(cfg.m_s)]
        self.dec_norm = LayerNorm(c, dtype)
        self.box_head = MLP(c, c, 6, rng, dtype)
        self.box_head.fc2.weight.data *= 0.1
        if cfg.box_max_half is None:
            self.box_head.fc2.bias.data[3:] = np.log(np.expm1(cfg.box_init_half))
        else:
            r = cfg.box_init_half / cfg.box_max_half
            self.box_head.fc2.bias.data[3:] = np.log(r / (1 - r))


TASKS = ("object_classify", "object_reconstruct", "scene_localize", "pretrain")


class ModeModel(Module):
    """Scene expert, shared object expert, the block projection and a classification head.

    One object-expert parameter set serves every block; gradients from all
    blocks of a step sum into it.
    """

    def __init__(self, ocfg: ObjectExpertConfig | None = None, scfg: SceneExpertConfig | None = None,
                 seed: int = 0, dtype=np.float64):
        self.ocfg = ocfg or ObjectExpertConfig()
        self.scfg = scfg or SceneExpertConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.object = ObjectExpert(self.ocfg, rng, self.dtype)
        self.scene = SceneExpert(self.scfg, rng, self.dtype)
        self.projection = Linear(self.ocfg.C_o, self.scfg.C_s, rng, self.dtype)
        self.cls_head = MLP(2 * self.ocfg.C_o, self.ocfg.C_o, self.ocfg.num_classes, rng, self.dtype)

    def _t(self, x) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing, extra = sorted(set(own) - set(state)), sorted(set(state) - set(own))
            raise ValueError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} does not match model {p.shape}")
            p.data = np.array(state[name], dtype=self.dtype)

    # -- object expert ---------------------------------------------------
    def object_encode(self, patches, centers) -> Tensor:
        """Embed visible patches ``(B, V, k, 3)`` at ``(B, V, 3)`` and run the encoder."""
        return self.object.encoder(self.object.embed(self._t(patches), self._t(centers)))

    def object_decode_reconstruct(self, enc: Tensor, vis_centers, mask_centers) -> Tensor:
        """Decode visible tokens plus mask tokens; reconstruct masked patches ``(B, n_mask, k, 3)``."""
        b, n_mask = enc.shape[0], np.shape(mask_centers)[1]
        k = self.ocfg.patch_size
        if n_mask == 0:
            return self._t(np.zeros((b, 0, k, 3)))
        obj = self.object
        vis = enc + obj.dec_pos(self._t(vis_centers))
        masked = obj.mask_token + obj.dec_pos(self._t(mask_centers))
        dec = obj.decoder(T.concat([vis, masked], axis=1))
        out = obj.recon_head(dec[:, enc.shape[1]:, :])
        return out.reshape(b, n_mask, k, 3)

    def classify(self, patches, centers) -> Tensor:
        tokens = self.object_encode(patches, centers)
        pooled = T.concat([tokens.max(axis=1), tokens.mean(axis=1)], axis=-1)
        return self.cls_head(pooled)

    # -- scene expert ----------------------------------------------------
    def scene_encode(self, patches, centers) -> Tensor:
        """Scene patches ``(M_s, k, 3)`` at ``(M_s, 3)`` -> ``(1, M_s, C_s)``."""
        p = self._t(np.asarray(patches)[None] * self.scfg.patch_scale)
        c = self._t(np.asarray(centers)[None])
        return self.scene.encoder(self.scene.embed(p, c))

    def block_global_features(self, enc: Tensor, barrier: bool = True) -> Tensor:
        """Max-pool each block's tokens and project to the scene width -> ``(K_o, C_s)``.

        With ``barrier`` the pooled features are cut from the graph before the
        projection, so nothing flows back into the object expert.
        """
        if enc.shape[1] == 0:
            raise ValueError("block_global_features: a block has no tokens")
        pooled = enc.max(axis=1)
        if barrier:
            pooled = stop_gradient(pooled)
        return self.projection(pooled)

    def enhance_queries(self, block_features: Tensor | None, k_o: int) -> tuple[Tensor, np.ndarray]:
        """Add block features to the learned queries, tiling rows ``j -> j mod K_o``.

        ``block_features=None`` stands for all-zero features (pipelines
        decoupled). Returns ``(Q0 of shape (1, q, C_s), assignment)``.
        """
        q = self.scfg.q
        assign = np.arange(q) % k_o
        queries = self.scene.queries
        if block_features is not None:
            queries = queries + block_features[assign]
        return queries.reshape(1, q, self.scfg.C_s), assign

    def scene_decode(self, queries: Tensor, scene_tokens: Tensor) -> Tensor:
        x = queries
        for layer in self.scene.decoder:
            x = layer(x, scene_tokens)
        return self.scene.dec_norm(x)

    def regress_boxes(self, decoded: Tensor) -> Tensor:
        """``(1, q, C_s)`` -> ``(q, 6)``; half-extents pass through softplus (or a scaled sigmoid) so they stay > 0."""
        raw = self.scene.box_head(decoded)[0]
        size = raw[:, 3:]
        if self.scfg.box_max_half is None:
            size = T.softplus(size)
        else:
            # sigmoid(x) = exp(x - softplus(x)), written with existing primitives
            size = T.exp(size - T.softplus(size)) * self.scfg.box_max_half
        return T.concat([raw[:, :3], size], axis=1)

    # -- selective activation -------------------------------------------
    def active_parameter_names(self, task: str) -> list[str]:
        return activate(self, task)


def boxes_from_array(arr: np.ndarray) -> list[Box3D]:
    return [Box3D(row[:3], row[3:6]) for row in np.asarray(arr, dtype=np.float64)]


_ACTIVE_PREFIXES = {
    "object_classify": ("object.embed.", "object.encoder.", "cls_head."),
    "object_reconstruct": ("object.",),
    "scene_localize": ("scene.", "object.embed.", "object.encoder.", "projection."),
    "pretrain": ("scene.", "object.", "projection."),
}


def activate(model: ModeModel, task: str) -> list[str]:
    """Names of the parameters a task uses; everything else stays frozen."""
    if task not in _ACTIVE_PREFIXES:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(_ACTIVE_PREFIXES)}")
    prefixes = _ACTIVE_PREFIXES[task]
    return [name for name, _ in model.named_parameters() if name.startswith(prefixes)]


def active_parameters(model: ModeModel, task: str) -> list[Tensor]:
    named = dict(model.named_parameters())
    return [named[n] for n in activate(model, task)]


# -- parameter accounting ---------------------------------------------

def _linear(i, o):
    return i * o + o


def _mlp(i, h, o):
    return _linear(i, h) + _linear(h, o)


def _encoder_layer(c):
    return 2 * (2 * c) + _linear(c, 3 * c) + _linear(c, c) + _mlp(c, 4 * c, c)


def _decoder_layer(c):
    attn = _linear(c, 3 * c) + _linear(c, c)
    cross = _linear(c, c) + _linear(c, 2 * c) + _linear(c, c)
    return 4 * (2 * c) + attn + cross + _mlp(c, 4 * c, c)


def expected_param_count(ocfg: ObjectExpertConfig, scfg: SceneExpertConfig) -> dict[str, int]:
    """Closed-form parameter counts per component (see README for the formulas)."""
    co, cs = ocfg.C_o, scfg.C_s
    obj = (2 * _mlp(3, ocfg.embed_hidden, co) + ocfg.n_o * _encoder_layer(co) + 2 * co + co
           + _mlp(3, ocfg.embed_hidden, co) + ocfg.m_o * _encoder_layer(co) + 2 * co
           + _linear(co, 3 * ocfg.patch_size))
    scene = (2 * _mlp(3, scfg.embed_hidden, cs) + scfg.n_s * _encoder_layer(cs) + 2 * cs
             + scfg.q * cs + scfg.m_s * _decoder_layer(cs) + 2 * cs + _mlp(cs, cs, 6))
    return {
        "object": obj,
        "scene": scene,
        "projection": _linear(co, cs),
        "cls_head": _mlp(2 * co, co, ocfg.num_classes),
    }
