"""Finite-difference verification of the whole training loss on a micro model."""
from __future__ import annotations

import numpy as np

from .autodiff import grad_check
from .autodiff.checks import run_primitive_checks
from .blocks import BlockConfig
from .model import ModeModel, ObjectExpertConfig, SceneExpertConfig
from .pretrain import PretrainConfig, Toggles, forward_scene, prepare_scene
from .scenegen import SceneSpec, gen_scene

TOLERANCE = 1e-4


def micro_setup(seed: int = 0, stop_gradient: bool = False):
    """Micro model (C=8, M_o=4, K_o=2, q=2), one small scene and its prepared inputs."""
    ocfg = ObjectExpertConfig(M_o=4, patch_size=4, C_o=8, n_o=1, m_o=1, heads=2, embed_hidden=8, mask_ratio=0.5)
    scfg = SceneExpertConfig(M_s=4, patch_size=8, C_s=8, n_s=1, m_s=1, q=2, heads=2, embed_hidden=8)
    model = ModeModel(ocfg, scfg, seed=seed)
    scene = gen_scene(SceneSpec(n_points=96, object_count=2, extent=(4.0, 4.0, 2.0)), seed).points
    cfg = PretrainConfig(blocks=BlockConfig(K_o=2, N_o=16), toggles=Toggles(stop_gradient=stop_gradient), seed=seed)
    prep = prepare_scene(model, scene, cfg, step=0)
    return model, cfg, prep


def end_to_end_error(seed: int = 0, stop_gradient: bool = False) -> float:
    """Max relative error of the joint loss gradient over every parameter that receives one.

    With the barrier on, the object encoder still shapes the forward value
    through the block features but is cut from the backward pass, so its
    parameters are left out of that comparison.
    """
    model, cfg, prep = micro_setup(seed, stop_gradient)
    names = [n for n, _ in model.named_parameters() if not n.startswith("cls_head.")]
    if stop_gradient:
        names = [n for n in names if not n.startswith(("object.embed.", "object.encoder."))]
    named = dict(model.named_parameters())
    return grad_check(lambda _: forward_scene(model, prep, cfg).terms.total, [named[n] for n in names])


def run_all(seeds=range(10), e2e_seeds=range(2)) -> dict[str, float]:
    report = dict(run_primitive_checks(seeds))
    for s in e2e_seeds:
        report[f"end_to_end[seed={s}]"] = end_to_end_error(s, stop_gradient=False)
        report[f"end_to_end_barrier[seed={s}]"] = end_to_end_error(s, stop_gradient=True)
    return report


__all__ = ["TOLERANCE", "micro_setup", "end_to_end_error", "run_all"]
