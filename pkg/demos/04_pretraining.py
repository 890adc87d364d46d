"""
Block-to-scene pretraining
==========================

A few dozen steps of the joint objective on a handful of scenes: masked
reconstruction of each block in object space plus regression of every
block's box in the scene.
"""
import numpy as np

from pointmode.blocks import BlockConfig
from pointmode.model import ModeModel, expected_param_count
from pointmode.pretrain import PretrainConfig, Trainer, evaluate_loss, pretrain_run
from pointmode.scenegen import SceneSpec, gen_scene

scenes = [gen_scene(SceneSpec(n_points=1024), s).points for s in range(4)]
model = ModeModel(seed=0)
print("parameters:", model.num_parameters(), expected_param_count(model.ocfg, model.scfg))

cfg = PretrainConfig(blocks=BlockConfig(K_o=4, N_o=128), epochs=10)
before = evaluate_loss(model, scenes, cfg)
trainer = Trainer.create(model, cfg)
recs = pretrain_run(trainer, scenes, on_step=lambda r: r["step"] % 10 == 0 and print(
    "step %3d  total %.4f  cd %.4f  giou %.4f" % (r["step"], r["loss_total"], r["loss_cd"], r["loss_giou"])))
after = evaluate_loss(model, scenes, cfg)
print("fixed-draw loss %.4f -> %.4f over %d steps" % (before["loss_total"], after["loss_total"], len(recs)))
print("mean step time %.0f ms" % np.mean([r["wall_ms"] for r in recs]))
