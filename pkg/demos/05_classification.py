"""
Selective activation: shape classification
==========================================

Only the object expert and the classification head are trained; the scene
expert is untouched, which we check byte for byte.
"""
import numpy as np

from pointmode.downstream import ClassifyConfig, eval_classify, finetune_classify
from pointmode.model import ModeModel, activate
from pointmode.scenegen import gen_labeled_shapes

train_x, train_y = gen_labeled_shapes(200, 256, seed=0)
test_x, test_y = gen_labeled_shapes(100, 256, seed=1)

model = ModeModel(seed=0)
active = activate(model, "object_classify")
print("active parameter tensors:", len(active), "of", len(list(model.named_parameters())))

scene_before = {n: p.data.tobytes() for n, p in model.named_parameters() if n.startswith("scene.")}
print("accuracy before: %.3f" % eval_classify(model, test_x, test_y).metrics["accuracy"])
finetune_classify(model, train_x, train_y, ClassifyConfig(epochs=30), log=print)
print("accuracy after:  %.3f" % eval_classify(model, test_x, test_y).metrics["accuracy"])

same = all(p.data.tobytes() == scene_before[n] for n, p in model.named_parameters() if n.startswith("scene."))
print("scene expert unchanged:", same)
