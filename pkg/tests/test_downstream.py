import numpy as np
import pytest

from pointmode.downstream import (ClassifyConfig, EvalReport, accuracy_report, eval_classify, eval_localize,
                                  finetune_classify, localization_metrics, summarize_ious)
from pointmode.model import ModeModel, ObjectExpertConfig, SceneExpertConfig
from pointmode.pretrain import PretrainConfig, match_predictions
from pointmode.scenegen import SceneSpec, gen_labeled_shapes, gen_scene

SMALL_OBJ = ObjectExpertConfig(M_o=8, patch_size=8, C_o=16, n_o=1, m_o=1, heads=2, embed_hidden=16)
SMALL_SCENE = SceneExpertConfig(M_s=16, patch_size=16, C_s=16, n_s=1, m_s=1, q=4, heads=2, embed_hidden=16)


def small_model(seed=0):
    return ModeModel(SMALL_OBJ, SMALL_SCENE, seed=seed)


# -- reports -----------------------------------------------------------

def test_report_invariants():
    with pytest.raises(ValueError):
        EvalReport("object_classify", {"accuracy": 1.5}, 3, "x")
    with pytest.raises(ValueError):
        EvalReport("object_classify", {"accuracy": 0.5}, 0, "x")


def test_accuracy_perfect_and_constant():
    labels = np.arange(40) % 4
    assert accuracy_report(labels, labels).metrics["accuracy"] == 1.0
    assert accuracy_report(np.zeros(40, int), labels).metrics["accuracy"] == 0.25


def test_accuracy_equals_confusion_trace():
    rng = np.random.default_rng(0)
    labels, preds = rng.integers(0, 4, 97), rng.integers(0, 4, 97)
    tally = np.zeros((4, 4))
    for p, t in zip(preds, labels):
        tally[t, p] += 1
    assert accuracy_report(preds, labels).metrics["accuracy"] == tally.trace() / tally.sum()


def test_empty_sets_rejected():
    with pytest.raises(ValueError):
        accuracy_report(np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        eval_classify(small_model(), np.zeros((0, 64, 3)), np.zeros(0, int))
    with pytest.raises(ValueError):
        eval_localize(small_model(), [], PretrainConfig())
    with pytest.raises(ValueError):
        summarize_ious(np.zeros(0))


def test_localization_metrics_exact_and_degenerate():
    rng = np.random.default_rng(1)
    gt = np.hstack([rng.uniform(-1, 1, (5, 3)), rng.uniform(0.1, 0.5, (5, 3))])
    pairs = match_predictions(gt, gt)
    rep = summarize_ious(localization_metrics(gt, gt, pairs))
    assert rep.metrics == {"mean_iou": 1.0, "recall_at_025": 1.0, "recall_at_05": 1.0}
    flat = gt.copy()
    flat[:, 3:] = 0.0
    assert summarize_ious(localization_metrics(flat, gt, pairs)).metrics["mean_iou"] == 0.0


def test_best_iou_over_tiled_queries():
    gt = np.array([[0, 0, 0, 1, 1, 1.0]])
    pred = np.array([[5, 5, 5, 1, 1, 1.0], [0, 0, 0, 1, 1, 1.0]])
    assert localization_metrics(pred, gt, match_predictions(pred, gt)).tolist() == [1.0]


# -- fine-tuning -------------------------------------------------------

def test_single_class_rejected():
    shapes, _ = gen_labeled_shapes(4, 64, 0)
    with pytest.raises(ValueError, match="two classes"):
        finetune_classify(small_model(), shapes, np.zeros(4, int))


def test_finetune_leaves_scene_and_decoder_untouched():
    shapes, labels = gen_labeled_shapes(16, 64, 0)
    m = small_model(1)
    before = {n: p.data.tobytes() for n, p in m.named_parameters()}
    finetune_classify(m, shapes, labels, ClassifyConfig(epochs=2, batch_size=8))
    changed = {n for n, p in m.named_parameters() if p.data.tobytes() != before[n]}
    assert changed and all(n.startswith(("object.embed.", "object.encoder.", "cls_head.")) for n in changed)


def test_zero_epochs_is_chance_level():
    shapes, labels = gen_labeled_shapes(200, 64, 3)
    m = small_model(2)
    hist = finetune_classify(m, shapes, labels, ClassifyConfig(epochs=0))
    assert hist == []
    acc = eval_classify(m, shapes, labels).metrics["accuracy"]
    assert 0.1 <= acc <= 0.5


def test_eval_localize_deterministic():
    scenes = [gen_scene(SceneSpec(n_points=512, object_count=2), s).points for s in range(2)]
    cfg = PretrainConfig()
    m = small_model(3)
    a, b = eval_localize(m, scenes, cfg), eval_localize(m, scenes, cfg)
    assert a.to_json() == b.to_json()
    assert a.n_samples == 2 * cfg.blocks.K_o
