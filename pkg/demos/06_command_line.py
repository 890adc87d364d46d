"""
Driving the command line
========================

The same pipeline through the ``pointmode`` subcommands, using a tiny
config so it finishes in seconds. Outputs go to a temporary directory.
"""
import json
import tempfile
from pathlib import Path

from pointmode.cli import main

tiny = {
    "data": {"n_train": 2, "n_test": 2, "scene": {"n_points": 256, "object_count": [1, 2]},
             "shapes": {"n_train": 16, "n_test": 8, "n_points": 64}},
    "model": {"object": {"M_o": 4, "patch_size": 8, "C_o": 16, "n_o": 1, "m_o": 1, "heads": 2, "embed_hidden": 16},
              "scene": {"M_s": 8, "patch_size": 8, "C_s": 16, "n_s": 1, "m_s": 1, "q": 2, "heads": 2,
                        "embed_hidden": 16}},
    "pretrain": {"blocks": {"K_o": 2, "N_o": 32}, "epochs": 2},
    "finetune": {"epochs": 2, "batch_size": 4},
}

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(tiny))
    data, run = str(root / "data"), str(root / "run")
    main(["gen-data", "--config", str(cfg), "--out", data])
    main(["pretrain", "--config", str(cfg), "--data", data, "--out", run])
    ckpt = str(root / "run" / "checkpoint.pmck")
    main(["eval", "--config", str(cfg), "--data", data, "--checkpoint", ckpt, "--task", "scene_localize"])
    main(["finetune", "--config", str(cfg), "--data", data, "--checkpoint", ckpt, "--out", str(root / "ft")])
    print(sorted(p.name for p in (root / "run").iterdir()))
