"""Command-line entry point: ``pointmode {gen-data,pretrain,finetune,eval,grad-check}``.

``POINTMODE_THREADS`` caps BLAS worker threads. It only takes effect when
this module is the first to import numpy (the normal case for the console
script).
"""
from __future__ import annotations

import os

_threads = os.environ.get("POINTMODE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import io  # noqa: E402
from .config import ConfigError, RunConfig, load_config, to_dict  # noqa: E402
from .downstream import eval_classify, eval_localize, finetune_classify  # noqa: E402
from .model import TASKS, ModeModel, activate  # noqa: E402
from .pretrain import Trainer, pretrain_run  # noqa: E402
from .scenegen import gen_labeled_shapes, gen_scene  # noqa: E402

MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.pmck"
METRICS = "metrics.jsonl"


class IncompatibleCheckpoint(ValueError):
    pass


def _threads_ok() -> None:
    if _threads and (not _threads.isdigit() or int(_threads) < 1):
        raise ConfigError(f"POINTMODE_THREADS must be a positive integer, got {_threads!r}")


def resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "precision", None):
        cfg.precision = args.precision
    cfg.pretrain.seed = cfg.seed
    cfg.finetune.seed = cfg.seed
    return cfg


def build_model(cfg: RunConfig) -> ModeModel:
    return ModeModel(cfg.model.object, cfg.model.scene, seed=cfg.seed, dtype=cfg.dtype)


# -- dataset -----------------------------------------------------------

def scene_seeds(cfg: RunConfig) -> dict[str, range]:
    s0, d = cfg.data.seed_start, cfg.data
    return {"train": range(s0, s0 + d.n_train), "test": range(s0 + d.n_train, s0 + d.n_train + d.n_test)}


def gen_data(cfg: RunConfig, out: Path) -> dict:
    files, scenes = {}, {}
    for split, seeds in scene_seeds(cfg).items():
        scenes[split] = []
        for s in seeds:
            sc = gen_scene(cfg.data.scene, s)
            rel = f"scenes/{split}_{s:05d}.pmd"
            io.write_points(out / rel, sc.points)
            files[rel] = io.sha256_file(out / rel)
            scenes[split].append({"file": rel, "seed": s, "objects": [
                {"class": int(o.shape_class), "box": o.gt_box.as_array().tolist()} for o in sc.objects]})
    sh = cfg.data.shapes
    shapes = {}
    for split, n, seed in (("train", sh.n_train, cfg.seed), ("test", sh.n_test, cfg.seed + 1)):
        if n == 0:
            continue
        pts, labels = gen_labeled_shapes(n, sh.n_points, seed, sh.jitter)
        rel = f"shapes/{split}.pmd"
        io.write_points(out / rel, pts.reshape(-1, 3))
        files[rel] = io.sha256_file(out / rel)
        shapes[split] = {"file": rel, "n_points": sh.n_points, "labels": labels.tolist()}
    manifest = {"format": 1, "config": to_dict(cfg), "scenes": scenes, "shapes": shapes, "files": files}
    io.atomic_write(out / MANIFEST, io.dumps_json(manifest).encode())
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path} (run gen-data first)")
    return json.loads(path.read_text())


def load_scenes(data_dir, split: str) -> list[np.ndarray]:
    man = load_manifest(data_dir)
    return [io.read_points(Path(data_dir) / e["file"], man["files"][e["file"]]) for e in man["scenes"].get(split, [])]


def load_shapes(data_dir, split: str) -> tuple[np.ndarray, np.ndarray]:
    man = load_manifest(data_dir)
    if split not in man["shapes"]:
        raise FileNotFoundError(f"no '{split}' shape set listed in {Path(data_dir) / MANIFEST}")
    e = man["shapes"][split]
    pts = io.read_points(Path(data_dir) / e["file"], man["files"][e["file"]])
    labels = np.array(e["labels"], dtype=np.int64)
    return pts.reshape(len(labels), e["n_points"], 3), labels


# -- checkpoints -------------------------------------------------------

def load_for_task(model: ModeModel, path, task: str) -> dict:
    """Load the parameters ``task`` needs; anything else keeps its initial value."""
    tensors, header = io.load_checkpoint(path)
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("model.")}
    own = dict(model.named_parameters())
    for name in activate(model, task):
        if name not in params:
            raise IncompatibleCheckpoint(f"{path}: checkpoint lacks parameter {name!r} needed for {task}")
        if params[name].shape != own[name].shape:
            raise IncompatibleCheckpoint(
                f"{path}: {name} has shape {params[name].shape} in the checkpoint but {own[name].shape} "
                f"under the current config (check model widths such as C_o / C_s)")
        own[name].data = np.array(params[name], dtype=model.dtype)
    return header


# -- commands ----------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve(args)
    man = gen_data(cfg, Path(args.out))
    n = sum(len(v) for v in man["scenes"].values())
    print(f"wrote {n} scenes and {len(man['shapes'])} shape sets to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve(args)
    out = Path(args.out)
    train = load_scenes(args.data, "train")
    if not train:
        raise FileNotFoundError(f"no training scenes listed in {Path(args.data) / MANIFEST}")
    model = build_model(cfg)
    trainer = Trainer.create(model, cfg.pretrain)
    if args.resume:
        tensors, header = io.load_checkpoint(out / CHECKPOINT)
        if header.get("config", {}).get("model") != to_dict(cfg.model):
            raise IncompatibleCheckpoint(f"{out / CHECKPOINT}: model config differs from the current config")
        trainer.restore(tensors, header)
        print(f"resuming at step {trainer.step}")
    else:
        (out / METRICS).unlink(missing_ok=True)
    recs = pretrain_run(trainer, train, out, header_extra={"config": to_dict(cfg)},
                        on_step=lambda r: print(f"step {r['step']}: loss {r['loss_total']:.5f} "
                                                f"(cd {r['loss_cd']:.5f}, giou {r['loss_giou']:.5f})"))
    print(f"{len(recs)} steps; checkpoint at {out / CHECKPOINT}")
    return 0


def cmd_finetune(args) -> int:
    cfg = resolve(args)
    if args.task != "object_classify":
        raise ConfigError(f"finetune supports task object_classify only (got {args.task!r}); "
                          "the scene pipeline is trained by 'pretrain'")
    model = build_model(cfg)
    if args.checkpoint:
        load_for_task(model, args.checkpoint, args.task)
    shapes, labels = load_shapes(args.data, "train")
    finetune_classify(model, shapes, labels, cfg.finetune, log=print)
    out = Path(args.out)
    io.save_checkpoint(out / CHECKPOINT, {f"model.{k}": v for k, v in model.state_dict().items()},
                       {"step": 0, "seed": cfg.seed, "task": args.task, "config": to_dict(cfg)})
    test_shapes, test_labels = load_shapes(args.data, "test")
    report = eval_classify(model, test_shapes, test_labels, to_dict(cfg))
    io.atomic_write(out / "report.json", report.to_json().encode())
    print(report.to_json(), end="")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(args)
    model = build_model(cfg)
    if args.checkpoint:
        load_for_task(model, args.checkpoint, args.task)
    if args.task == "object_classify":
        shapes, labels = load_shapes(args.data, "test")
        report = eval_classify(model, shapes, labels, to_dict(cfg))
    elif args.task == "scene_localize":
        report = eval_localize(model, load_scenes(args.data, "test"), cfg.pretrain, cfg.eval_seed, to_dict(cfg))
    else:
        raise ConfigError(f"eval supports object_classify and scene_localize, got {args.task!r}")
    text = report.to_json()
    if args.out:
        io.atomic_write(Path(args.out) / f"report_{args.task}.json", text.encode())
    print(text, end="")
    return 0


def cmd_grad_check(args) -> int:
    from .verify import TOLERANCE, run_all
    cfg = resolve(args)
    if cfg.precision != "f64":
        raise ConfigError("grad-check runs in 64-bit mode only (--precision f64)")
    report = run_all(range(args.seeds), range(0 if args.no_end_to_end else 1))
    width = max(len(k) for k in report)
    failed = 0
    for name, err in report.items():
        ok = err < TOLERANCE
        failed += not ok
        print(f"{name:<{width}}  max rel err {err:.3e}  {'ok' if ok else 'FAIL'}")
    print(f"{len(report) - failed}/{len(report)} checks below {TOLERANCE:g}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointmode", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, out=False, ckpt=False, task=False):
        sp.add_argument("--config", type=Path, help="JSON run config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--precision", choices=("f32", "f64"), help="override numeric precision")
        if data:
            sp.add_argument("--data", type=Path, required=True, help="dataset directory from gen-data")
        if out:
            sp.add_argument("--out", type=Path, required=out == "required", help="output directory")
        if ckpt:
            sp.add_argument("--checkpoint", type=Path, help="checkpoint file to start from")
        if task:
            sp.add_argument("--task", choices=TASKS, default="object_classify")

    common(sub.add_parser("gen-data", help="write synthetic scenes and labeled shapes"), out="required")
    sp = sub.add_parser("pretrain", help="block-to-scene pretraining")
    common(sp, data=True, out="required")
    sp.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.pmck")
    common(sub.add_parser("finetune", help="fine-tune the object expert for classification"),
           data=True, out="required", ckpt=True, task=True)
    common(sub.add_parser("eval", help="evaluate a checkpoint"), data=True, out=True, ckpt=True, task=True)
    sp = sub.add_parser("grad-check", help="finite-difference checks of every primitive and the full loss")
    common(sp)
    sp.add_argument("--seeds", type=int, default=10, help="random instances per primitive")
    sp.add_argument("--no-end-to-end", action="store_true", help="skip the micro-model loss check")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval,
            "grad-check": cmd_grad_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _threads_ok()
        return COMMANDS[args.command](args)
    except (ConfigError, IncompatibleCheckpoint, io.FormatError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
