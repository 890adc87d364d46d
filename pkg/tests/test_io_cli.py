import json

import numpy as np
import pytest

from pointmode import io
from pointmode.autodiff import BACKWARD
from pointmode.cli import main
from pointmode.config import ConfigError, RunConfig, from_dict, load_config, to_dict

TINY = {
    "data": {"n_train": 2, "n_test": 2, "scene": {"n_points": 256, "object_count": [1, 2]},
             "shapes": {"n_train": 8, "n_test": 8, "n_points": 64}},
    "model": {"object": {"M_o": 4, "patch_size": 8, "C_o": 16, "n_o": 1, "m_o": 1, "heads": 2, "embed_hidden": 16},
              "scene": {"M_s": 8, "patch_size": 8, "C_s": 16, "n_s": 1, "m_s": 1, "q": 2, "heads": 2,
                        "embed_hidden": 16}},
    "pretrain": {"blocks": {"K_o": 2, "N_o": 32}, "epochs": 2},
    "finetune": {"epochs": 1, "batch_size": 4},
}


# -- formats -----------------------------------------------------------

def test_points_roundtrip_text_and_binary(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    io.write_points(tmp_path / "a.txt", pts)
    np.testing.assert_array_equal(io.read_points(tmp_path / "a.txt"), pts)
    io.write_points(tmp_path / "a.pmd", pts)
    back = io.read_points(tmp_path / "a.pmd")
    np.testing.assert_allclose(back, pts, rtol=1e-7, atol=1e-7)
    assert (tmp_path / "a.pmd").read_bytes()[:4] == b"PMD1"
    assert len((tmp_path / "a.pmd").read_bytes()) == 8 + 12 * 50


def test_bad_point_files(tmp_path):
    (tmp_path / "x.pmd").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(io.FormatError):
        io.read_points(tmp_path / "x.pmd")
    (tmp_path / "y.txt").write_text("1 2\n")
    with pytest.raises(io.FormatError):
        io.read_points(tmp_path / "y.txt")
    io.write_points(tmp_path / "z.pmd", np.zeros((3, 3)))
    with pytest.raises(io.ChecksumError):
        io.read_points(tmp_path / "z.pmd", expected_sha256="0" * 64)
    with pytest.raises(FileNotFoundError, match="missing.pmd"):
        io.read_points(tmp_path / "missing.pmd")


def test_checkpoint_bytes_roundtrip(tmp_path):
    tensors = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones(4, dtype=np.float32), "i": np.arange(3)}
    io.save_checkpoint(tmp_path / "c1", tensors, {"step": 3, "config": {"x": [1, 2]}})
    t, h = io.load_checkpoint(tmp_path / "c1")
    io.save_checkpoint(tmp_path / "c2", t, h)
    assert (tmp_path / "c1").read_bytes() == (tmp_path / "c2").read_bytes()
    assert t["a"].dtype == np.float32 and h["step"] == 3


def test_checkpoint_future_version_rejected(tmp_path):
    blob = bytearray(io.encode_checkpoint({"w": np.zeros(2)}, {}))
    blob[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(io.FormatError, match="version 99"):
        io.decode_checkpoint(bytes(blob))


# -- config ------------------------------------------------------------

def test_config_defaults_and_unknown_keys(tmp_path):
    cfg = RunConfig()
    assert from_dict(to_dict(cfg)) == cfg
    with pytest.raises(ConfigError, match="pretrain.toggles: .*bogus|bogus"):
        from_dict({"pretrain": {"toggles": {"bogus": 1}}})
    with pytest.raises(ConfigError):
        from_dict({"model": {"object": {"C_o": 30, "heads": 4}}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY))
    assert load_config(p).pretrain.blocks.K_o == 2


# -- command line ------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root, cfg


def test_gen_data_manifest_and_reproducible(workspace, tmp_path):
    root, cfg = workspace
    man = json.loads((root / "data" / "manifest.json").read_text())
    assert len(man["scenes"]["train"]) == 2 and len(man["scenes"]["test"]) == 2
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    again = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert again["files"] == man["files"]


def test_corrupt_data_detected(workspace, tmp_path, capsys):
    import shutil
    root, cfg = workspace
    shutil.copytree(root / "data", tmp_path / "d")
    victim = sorted((tmp_path / "d" / "scenes").glob("train_*"))[0]
    blob = bytearray(victim.read_bytes())
    blob[20] ^= 0xFF
    victim.write_bytes(bytes(blob))
    assert main(["pretrain", "--config", str(cfg), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 2
    assert "checksum" in capsys.readouterr().err


def test_missing_data_names_path(tmp_path, capsys):
    assert main(["pretrain", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2
    assert "manifest.json" in capsys.readouterr().err


def test_pretrain_resume_and_eval(workspace, tmp_path):
    root, cfg = workspace
    data = str(root / "data")
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["pretrain", "--config", str(cfg), "--data", data, "--out", str(full)]) == 0
    lines = (full / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 4

    one = json.loads(cfg.read_text())
    one["pretrain"]["max_steps"] = 2
    short = tmp_path / "short.json"
    short.write_text(json.dumps(one))
    assert main(["pretrain", "--config", str(short), "--data", data, "--out", str(part)]) == 0
    assert main(["pretrain", "--config", str(cfg), "--data", data, "--out", str(part), "--resume"]) == 0
    resumed = [json.loads(x) for x in (part / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in resumed] == [0, 1, 2, 3]
    ref = [json.loads(x) for x in lines]
    assert [r["loss_total"] for r in resumed] == [r["loss_total"] for r in ref]
    t_full, h_full = io.load_checkpoint(full / "checkpoint.pmck")
    t_part, h_part = io.load_checkpoint(part / "checkpoint.pmck")
    assert h_full["step"] == h_part["step"] == 4
    assert t_full.keys() == t_part.keys()
    assert all(np.array_equal(t_full[k], t_part[k]) for k in t_full)

    ck = str(full / "checkpoint.pmck")
    for i in range(2):
        assert main(["eval", "--config", str(cfg), "--data", data, "--checkpoint", ck, "--task", "scene_localize",
                     "--out", str(tmp_path / f"r{i}")]) == 0
    assert (tmp_path / "r0" / "report_scene_localize.json").read_bytes() == \
        (tmp_path / "r1" / "report_scene_localize.json").read_bytes()

    assert main(["finetune", "--config", str(cfg), "--data", data, "--checkpoint", ck, "--task", "object_classify",
                 "--out", str(tmp_path / "ft")]) == 0
    rep = json.loads((tmp_path / "ft" / "report.json").read_text())
    assert 0.0 <= rep["metrics"]["accuracy"] <= 1.0

    wide = json.loads(cfg.read_text())
    wide["model"]["object"]["C_o"] = 32
    wcfg = tmp_path / "wide.json"
    wcfg.write_text(json.dumps(wide))
    assert main(["eval", "--config", str(wcfg), "--data", data, "--checkpoint", ck, "--task", "object_classify"]) == 2


def test_grad_check_fault_injection(monkeypatch, capsys):
    good = BACKWARD["gelu"]
    monkeypatch.setitem(BACKWARD, "gelu", lambda node, g: tuple(2.0 * x for x in good(node, g)))
    assert main(["grad-check", "--seeds", "1", "--no-end-to-end"]) == 1
    out = capsys.readouterr().out
    assert "gelu" in out and "FAIL" in out


def test_grad_check_primitives_pass(capsys):
    assert main(["grad-check", "--seeds", "2", "--no-end-to-end"]) == 0
    assert "max rel err" in capsys.readouterr().out
