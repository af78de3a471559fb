import csv
import json

import numpy as np
import pytest

from prue import experiment as ex
from prue.checkpoint import load_checkpoint
from prue.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, parse_sparsity
from prue.data import write_cifar10_binary, write_idx

from conftest import tiny_config


def _write(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = _write(d / "cfg.json", tiny_config(train={"epochs": 5, "batchsize": 16, "schedule": []}))
    assert main(["train", "--config", cfg, "--out", str(d / "out"), "--seed", "1"]) == EXIT_OK
    teacher = d / "out" / "checkpoints" / "teacher.big.a0.seed1.prue"
    return d, cfg, teacher


def test_train_writes_one_row_per_epoch(workdir):
    d, _, teacher = workdir
    assert teacher.exists()
    rec = ex.RunRecord.read(d / "out" / "records" / "teacher.big.a0.seed1.jsonl")
    assert [r["epoch"] for r in rec.rows] == [0, 1, 2, 3, 4]
    assert {"loss", "accuracy", "lr", "val_accuracy"} <= rec.rows[0].keys()
    assert rec.summary["teacher_delta"] >= 0


def test_train_vanilla_and_smoothing_change_identity(workdir, capsys):
    d, cfg, _ = workdir
    code, out, _ = _run(capsys, "train", "--config", cfg, "--out", str(d / "o2"), "--role", "student-vanilla")
    assert code == EXIT_OK and json.loads(out)["run_id"] == "student.vanilla.seed0"
    code, out, _ = _run(capsys, "train", "--config", cfg, "--out", str(d / "o2"), "--smoothing", "0.2")
    res = json.loads(out)
    assert res["run_id"] == "teacher.big.a0.2.seed0"
    assert res["config_hash"] != ex.config_hash(ex.load_config(cfg))


def test_bad_config_exit_2_names_key(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.json", tiny_config(train={"lr": -1}))
    code, _, err = _run(capsys, "train", "--config", cfg, "--out", str(tmp_path))
    assert code == EXIT_CONFIG and "$.train.lr" in err


def test_unknown_flag_and_missing_config(tmp_path, capsys):
    assert _run(capsys, "train", "--bogus")[0] == EXIT_CONFIG
    assert _run(capsys, "train", "--config", str(tmp_path / "none.json"))[0] == EXIT_IO


def test_corrupted_checkpoint_exit_3(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    broken = tmp_path / "broken.prue"
    broken.write_bytes(teacher.read_bytes()[:-10])
    code, _, err = _run(capsys, "eval", "--config", cfg, str(broken))
    assert code == EXIT_IO and "expects" in err
    code, _, err = _run(capsys, "eval", "--config", cfg, str(teacher), "--arch", "cnn-l")
    assert code == EXIT_IO


def _idx_config(tmp_path, images, labels):
    write_idx(tmp_path / "img.idx", images)
    write_idx(tmp_path / "lab.idx", labels)
    src = {"kind": "idx", "images": str(tmp_path / "img.idx"), "labels": str(tmp_path / "lab.idx"), "num_classes": 3}
    return _write(tmp_path / "idx.json", tiny_config(task={"source": src}, train={"epochs": 1, "schedule": []}))


def test_corrupted_idx_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    cfg = _idx_config(tmp_path, rng.integers(0, 256, (12, 4, 4), dtype=np.uint8), np.arange(12, dtype=np.uint8) % 3)
    raw = (tmp_path / "img.idx").read_bytes()
    (tmp_path / "img.idx").write_bytes(raw[:-5])
    code, _, err = _run(capsys, "train", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == EXIT_IO and "img.idx" in err
    bad = tmp_path / "bad"
    bad.mkdir()
    cfg = _idx_config(bad, rng.integers(0, 256, (12, 4, 4), dtype=np.uint8), np.full(12, 7, dtype=np.uint8))
    code, _, err = _run(capsys, "train", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == EXIT_IO and "byte offset 8" in err


def test_corrupted_cifar_exit_3(tmp_path, capsys):
    path = tmp_path / "batch.bin"
    write_cifar10_binary(path, np.zeros((4, 3072), np.uint8), np.array([0, 1, 2, 0]))
    path.write_bytes(path.read_bytes()[:-100])
    src = {"kind": "cifar10", "paths": [str(path)], "num_classes": 3}
    cfg = _write(tmp_path / "c.json", tiny_config(task={"source": src}))
    code, _, err = _run(capsys, "train", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == EXIT_IO and "truncated record" in err


def test_parse_sparsity():
    assert parse_sparsity("90%") == 0.9
    assert parse_sparsity("0.5") == 0.5
    assert parse_sparsity("0%") == 0.0


def test_prune_zero_percent_keeps_everything(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    code, out, _ = _run(capsys, "prune", "--config", cfg, "--out", str(tmp_path), "--sparsity", "0%",
                        "--finetune-epochs", "1", str(teacher))
    assert code == EXIT_OK
    ck = load_checkpoint(json.loads(out)["checkpoint"])
    assert np.all(ck.model.flat_masks() == 1)
    assert len(ck.scores["prue"]) == ck.model.num_prunable


def test_prune_rejects_full_sparsity(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    for s in ("100%", "1.0", "-5%", "abc"):
        assert _run(capsys, "prune", "--config", cfg, "--out", str(tmp_path), "--sparsity", s, str(teacher))[0] == EXIT_CONFIG


def test_random_pruning_is_reproducible(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    masks = []
    for d in ("a", "b"):
        code, out, _ = _run(capsys, "prune", "--config", cfg, "--out", str(tmp_path / d), "--method", "random",
                            "--sparsity", "50%", "--seed", "3", "--finetune-epochs", "0", str(teacher))
        assert code == EXIT_OK
        ck = load_checkpoint(json.loads(out)["checkpoint"])
        masks.append(ck.model.flat_masks())
        assert (ck.model.flat_masks() == 0).sum() == ck.model.num_prunable // 2
    np.testing.assert_array_equal(*masks)


def test_uncertainty_modes_agree_and_record(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    rec = tmp_path / "u.jsonl"
    code, out, _ = _run(capsys, "uncertainty", "--config", cfg, str(teacher), "--record", str(rec))
    direct = json.loads(out)
    code2, out2, _ = _run(capsys, "uncertainty", "--config", cfg, str(teacher), "--mode", "two-pass", "--batchsize", "7")
    assert code == code2 == EXIT_OK
    assert abs(direct["delta"] - json.loads(out2)["delta"]) <= 1e-6
    line = json.loads(rec.read_text())
    assert line["type"] == "uncertainty" and line["run_id"] == "teacher.big.a0.seed1"
    assert direct["class_counts"] == [40, 40, 40]


def test_uncertainty_of_fully_masked_model_is_zero(workdir, tmp_path, capsys):
    from prue.checkpoint import save_checkpoint

    _, cfg, teacher = workdir
    model = load_checkpoint(teacher).model
    model.set_masks([np.zeros(p.weight.shape) for p in model.prunable()])
    path = tmp_path / "zero.prue"
    save_checkpoint(path, model)
    code, out, _ = _run(capsys, "uncertainty", "--config", cfg, str(path))
    assert code == EXIT_OK and json.loads(out)["delta"] == 0.0


def test_shape_mismatch_exit_2(workdir, tmp_path, capsys):
    _, _, teacher = workdir
    src = {"kind": "synthetic", "num_classes": 3, "per_class": 10, "dim": 5, "seed": 1}
    other = _write(tmp_path / "o.json", tiny_config(task={"source": src}))
    code, _, err = _run(capsys, "uncertainty", "--config", other, str(teacher))
    assert code == EXIT_CONFIG and "input" in err


def test_dump_predictions(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    outs = []
    for name in ("a.csv", "b.csv"):
        code, _, _ = _run(capsys, "dump-predictions", "--config", cfg, str(teacher), "--classes", "0,2", "-o", str(tmp_path / name))
        assert code == EXIT_OK
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert len(rows) == 80
    assert {r["label"] for r in rows} == {"0", "2"}
    for r in rows:
        assert abs(sum(float(r[f"p{k}"]) for k in range(3)) - 1.0) <= 1e-9
    assert _run(capsys, "dump-predictions", "--config", cfg, str(teacher), "--classes", "0,9", "-o", str(tmp_path / "c.csv"))[0] == EXIT_CONFIG


def test_distill_and_eval(workdir, tmp_path, capsys):
    _, cfg, teacher = workdir
    code, out, _ = _run(capsys, "distill", "--config", cfg, "--out", str(tmp_path), "--tau", "2", "--lambda", "0.5", str(teacher))
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["summary"]["tau"] == 2.0 and res["summary"]["lambda"] == 0.5
    code, out, _ = _run(capsys, "eval", "--config", cfg, res["checkpoint"])
    assert code == EXIT_OK and 0.0 <= json.loads(out)["accuracy"] <= 1.0


def test_output_env_var(workdir, tmp_path, monkeypatch, capsys):
    _, cfg, _ = workdir
    monkeypatch.setenv(ex.OUTPUT_ENV, str(tmp_path / "env"))
    assert _run(capsys, "train", "--config", cfg, "--role", "student-vanilla")[0] == EXIT_OK
    assert (tmp_path / "env" / "records" / "student.vanilla.seed0.jsonl").exists()


def test_sweep_prints_grid(tmp_path, capsys):
    cfg = _write(tmp_path / "s.json", tiny_config(train={"epochs": 1, "schedule": []}))
    code, out, _ = _run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--seeds", "0,1")
    assert code == EXIT_OK
    assert "student accuracy, teacher big" in out and "vanilla" in out
    assert (tmp_path / "o" / "records" / "prune.big.prue.s0.5.seed1.jsonl").exists()
