import json
import subprocess
import sys

import numpy as np
import pytest

from sumd.cli import main
from sumd.data import save_image

TINY = ["--set", "model.stage.c_base=8", "--set", "model.stage.c_up=8", "--set", "model.stage.mu_iters=2",
        "--set", "train.batch=2", "--set", "train.patch=16", "--set", "train.log_every=1",
        "--set", "train.val_every=2"]


@pytest.fixture
def image_dir(tmp_path, textured_images):
    d = tmp_path / "imgs"
    d.mkdir()
    for i, img in enumerate(textured_images):
        save_image(d / f"im{i}.png", img)
    return d


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_check_suites(capsys):
    assert main(["check", "metrics"]) == 0
    assert _json(capsys)["ok"]
    assert main(["check", "nmf"]) == 0


def test_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    assert _json(capsys)["max_rel_err"] < 1e-3


def test_nmf_trajectory_csv(tmp_path):
    V = np.random.default_rng(0).random((5, 7))
    np.save(tmp_path / "v.npy", V)
    assert main(["nmf", "--matrix", str(tmp_path / "v.npy"), "--rank", "2", "--iters", "10",
                 "--out", str(tmp_path / "e.csv")]) == 0
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "iteration,error" and len(rows) == 12
    errors = [float(r.split(",")[1]) for r in rows[1:]]
    assert all(b <= a + 1e-8 for a, b in zip(errors, errors[1:]))


def test_nmf_bad_inputs(tmp_path, capsys):
    np.savetxt(tmp_path / "v.csv", np.ones((3, 3)), delimiter=",")
    assert main(["nmf", "--matrix", str(tmp_path / "v.csv"), "--rank", "9"]) == 2
    assert "rank 9" in capsys.readouterr().err
    assert main(["nmf", "--matrix", str(tmp_path / "missing.txt"), "--rank", "1"]) == 2


def test_train_without_dataset_is_a_config_error(tmp_path, capsys):
    assert main(["train", "--output-dir", str(tmp_path)]) == 2
    assert "data.train_dir" in capsys.readouterr().err


def test_train_with_bad_override(tmp_path, capsys):
    assert main(["train", "--preset", "desk", "--set", "model.stage.body=vit"]) == 2
    assert "body" in capsys.readouterr().err


def test_train_denoise_eval_noisegen(tmp_path, image_dir, capsys, monkeypatch):
    monkeypatch.setenv("SUMD_OUTPUT_DIR", str(tmp_path / "run"))
    code = main(["train", "--set", f"data.train_dir={image_dir}", "--iters", "4", *TINY])
    assert code == 0
    summary = _json(capsys)
    run = tmp_path / "run"
    assert summary["iterations"] == 4 and summary["output_dir"] == str(run)
    resolved = json.loads((run / "config.json").read_text())
    assert resolved["train"]["iters"] == 4 and resolved["model"]["stage"]["c_base"] == 8
    metrics = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert [m["iter"] for m in metrics] == [1, 2, 3, 4]

    bench = tmp_path / "bench"
    assert main(["noisegen", "--clean-dir", str(image_dir), "--out-dir", str(bench),
                 "--case", "case2", "--seed", "3"]) == 0
    prov = json.loads((bench / "provenance.json").read_text())
    assert prov["case"]["mask_id"] == "case2" and prov["seed"] == 3 and prov["files"] == 6
    assert len(set(prov["mask_checksums"].values())) == 1
    capsys.readouterr()

    assert main(["eval", "--checkpoint", str(run / "checkpoint"), "--data", str(bench)]) == 0
    res = _json(capsys)
    assert res["provenance"] == prov and res["images"] == 6 and np.isfinite(res["psnr"])

    noisy = sorted((bench / "noisy").iterdir())[:2]
    out = tmp_path / "out"
    assert main(["denoise", "--checkpoint", str(run / "checkpoint"), "--output-dir", str(out),
                 "--reference", str(bench / "clean"), *map(str, noisy)]) == 0
    report = _json(capsys)
    assert len(report) == 2 and all("psnr" in r for r in report)
    assert sorted(p.name for p in out.iterdir()) == sorted(p.name for p in noisy)

    # resume continues from the stored iteration
    assert main(["train", "--set", f"data.train_dir={image_dir}", "--iters", "6", *TINY,
                 "--resume", str(run / "checkpoint"), "--output-dir", str(tmp_path / "run2")]) == 0
    assert _json(capsys)["iterations"] == 6


def test_corrupt_checkpoint_is_a_runtime_error(tmp_path, capsys, image_dir):
    (tmp_path / "ck").mkdir()
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps({"format": "sumd-checkpoint",
                                                               "payload_bytes": 10, "tensors": []}))
    (tmp_path / "ck" / "tensors.bin").write_bytes(b"1234")
    assert main(["eval", "--checkpoint", str(tmp_path / "ck"), "--data", str(image_dir)]) == 1
    assert "manifest mismatch" in capsys.readouterr().err


def test_module_entry_point_exit_code():
    proc = subprocess.run([sys.executable, "-m", "sumd.cli", "train", "--preset", "desk",
                           "--set", "train.iters=-1"], capture_output=True, text=True)
    assert proc.returncode == 2 and "iters" in proc.stderr
