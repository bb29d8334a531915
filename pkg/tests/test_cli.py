import json
import subprocess
import sys

import pytest

from zslt.cli import main

TINY = ["--set", "model.d=8", "--set", "model.d_g=4", "--set", "train.epochs=2", "--set", "train.batch_size=8",
        "--set", "synth.a=6", "--set", "synth.grid_h=2", "--set", "synth.grid_w=2", "--set", "synth.c0=8",
        "--set", "synth.d_w=6", "--set", "synth.n_seen=4", "--set", "synth.n_unseen=2",
        "--set", "synth.images_per_class=6"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *TINY, "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    for name in ("train_log.jsonl", "final.ckpt", "best.ckpt", "final_metrics.json", "config.txt"):
        assert (trained / name).exists()
    metrics = json.loads((trained / "final_metrics.json").read_text())
    assert set(metrics) == {"czsl_acc", "gzsl_u", "gzsl_s", "gzsl_h"}


def test_eval_twice_identical(trained, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(trained / "final.ckpt"), "--out", str(tmp_path / "a.json")]) == 0
    assert main(["eval", "--checkpoint", str(trained / "final.ckpt"), "--out", str(tmp_path / "b.json"),
                 "--per-class"]) == 0
    a, b = json.loads((tmp_path / "a.json").read_text()), json.loads((tmp_path / "b.json").read_text())
    assert {k: b[k] for k in a} == a and "per_class" in b
    final = json.loads((trained / "final_metrics.json").read_text())
    assert a == final


def test_eval_alpha_override(trained, tmp_path):
    from zslt.metrics import harmonic_mean
    ck = str(trained / "final.ckpt")
    reports = []
    for alpha in ("0.0", "1.0"):
        path = tmp_path / f"a{alpha}.json"
        assert main(["eval", "--checkpoint", ck, "--out", str(path), "--set", f"predict.alpha={alpha}"]) == 0
        reports.append(json.loads(path.read_text()))
    for r in reports:
        assert r["gzsl_h"] == harmonic_mean(r["gzsl_u"], r["gzsl_s"])
    assert reports[0] != reports[1]


def test_export_attention(trained, tmp_path):
    out = tmp_path / "attn.jsonl"
    assert main(["export-attn", "--checkpoint", str(trained / "final.ckpt"), "--ids", "img00000", "img00007",
                 "--top-k", "5", "--out", str(out)]) == 0
    recs = [json.loads(s) for s in out.read_text().splitlines()]
    assert len(recs) == 10 and {r["image_id"] for r in recs} == {"img00000", "img00007"}
    assert main(["export-attn", "--checkpoint", str(trained / "final.ckpt"), "--ids", "nope",
                 "--out", str(out)]) == 3


def test_gensynth_deterministic_and_trainable_from_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gensynth", *TINY, "--out", str(a)]) == 0
    assert main(["gensynth", *TINY, "--out", str(b)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files and all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    assert main(["train", "--set", "model.d=8", "--set", "model.d_g=4", "--set", "train.epochs=1",
                 "--set", "data.source=files", "--set", f"data.root={a}", "--out", str(tmp_path / "run")]) == 0


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "avt.enc" in out and "vat.dec" in out and "max relative error" in out
    assert main(["gradcheck", "--tol", "1e-30"]) == 4


def test_error_exit_codes(tmp_path):
    assert main(["train", "--set", "model.nope=1", "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(bad)]) == 3
    assert main(["train", *TINY, "--set", "optim.lr=1e30", "--set", "train.epochs=20",
                 "--out", str(tmp_path / "nan")]) == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "zslt", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "gensynth", "gradcheck", "export-attn"):
        assert cmd in proc.stdout
