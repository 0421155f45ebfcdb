import json
import subprocess
import sys

import pytest

from fdkdnn.cli import main
from fdkdnn.data.dataset import Split, load_manifest

from .test_data import FAKE_TEMPLATE, write_clip


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> build-manifest -> split -> embed -> train on a small corpus."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "img"), "--per-class", "12", "--seed", "7"]) == 0
    assert main(["build-manifest", "--data", str(d / "img"), "--manifest", str(d / "ds.jsonl")]) == 0
    assert main(["split", "--manifest", str(d / "ds.jsonl"), "--ratio", "0.75"]) == 0
    assert main(["embed", "--manifest", str(d / "ds.jsonl"), "--cache", str(d / "emb.fdke")]) == 0
    assert main(["train", "--manifest", str(d / "ds.jsonl"), "--cache", str(d / "emb.fdke"),
                 "--out", str(d / "out"), "--steps", "200", "--batch", "12", "--eval-every", "50"]) == 0
    return d


class TestUsage:
    def test_missing_flag(self, capsys, tmp_path):
        code, out, err = run(capsys, "build-manifest", "--data", tmp_path)
        assert code == 2
        assert "usage:" in err and "--manifest" in err
        assert list(tmp_path.iterdir()) == []

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 2

    def test_pipeline_error_exit_1(self, capsys, tmp_path):
        (tmp_path / "empty").mkdir()
        code, _, err = run(capsys, "build-manifest", "--data", tmp_path / "empty", "--manifest", tmp_path / "m.jsonl")
        assert code == 1 and "error" in err
        assert not (tmp_path / "m.jsonl").exists()

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "fdkdnn.cli", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.strip()


class TestSplit:
    def test_repeatable_bytes(self, capsys, pipeline, tmp_path):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            code, out, _ = run(capsys, "split", "--manifest", pipeline / "ds.jsonl",
                               "--out", tmp_path / name, "--ratio", "0.8", "--seed", "42")
            assert code == 0 and "validation" in out
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_config_file_and_override(self, capsys, pipeline, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# split settings\nratio=0.5\nmanifest={pipeline / 'ds.jsonl'}\nseed=3\n")
        assert run(capsys, "split", "--config", cfg, "--out", tmp_path / "half.jsonl")[0] == 0
        half = load_manifest(tmp_path / "half.jsonl")
        assert len(half.in_split(Split.TRAIN)) == 24 and half.seed == 3
        assert run(capsys, "split", "--config", cfg, "--ratio", "0.75", "--out", tmp_path / "q.jsonl")[0] == 0
        assert len(load_manifest(tmp_path / "q.jsonl").in_split(Split.TRAIN)) == 36

    def test_bad_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense=1\n")
        assert run(capsys, "split", "--config", cfg)[0] == 2


class TestPipeline:
    def test_outputs(self, pipeline):
        out = pipeline / "out"
        for name in ("classifier.json", "classifier.fdkw", "classifier.classes.txt", "history.jsonl"):
            assert (out / name).is_file()
        assert (out / "classifier.classes.txt").read_text().split() == [
            "damaged_kernel", "leaf", "normal_kernel", "spike"]

    def test_embed_rerun_reuses(self, capsys, pipeline):
        code, out, _ = run(capsys, "embed", "--manifest", pipeline / "ds.jsonl", "--cache", pipeline / "emb.fdke")
        assert code == 0 and "computed: 0" in out

    def test_evaluate_text_and_structured(self, capsys, pipeline, tmp_path):
        args = ["evaluate", "--model", pipeline / "out" / "classifier.json",
                "--manifest", pipeline / "ds.jsonl", "--cache", pipeline / "emb.fdke"]
        code, out, _ = run(capsys, *args, "--out", tmp_path / "r.json")
        assert code == 0 and "micro accuracy" in out
        code, out, _ = run(capsys, *args, "--format", "structured")
        doc = json.loads(out)
        assert doc["total"] == 12 and doc["split"] == "VALIDATION"
        assert (tmp_path / "r.json").read_text() == out

    def test_evaluate_external_test_set(self, capsys, pipeline, tmp_path):
        ext = tmp_path / "ext.jsonl"
        assert run(capsys, "build-manifest", "--data", pipeline / "img", "--manifest", ext, "--external")[0] == 0
        assert run(capsys, "embed", "--manifest", ext, "--cache", tmp_path / "ext.fdke")[0] == 0
        code, out, _ = run(capsys, "evaluate", "--model", pipeline / "out" / "classifier.json", "--manifest", ext,
                           "--cache", tmp_path / "ext.fdke", "--split", "test", "--format", "structured")
        assert code == 0 and json.loads(out)["total"] == 48

    def test_evaluate_missing_split(self, capsys, pipeline):
        code, _, err = run(capsys, "evaluate", "--model", pipeline / "out" / "classifier.json", "--manifest",
                           pipeline / "ds.jsonl", "--cache", pipeline / "emb.fdke", "--split", "test")
        assert code == 1 and "TEST" in err

    def test_predict(self, capsys, pipeline):
        image = sorted((pipeline / "img" / "spike").iterdir())[0]
        code, out, _ = run(capsys, "predict", "--model", pipeline / "out" / "classifier.json",
                           "--data", image, "--top-k", "2")
        lines = out.splitlines()
        assert code == 0 and len(lines) == 2
        assert all(line.endswith("%") for line in lines)

    def test_verbose_prints_config(self, capsys, pipeline):
        code, _, err = run(capsys, "split", "-v", "--manifest", pipeline / "ds.jsonl", "--out", pipeline / "v.jsonl")
        assert code == 0 and "ratio=0.8" in err


def test_extract_frames(capsys, tmp_path):
    clip = write_clip(tmp_path / "clip.bin", 5)
    code, out, _ = run(capsys, "extract-frames", "--data", clip, "--out", tmp_path / "frames",
                       "--decoder-cmd", FAKE_TEMPLATE)
    assert code == 0 and "5 frames" in out
    assert len(list((tmp_path / "frames").glob("frame_*.ppm"))) == 5
