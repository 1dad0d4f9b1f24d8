import base64
import contextlib
import io
import json

import pytest
from fastapi.testclient import TestClient

from lmcodec import service
from lmcodec.cli import main
from lmcodec.config import load_config
from lmcodec.errors import ConfigError


def run(*args):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in args])
    return code, out.getvalue(), err.getvalue()


def ok(*args):
    code, out, err = run(*args)
    assert code == 0, err
    return out


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Synthetic corpus plus one checkpoint per training stage, made through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    (d / "run.yaml").write_text("training:\n  validate_every: 2\n")
    base = ["--config", d / "run.yaml", "--seed", "1"]
    manifest = json.loads(ok(*base, "make-synthetic-corpus", d / "corpus", "--texts", "3"))["manifest"]
    m = ["--manifest", manifest]
    ok(*base, "pretrain-ttr", "--out", d / "ttr.pt", "--steps", "3", *m)
    ok(*base, "train-stage1", "--out", d / "s1.pt", "--steps", "3", "--log", d / "s1.jsonl", *m)
    ok(*base, "train-stage2", "--init", d / "s1.pt", "--out", d / "s2.pt", "--steps", "2", *m)
    ok(*base, "train-stage3", "--variant", "ttr", "--init", d / "s2.pt", "--ttr", d / "ttr.pt", "--out", d / "s3.pt", "--steps", "1", *m)
    return {"dir": d, "base": base, "manifest": manifest}


class TestCliFlow:
    def test_checkpoints_exist(self, work):
        d = work["dir"]
        for name in ("ttr.pt", "s1.pt", "s2.pt", "s3.pt"):
            assert (d / name).exists()
        assert len((d / "s1.jsonl").read_text().splitlines()) == 3

    def test_encode_decode(self, work):
        d = work["dir"]
        wav = sorted((d / "corpus").rglob("*.wav"))[0]
        enc = json.loads(ok("encode", wav, d / "x.lmlc", "--checkpoint", d / "s3.pt"))
        assert enc["bytes"] == (d / "x.lmlc").stat().st_size and enc["semantic_codes"] > 0
        dec = json.loads(ok("decode", d / "x.lmlc", d / "x.wav", "--checkpoint", d / "s3.pt"))
        assert (d / "x.wav").exists() and dec["sample_rate"] == 8000

    def test_evaluate(self, work):
        d = work["dir"]
        out = ok(*work["base"], "evaluate", "--codec", f"TTR={d / 's3.pt'}", "--manifest", work["manifest"], "--json-out", d / "r.json")
        report = json.loads((d / "r.json").read_text())
        assert [r["variant"] for r in report["rows"]] == ["TTR", "reference"]
        assert report["rows"][-1]["wer"]["exemplar"] == 0.0
        assert "Bitrate (bps)" in out and "WER exemplar (%)" in out

    def test_compare_spectrogram(self, work):
        d = work["dir"]
        wav = sorted((d / "corpus").rglob("*.wav"))[0]
        info = json.loads(ok("compare-spectrogram", wav, d / "spec.png", "--checkpoint", d / "s2.pt"))
        assert (d / "spec.png").exists() and info["frames"] > 0

    def test_import_alignments(self, tmp_path):
        tg = (
            'File type = "ooTextFile"\nObject class = "TextGrid"\nxmin = 0\nxmax = 1\ntiers? <exists>\nsize = 1\nitem []:\n'
            '    item [1]:\n        class = "IntervalTier"\n        name = "words"\n        xmin = 0\n        xmax = 1\n'
            '        intervals: size = 1\n        intervals [1]:\n            xmin = 0\n            xmax = 1\n            text = "hi"\n'
        )
        (tmp_path / "a.TextGrid").write_text(tg)
        info = json.loads(ok("import-alignments", tmp_path / "a.TextGrid", tmp_path / "a.tsv"))
        assert info["intervals"] == 1 and (tmp_path / "a.tsv").read_text().startswith("hi\t")


class TestCliErrors:
    def test_stage_prerequisite_is_structured(self, work):
        d = work["dir"]
        code, _, err = run("train-stage3", "--variant", "asr", "--init", d / "s1.pt", "--out", d / "bad.pt", "--manifest", work["manifest"])
        assert code == 1
        payload = json.loads(err)
        assert payload["type"] == "StageError" and "stage-2" in payload["message"]

    def test_bad_bitstream(self, work, tmp_path):
        (tmp_path / "junk.lmlc").write_bytes(b"RIFF0000")
        code, _, err = run("decode", tmp_path / "junk.lmlc", tmp_path / "o.wav", "--checkpoint", work["dir"] / "s2.pt")
        assert code == 1 and json.loads(err)["error"] == "bad_magic"

    def test_usage_error(self):
        code, _, err = run("encode")
        assert code == 2 and json.loads(err)["error"] == "usage"

    def test_missing_manifest(self, tmp_path):
        code, _, err = run("train-stage1", "--out", tmp_path / "x.pt")
        assert code == 1 and "manifest" in json.loads(err)["message"]

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.yaml").write_text("trainin:\n  max_steps: 3\n")
        code, _, err = run("--config", tmp_path / "c.yaml", "train-stage1", "--out", tmp_path / "x.pt")
        assert code == 1 and json.loads(err)["type"] == "ConfigError"


class TestConfig:
    def test_overrides(self, tmp_path):
        (tmp_path / "c.yaml").write_text("profile: tiny\nseed: 4\ntraining:\n  max_steps: 7\n")
        cfg = load_config(tmp_path / "c.yaml", seed=9)
        assert cfg.seed == 9 and cfg.training.max_steps == 7
        assert cfg.stage_config(1).max_steps == 7 and cfg.stage_config(1, max_steps=2).max_steps == 2

    def test_paper_segments(self):
        assert load_config(profile="paper").segment_bounds() == (30.0, 45.0)

    @pytest.mark.parametrize("body", ["- a\n", "profile: huge\n", "training:\n  max_step: 1\n"])
    def test_invalid(self, tmp_path, body):
        (tmp_path / "c.yaml").write_text(body)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml")


class TestService:
    @pytest.fixture
    def client(self, monkeypatch):
        monkeypatch.delenv("LMCODEC_CHECKPOINT", raising=False)
        return TestClient(service.app)

    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok" and body["codec_loaded"] is False and "paper" in body["profiles"]

    def test_bitrate(self, client):
        assert client.post("/bitrate", json={}).json() == {"bps": 187.5, "packed_bps": 187.5}
        assert client.post("/bitrate", json={"k_semantic": 64}).json()["bps"] == 212.5
        assert client.post("/bitrate", json={"k_semantic": 1}).status_code == 422

    def test_wer(self, client):
        body = client.post("/wer", json={"reference": "the cat sat on mat", "hypothesis": "the dog sat on mat"}).json()
        assert body == {"wer": 20.0, "substitutions": 1, "deletions": 0, "insertions": 0, "reference_words": 5}

    def test_loudness(self, client):
        import numpy as np

        x = (0.1 * np.sin(2 * np.pi * 1000 * np.arange(16000) / 16000)).tolist()
        body = client.post("/loudness", json={"samples": x, "sample_rate": 16000}).json()
        assert body["integrated_lufs"] == pytest.approx(-23.0, abs=0.1)
        assert body["gain_db"] == pytest.approx(-24.0 - body["integrated_lufs"])
        assert client.post("/loudness", json={"samples": [0.0] * 16000}).json()["integrated_lufs"] is None

    def test_encode_needs_codec(self, client):
        assert client.post("/encode", json={"wav_base64": ""}).status_code == 503

    def test_encode_decode(self, work, monkeypatch):
        monkeypatch.setenv("LMCODEC_CHECKPOINT", str(work["dir"] / "s3.pt"))
        client = TestClient(service.app)
        assert client.get("/health").json()["codec_loaded"] is True
        wav = sorted((work["dir"] / "corpus").rglob("*.wav"))[0]
        enc = client.post("/encode", json={"wav_base64": base64.b64encode(wav.read_bytes()).decode()})
        assert enc.status_code == 200 and enc.json()["bitrate_bps"] == pytest.approx(112.5)
        dec = client.post("/decode", json={"bitstream_base64": enc.json()["bitstream_base64"]})
        assert dec.status_code == 200 and base64.b64decode(dec.json()["wav_base64"])[:4] == b"RIFF"
        bad = client.post("/decode", json={"bitstream_base64": base64.b64encode(b"nope").decode()})
        assert bad.status_code == 422 and bad.json()["error"] == "bad_magic"
        assert client.post("/decode", json={"bitstream_base64": "***"}).status_code == 422
