import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from dronessl import io as dio
from dronessl.cli import main, run
from dronessl.geometry import cube_array
from dronessl.recording import MultichannelRecording
from dronessl.simulate import make_scene

SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "summary.schema.json").read_text())


def run_json(argv, capsys):
    outcome = run(["--json", "--threads", "1", *map(str, argv)])
    doc = json.loads(capsys.readouterr().out)
    jsonschema.validate(doc, SCHEMA)
    assert doc["exit_code"] == outcome.exit_code
    return outcome, doc


@pytest.fixture(scope="module")
def static_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "static"
    assert main(["--threads", "1", "simulate", "--task", "static", "--count", "3", "--snr", "10..20",
                 "--seed", "7", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_counts_and_determinism(self, tmp_path, capsys):
        argv = ["simulate", "--task", "static", "--count", "2", "--snr", "-20..5", "--seed", "7"]
        _, doc = run_json(argv + ["--out", tmp_path / "a"], capsys)
        run_json(argv + ["--out", tmp_path / "b"], capsys)
        assert doc["summary"]["count"] == 2 and doc["summary"]["seed"] == 7
        assert len(list((tmp_path / "a").glob("*.wav"))) == 2
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_count_zero_is_usage_error(self, tmp_path, capsys):
        assert main(["simulate", "--task", "static", "--count", "0", "--out", str(tmp_path)]) == 2
        assert "usage" in capsys.readouterr().err

    def test_bad_snr_range(self, tmp_path):
        assert main(["simulate", "--task", "static", "--count", "1", "--snr", "5..-5", "--out", str(tmp_path)]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["simulate", "--task", "static", "--count", "1", "--out", str(blocker / "sub")]) == 3


class TestLocalizeAndScore:
    def test_localize_then_score(self, static_set, tmp_path, capsys):
        sub = tmp_path / "sub.csv"
        _, doc = run_json(["localize", "--input", static_set, "--output", sub], capsys)
        assert doc["summary"]["processed"] == 3 and doc["summary"]["failed"] == []
        assert all(f["method"] == "srp_phat" and f["seconds"] > 0 for f in doc["summary"]["files"])
        _, doc = run_json(["score", "--submission", sub, "--truth", static_set / "ground_truth.csv"], capsys)
        assert doc["summary"]["total"] == doc["summary"]["max"] == 3

    def test_score_truth_against_itself(self, static_set, capsys):
        gt = static_set / "ground_truth.csv"
        _, doc = run_json(["score", "--submission", gt, "--truth", gt], capsys)
        assert doc["summary"]["rate"] == 1.0

    def test_partial_submission(self, static_set, tmp_path, capsys):
        lines = (static_set / "ground_truth.csv").read_text().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")]
        (tmp_path / "p.csv").write_text("\n".join(body[:2]) + "\n")
        _, doc = run_json(["score", "--submission", tmp_path / "p.csv", "--truth", static_set / "ground_truth.csv"],
                          capsys)
        assert doc["summary"]["total"] == 1 and doc["summary"]["max"] == 3

    def test_flight_against_static_is_schema_error(self, static_set, tmp_path, capsys):
        (tmp_path / "f.csv").write_text("recording_id,timestamp_index,azimuth_deg,elevation_deg\nx,0,1,2\n")
        out, _ = run_json(["score", "--submission", tmp_path / "f.csv", "--truth", static_set / "ground_truth.csv"],
                          capsys)
        assert out.exit_code == 5

    def test_missing_submission_is_io_error(self, static_set, tmp_path):
        assert main(["score", "--submission", str(tmp_path / "none.csv"),
                     "--truth", str(static_set / "ground_truth.csv")]) == 3

    def test_corrupt_wav_warns_and_continues(self, static_set, tmp_path, capsys):
        import shutil

        d = tmp_path / "d"
        shutil.copytree(static_set, d)
        (d / "zz_broken.wav").write_bytes(b"RIFF1234WAVE")
        out, doc = run_json(["localize", "--input", d, "--output", tmp_path / "s.csv"], capsys)
        assert out.exit_code == 0 and doc["summary"]["failed"] == ["zz_broken"] and len(doc["warnings"]) == 1
        sub = dio.read_submission(tmp_path / "s.csv")
        assert sub.records["zz_broken"] is None and sum(d is not None for d in sub.records.values()) == 3

    def test_missing_config_exit_4(self, static_set, tmp_path):
        assert main(["localize", "--input", str(static_set), "--output", str(tmp_path / "s.csv"),
                     "--config", str(tmp_path / "nope.ini")]) == 4

    def test_invalid_config_exit_4(self, static_set, tmp_path):
        (tmp_path / "c.ini").write_text("[localize]\nmethod = nope\n")
        assert main(["localize", "--input", str(static_set), "--output", str(tmp_path / "s.csv"),
                     "--config", str(tmp_path / "c.ini")]) == 4

    def test_evaluate(self, static_set, tmp_path, capsys):
        _, doc = run_json(["evaluate", "--dataset", static_set, "--output", tmp_path / "s.csv"], capsys)
        assert doc["summary"]["total"] == 3 and doc["summary"]["failed"] == []


class TestEnhance:
    def test_identity_chain_bit_identical(self, tmp_path, capsys):
        rec = MultichannelRecording(np.random.default_rng(0).uniform(-1, 1, (8, 5000)), 44100)
        dio.write_wav(rec, tmp_path / "in.wav", "pcm16")
        run_json(["enhance", "--input", tmp_path / "in.wav", "--output", tmp_path / "out.wav"], capsys)
        expected = dio.encode_wav(dio.read_wav(tmp_path / "in.wav"), "float32")
        assert (tmp_path / "out.wav").read_bytes() == expected

    def test_oracle_mwf_gain(self, tmp_path, capsys):
        sc = make_scene("static", 0, 31, -10.0, "speech", cube_array())
        dio.write_wav(sc.mixture, tmp_path / "mix.wav")
        dio.write_wav(sc.clean, tmp_path / "clean.wav")
        dio.write_wav(MultichannelRecording(sc.noise, 44100), tmp_path / "noise.wav")
        (tmp_path / "c.ini").write_text("[enhance]\nchain = mwf\nnoise = oracle\n")
        _, doc = run_json(["enhance", "--input", tmp_path / "mix.wav", "--output", tmp_path / "out.wav",
                           "--config", tmp_path / "c.ini", "--noise", tmp_path / "noise.wav",
                           "--clean", tmp_path / "clean.wav"], capsys)
        s = doc["summary"]
        assert abs(s["snr_in_db"] + 10.0) < 0.05
        assert s["snr_gain_db"] >= 6.0
        out = dio.read_wav(tmp_path / "out.wav")
        assert out.samples.shape == sc.mixture.samples.shape and out.sample_rate == 44100

    def test_highpass_removes_dc(self, tmp_path, capsys):
        t = np.arange(44100) / 44100
        x = 0.3 + 0.1 * np.sin(2 * np.pi * 1000 * t)
        dio.write_wav(MultichannelRecording(np.tile(x, (2, 1)), 44100), tmp_path / "in.wav")
        (tmp_path / "c.ini").write_text("[enhance]\nchain = highpass\nhighpass_cutoff = 100\n")
        run_json(["enhance", "--input", tmp_path / "in.wav", "--output", tmp_path / "out.wav",
                  "--config", tmp_path / "c.ini"], capsys)
        y = dio.read_wav(tmp_path / "out.wav").samples
        assert abs(y.mean()) < 0.01 * 0.3

    def test_corrupt_input_exit_5(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"RIFF\x04\x00\x00\x00WAVE")
        assert main(["enhance", "--input", str(tmp_path / "bad.wav"), "--output", str(tmp_path / "o.wav")]) == 5

    def test_clean_shape_mismatch_is_usage_error(self, tmp_path):
        dio.write_wav(MultichannelRecording(np.zeros((2, 100)), 8000), tmp_path / "a.wav")
        dio.write_wav(MultichannelRecording(np.zeros((3, 100)), 8000), tmp_path / "b.wav")
        assert main(["enhance", "--input", str(tmp_path / "a.wav"), "--output", str(tmp_path / "o.wav"),
                     "--clean", str(tmp_path / "b.wav")]) == 2


def test_usage_json_validates(capsys):
    out = run(["--json", "bogus"])
    captured = capsys.readouterr()
    assert out.exit_code == 2
    jsonschema.validate(json.loads(captured.out), SCHEMA)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dronessl", "--json", "simulate", "--task", "flight", "--count", "1",
                          "--snr", "-5..-5", "--out", str(tmp_path)], capture_output=True, text=True,
                         env={"SSL_LOG_LEVEL": "error", "PATH": ""}, timeout=300)
    assert res.returncode == 0, res.stderr
    doc = json.loads(res.stdout)
    jsonschema.validate(doc, SCHEMA)
    assert doc["summary"]["task"] == "flight"
