import csv
import json

import numpy as np
import pytest

from wheezenmf import cli
from wheezenmf.dataset import (
    MixtureSpec,
    load_wav,
    mix_at_snr,
    save_wav,
    synth_ambient_noise,
    synth_respiratory,
)
from wheezenmf.evaluation import BENCH_HEADER, EXPERIMENT_HEADER
from wheezenmf.exceptions import NumericalError
from wheezenmf.spectral import AudioBuffer

SR = 8000


def write_pair(tmp_path, label, seed=0, snr=0.0):
    src = synth_respiratory(label, 3.0, SR, seed=seed)
    rec = mix_at_snr(MixtureSpec(src, synth_ambient_noise("babble", 3.0, SR, seed=seed + 1), snr, label=label))
    paths = tmp_path / f"{label}_int.wav", tmp_path / f"{label}_ext.wav"
    save_wav(rec.internal, paths[0])
    save_wav(rec.external, paths[1])
    return paths


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestConfig:
    def test_print_config(self, capsys):
        code, out, _ = run(capsys, "--print-config")
        assert code == 0
        keys = dict(line.split("=", 1) for line in out.splitlines())
        assert keys["n_source_bases"] == "8" and keys["threads"] == "1"

    def test_file_and_flags(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed=4\nbeta_ortho=0.5\n")
        code, out, _ = run(capsys, "detect", "--config", cfg, "--seed", 9, "--set", "max_iter=12", "--print-config")
        assert code == 0
        keys = dict(line.split("=", 1) for line in out.splitlines())
        assert (keys["seed"], keys["beta_ortho"], keys["max_iter"]) == ("9", "0.5", "12")

    def test_bad_config_value(self, capsys):
        code, _, err = run(capsys, "--set", "n_source_bases=3", "--print-config")
        assert code == 1 and "even" in err

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 1

    def test_bad_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["detect", "--frobnicate"])
        assert exc.value.code == 1


class TestDetect:
    def test_wheeze_pair(self, tmp_path, capsys):
        internal, external = write_pair(tmp_path, "wheeze")
        code, out, _ = run(capsys, "detect", "--internal", internal, "--external", external, "--out-dir", tmp_path / "o")
        assert code == 0 and json.loads(out)["omega"] == 1
        saved = json.loads((tmp_path / "o" / "detection.json").read_text())
        assert saved["omega"] == 1 and len(saved["basis_gini"]) == 8

    def test_normal_pair(self, tmp_path, capsys):
        internal, external = write_pair(tmp_path, "normal", seed=2)
        code, out, _ = run(capsys, "detect", "--internal", internal, "--external", external, "--out-dir", tmp_path)
        assert code == 0 and json.loads(out)["omega"] == 0

    def test_stereo(self, tmp_path, capsys):
        internal, external = write_pair(tmp_path, "wheeze")
        a, b = load_wav(internal).samples, load_wav(external).samples
        frames = np.column_stack([a, b]).astype("<f4").tobytes()
        import struct
        fmt = struct.pack("<HHIIHH", 3, 2, SR, SR * 8, 8, 32)
        body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(frames)) + frames
        stereo = tmp_path / "st.wav"
        stereo.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        code, out, _ = run(capsys, "detect", "--stereo", stereo, "--out-dir", tmp_path)
        assert code == 0 and json.loads(out)["omega"] == 1
        assert run(capsys, "detect", "--stereo", stereo, "--internal", internal)[0] == 1

    def test_missing_external(self, tmp_path, capsys):
        internal, _ = write_pair(tmp_path, "wheeze")
        missing = tmp_path / "nowhere.wav"
        code, _, err = run(capsys, "detect", "--internal", internal, "--external", missing)
        assert code == 2 and "nowhere.wav" in err

    def test_missing_inputs(self, capsys):
        assert run(capsys, "detect")[0] == 1

    def test_not_a_wav(self, tmp_path, capsys):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"hello world, not audio at all")
        code, _, err = run(capsys, "detect", "--internal", bad, "--external", bad)
        assert code == 2 and "bad.wav" in err

    def test_numerical_failure(self, tmp_path, capsys, monkeypatch):
        internal, external = write_pair(tmp_path, "wheeze")

        def boom(*a, **k):
            raise NumericalError("non-finite cost", 3)

        monkeypatch.setattr(cli, "analyze", boom)
        code, _, err = run(capsys, "detect", "--internal", internal, "--external", external)
        assert code == 3 and "iteration 3" in err

    def test_same_seed_same_output(self, tmp_path, capsys):
        internal, external = write_pair(tmp_path, "wheeze")
        outs = []
        for d in ("a", "b"):
            run(capsys, "detect", "--internal", internal, "--external", external, "--seed", 5, "--out-dir", tmp_path / d)
            outs.append((tmp_path / d / "detection.json").read_text())
        assert outs[0] == outs[1]


class TestDenoise:
    def test_outputs(self, tmp_path, capsys):
        internal, external = write_pair(tmp_path, "wheeze")
        code, out, _ = run(capsys, "denoise", "--internal", internal, "--external", external, "--out-dir", tmp_path / "d")
        assert code == 0
        paths = json.loads(out)
        s, v = load_wav(paths["source"]), load_wav(paths["noise"])
        x = load_wav(internal).samples
        assert len(s) == len(v) == len(x)
        # float32 files: the identity holds to single precision
        assert np.linalg.norm(s.samples + v.samples - x) / np.linalg.norm(x) <= 1e-4

    def test_explicit_paths(self, tmp_path, capsys):
        internal, external = write_pair(tmp_path, "normal")
        code, _, _ = run(capsys, "denoise", "--internal", internal, "--external", external,
                         "--out-source", tmp_path / "s.wav", "--out-noise", tmp_path / "n.wav")
        assert code == 0 and (tmp_path / "s.wav").exists() and (tmp_path / "n.wav").exists()


class TestMixCorpusSweepBench:
    def test_mix_equal_power(self, tmp_path, capsys, caplog):
        x = AudioBuffer(np.tile([0.5, -0.5], 400), SR)
        save_wav(x, tmp_path / "s.wav")
        save_wav(x, tmp_path / "n.wav")
        with caplog.at_level("INFO", logger="wheezenmf"):
            code, out, _ = run(capsys, "mix", "--source", tmp_path / "s.wav", "--noise", tmp_path / "n.wav",
                               "--snr", 0, "--out-dir", tmp_path / "m")
        assert code == 0 and json.loads(out)["gain"] == pytest.approx(1.0)
        assert "noise gain 1" in caplog.text
        assert load_wav(tmp_path / "m" / "external.wav").samples == pytest.approx(x.samples)

    def test_corpus_then_sweep(self, tmp_path, capsys):
        code, out, _ = run(capsys, "corpus", "--n-wheeze", 2, "--n-normal", 2, "--duration", 2,
                           "--out-dir", tmp_path / "c")
        manifest = json.loads(out)["manifest"]
        assert code == 0
        code, out, _ = run(capsys, "sweep", "--manifest", manifest, "--snr", "0,10", "--out-dir", tmp_path / "s")
        assert code == 0 and len(out.splitlines()) == 2
        rows = list(csv.reader((tmp_path / "s" / "sweep.csv").open()))
        assert tuple(rows[0]) == EXPERIMENT_HEADER
        # two noise kinds (round robin over two items per class) plus a mean row, per SNR
        assert len(rows) == 1 + 2 * 3
        assert (tmp_path / "s" / "sweep.json").exists()

    def test_bench(self, tmp_path, capsys):
        code, _, _ = run(capsys, "bench", "--durations", 60, "--thread-counts", "1,2", "--repeats", 1,
                         "--set", "max_iter=2", "--out-dir", tmp_path)
        assert code == 0
        rows = list(csv.reader((tmp_path / "bench.csv").open()))
        assert tuple(rows[0]) == BENCH_HEADER
        assert len(rows) == 1 + 2 * 5
        assert {(r[1], r[2]) for r in rows[1:]} == {("60", "1"), ("60", "2")}

    def test_bad_list(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["sweep", "--snr", "a,b"])
        assert exc.value.code == 1
