import re
from pathlib import Path

import numpy as np
import pytest

from instacodec.bitstream import read_bitstream, save_weights
from instacodec.cli import main
from instacodec.metrics import append_rd_point
from instacodec.models import PRESETS, build_model
from instacodec.video import read_frame_dir


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture()
def weights(tmp_path):
    path = tmp_path / "untrained.wts"
    save_weights(build_model(PRESETS["ssf-lite"], 0), path)
    return path


@pytest.fixture()
def clip16(tmp_path, capsys):
    path = tmp_path / "clip.y4m"
    assert run(capsys, "make-synthetic", "--kind", "blobs", "--frames", 16, "--seed", 100, "--out", path)[0] == 0
    return path


def _cfg(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_make_synthetic_formats(tmp_path, capsys):
    code, out, _ = run(capsys, "make-synthetic", "--kind", "checker", "--frames", 3, "--width", 40, "--height", 24, "--out", tmp_path / "d")
    assert code == 0 and "3 frames 40x24" in out
    assert read_frame_dir(tmp_path / "d").frames.shape == (3, 3, 24, 40)


class TestTrainGlobal:
    def test_missing_dir(self, tmp_path, capsys):
        code, _, err = run(capsys, "train-global", "--clips", tmp_path / "nope", "--out", tmp_path / "w.wts")
        assert code == 2 and "not found" in err

    def test_empty_dir(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code, _, err = run(capsys, "train-global", "--clips", tmp_path / "empty", "--out", tmp_path / "w.wts")
        assert code == 2 and "no .y4m" in err

    def test_deterministic_weights(self, tmp_path, capsys):
        clips = tmp_path / "clips"
        clips.mkdir()
        for i in range(2):
            run(capsys, "make-synthetic", "--frames", 3, "--seed", i, "--out", clips / f"c{i}.y4m")
        cfg = _cfg(tmp_path, "train_steps = 3\nseed = 5\n")
        for name in ("a.wts", "b.wts"):
            assert run(capsys, "train-global", "--clips", clips, "--out", tmp_path / name, "--config", cfg)[0] == 0
        assert (tmp_path / "a.wts").read_bytes() == (tmp_path / "b.wts").read_bytes()

    def test_loss_decreases(self, tmp_path, capsys):
        clips = tmp_path / "clips"
        clips.mkdir()
        kinds = ["blobs", "stripes", "checker"]
        for i in range(8):
            run(capsys, "make-synthetic", "--kind", kinds[i % 3], "--frames", 16, "--seed", i, "--out", clips / f"c{i}.y4m")
        code, out, _ = run(capsys, "train-global", "--clips", clips, "--out", tmp_path / "g.wts", "--steps", 500, "--log-every", 0)
        assert code == 0
        first, final = map(float, re.search(r"first ([\d.]+)\s+final \(mean of last \d+\) ([\d.]+)", out).groups())
        assert final < first


class TestEncodeDecode:
    def test_global_mode(self, tmp_path, capsys, weights, clip16):
        out_path = tmp_path / "g.insa"
        code, out, _ = run(capsys, "encode", "--weights", weights, "--input", clip16, "--out", out_path, "--mode", "global")
        assert code == 0 and "bpp" in out and "model_updates" in out
        stream = read_bitstream(out_path.read_bytes())
        assert stream.update is None and stream.header.num_frames == 16
        assert not Path(str(out_path) + ".csv").exists()

    def test_missing_weights(self, tmp_path, capsys, clip16):
        code, _, err = run(capsys, "encode", "--weights", tmp_path / "none.wts", "--input", clip16, "--out", tmp_path / "x.insa")
        assert code == 2 and "weights" in err

    def test_decode_matches_encoder_and_detects_corruption(self, tmp_path, capsys, weights):
        clip = tmp_path / "c.y4m"
        run(capsys, "make-synthetic", "--frames", 4, "--width", 70, "--height", 40, "--out", clip)
        cfg = _cfg(tmp_path, "max_steps = 2\ncheckpoint_every = 1\ngop_size = 2\n")
        s = tmp_path / "s.insa"
        code, out, _ = run(capsys, "encode", "--weights", weights, "--input", clip, "--out", s, "--config", cfg, "--recon", tmp_path / "enc")
        assert code == 0
        csv_path = Path(re.search(r"finetune report (\S+)", out).group(1))
        assert csv_path.read_text().startswith("step,rd_loss,r_theta_bits,total_loss,seconds")
        code, out, _ = run(capsys, "decode", "--weights", weights, "--input", s, "--out", tmp_path / "dec")
        assert code == 0 and "update decode" in out
        enc = sorted((tmp_path / "enc").iterdir())
        dec = sorted((tmp_path / "dec").iterdir())
        assert len(dec) == read_bitstream(s.read_bytes()).header.num_frames == 4
        assert [p.read_bytes() for p in enc] == [p.read_bytes() for p in dec]
        code, out, _ = run(capsys, "eval", "--original", tmp_path / "enc", "--decoded", tmp_path / "dec")
        assert code == 0 and "psnr inf" in out

        raw = bytearray(s.read_bytes())
        raw[len(raw) // 2] ^= 0x10
        bad = tmp_path / "bad.insa"
        bad.write_bytes(bytes(raw))
        code, _, err = run(capsys, "decode", "--weights", weights, "--input", bad, "--out", tmp_path / "x")
        assert code == 3 and "CRC" in err
        bad.write_bytes(b"RIFF" + bytes(raw[4:]))
        code, _, err = run(capsys, "decode", "--weights", weights, "--input", bad, "--out", tmp_path / "x")
        assert code == 3 and "not an INSA stream" in err

    def test_corrupt_weights(self, tmp_path, capsys, weights, clip16):
        raw = bytearray(weights.read_bytes())
        raw[50] ^= 1
        weights.write_bytes(bytes(raw))
        code, _, err = run(capsys, "encode", "--weights", weights, "--input", clip16, "--out", tmp_path / "x.insa", "--mode", "global")
        assert code == 3 and "CRC" in err

    def test_unknown_config_key(self, tmp_path, capsys, weights, clip16):
        cfg = _cfg(tmp_path, "speed = 11\n")
        code, _, err = run(capsys, "encode", "--weights", weights, "--input", clip16, "--out", tmp_path / "x.insa", "--config", cfg)
        assert code == 2 and "unknown key" in err


def test_insta_loss_not_above_global(tmp_path, capsys, global_model, clip16):
    weights = tmp_path / "global.wts"
    save_weights(global_model, weights)
    cfg = _cfg(tmp_path, "max_steps = 200\ncheckpoint_every = 25\n")
    losses = {}
    for mode in ("global", "insta"):
        path = tmp_path / f"{mode}.insa"
        code, out, _ = run(capsys, "encode", "--weights", weights, "--input", clip16, "--out", path, "--mode", mode, "--config", cfg)
        assert code == 0
        losses[mode] = float(re.search(r"loss ([\d.]+)", out).group(1))
    assert read_bitstream((tmp_path / "insta.insa").read_bytes()).update is not None
    assert losses["insta"] <= losses["global"]


class TestEval:
    def test_subsample_and_gop(self, tmp_path, capsys, weights, clip16):
        rd = tmp_path / "rd.csv"
        code, out, _ = run(capsys, "eval", "--original", clip16, "--weights", weights, "--subsample", 4, "--gop", "inf", "--csv", rd, "--label", "g")
        assert code == 0
        assert "frames 4 (subsample 4)" in out and "I-frames 1" in out
        assert rd.read_text().splitlines()[1].startswith("g,")
        code, out, _ = run(capsys, "eval", "--original", clip16, "--weights", weights, "--subsample", 4, "--gop", 2)
        assert "I-frames 2" in out

    def test_k1_equals_plain(self, tmp_path, capsys, weights):
        clip = tmp_path / "c.y4m"
        run(capsys, "make-synthetic", "--frames", 3, "--out", clip)
        _, plain, _ = run(capsys, "eval", "--original", clip, "--weights", weights)
        _, k1, _ = run(capsys, "eval", "--original", clip, "--weights", weights, "--subsample", 1)
        assert plain == k1

    def test_stream_and_mismatch(self, tmp_path, capsys, weights):
        clip = tmp_path / "c.y4m"
        run(capsys, "make-synthetic", "--frames", 4, "--out", clip)
        s = tmp_path / "s.insa"
        run(capsys, "encode", "--weights", weights, "--input", clip, "--out", s, "--mode", "global")
        code, out, _ = run(capsys, "eval", "--original", clip, "--stream", s, "--weights", weights)
        assert code == 0 and "bpp" in out
        code, _, err = run(capsys, "eval", "--original", clip, "--stream", s, "--weights", weights, "--subsample", 2)
        assert code == 4 and "does not match" in err
        code, _, err = run(capsys, "eval", "--original", clip)
        assert code == 2


class TestBdrateAndPlot:
    @pytest.fixture()
    def curves(self, tmp_path):
        ref, dbl, far = tmp_path / "ref.csv", tmp_path / "dbl.csv", tmp_path / "far.csv"
        for r, p in zip([0.05, 0.1, 0.2, 0.4, 0.8], [28.0, 30.5, 33.0, 35.2, 37.1]):
            append_rd_point(ref, "ref", r, p)
            append_rd_point(dbl, "dbl", 2 * r, p)
            append_rd_point(far, "far", r, p + 30)
        return ref, dbl, far

    def test_values(self, capsys, curves):
        ref, dbl, far = curves
        code, out, _ = run(capsys, "bdrate", ref, ref)
        assert code == 0 and float(re.search(r"(-?[\d.]+)%", out).group(1)) == 0.0
        code, out, _ = run(capsys, "bdrate", ref, dbl)
        assert code == 0 and abs(float(re.search(r"(-?[\d.]+)%", out).group(1)) - 100.0) < 0.5
        code, _, err = run(capsys, "bdrate", ref, far)
        assert code == 4 and "do not overlap" in err

    def test_plots_are_deterministic_svg(self, tmp_path, capsys, curves, weights):
        ref, dbl, _ = curves
        for name in ("a.svg", "b.svg"):
            assert run(capsys, "plot", "rd", ref, dbl, "--out", tmp_path / name)[0] == 0
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
        assert b"<svg" in (tmp_path / "a.svg").read_bytes()
        clip = tmp_path / "c.y4m"
        run(capsys, "make-synthetic", "--frames", 2, "--out", clip)
        s = tmp_path / "s.insa"
        run(capsys, "encode", "--weights", weights, "--input", clip, "--out", s, "--mode", "global")
        assert run(capsys, "plot", "rates", s, "--out", tmp_path / "r.svg")[0] == 0
        assert (tmp_path / "r.svg").stat().st_size > 0
