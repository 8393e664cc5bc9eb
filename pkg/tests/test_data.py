import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhrppg import data as D
from mhrppg.baselines import green_method, roi_mean_trace
from mhrppg.dsp import psd
from mhrppg.errors import DataError, InvalidArgument
from mhrppg.skinlabel import fill_polygon


def test_raw_round_trip_lossless(tmp_path):
    a = np.random.default_rng(0).uniform(size=(3, 4, 5, 6))
    D.save_raw(tmp_path / "c.raw", a)
    np.testing.assert_array_equal(D.load_raw(tmp_path / "c.raw"), a)
    D.save_raw(tmp_path / "m.raw", a[0])
    assert D.load_raw(tmp_path / "m.raw").shape == (1, 4, 5, 6)


def test_raw_header_layout(tmp_path):
    D.save_raw(tmp_path / "c.raw", np.zeros((3, 2, 4, 5)))
    blob = (tmp_path / "c.raw").read_bytes()
    assert blob[:8] == b"RPPGRAW1"
    assert np.frombuffer(blob[8:24], "<u4").tolist() == [3, 2, 4, 5]
    assert len(blob) == 24 + 8 * 3 * 2 * 4 * 5


def test_raw_corruption_detected(tmp_path):
    p = tmp_path / "c.raw"
    D.save_raw(p, np.zeros((3, 2, 4, 4)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(DataError, match="expected"):
        D.load_raw(p)
    p.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(DataError, match="not a raw"):
        D.load_raw(p)


def test_ppm_round_trip_quantised(tmp_path):
    a = np.random.default_rng(1).uniform(size=(3, 3, 5, 7))
    D.write_frames(tmp_path / "f", a)
    back = D.read_frames(tmp_path / "f")
    assert back.shape == a.shape
    assert np.max(np.abs(back - a)) <= 0.5 / 255 + 1e-12


def test_mask_pgm_values(tmp_path):
    m = np.zeros((2, 4, 4), np.uint8)
    m[:, 1:3, 1:3] = 1
    D.write_mask_sequence(tmp_path / "m", m)
    from PIL import Image
    img = np.asarray(Image.open(tmp_path / "m" / "mask_00000.pgm"))
    assert set(np.unique(img)) == {0, 255}


def test_white_frame_loads_as_ones(tmp_path):
    D.write_frames(tmp_path / "f", np.ones((3, 1, 2, 2)))
    D.write_manifest(tmp_path / "clip.txt", "f", 30.0, crop=(0, 0, 2, 2))
    clip, ppg, hr = D.load_clip(tmp_path / "clip.txt", size=(2, 2))
    np.testing.assert_array_equal(clip.frames, np.ones((3, 1, 2, 2)))
    assert ppg is None and hr is None


def test_crop_ignores_outside_pixels(tmp_path):
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(3, 2, 8, 8))
    b = a.copy()
    b[:, :, :, 4:] = rng.uniform(size=(3, 2, 8, 4))
    for name, arr in (("a.raw", a), ("b.raw", b)):
        D.save_raw(tmp_path / name, arr)
    outs = [D.load_clip(D.ClipManifest(tmp_path / n, 10.0, crop=(0, 0, 4, 8)), size=(6, 6))[0]
            for n in ("a.raw", "b.raw")]
    np.testing.assert_array_equal(outs[0].frames, outs[1].frames)


def test_crop_outside_frame(tmp_path):
    D.save_raw(tmp_path / "a.raw", np.zeros((3, 1, 8, 8)))
    with pytest.raises(DataError, match="crop box"):
        D.load_clip(D.ClipManifest(tmp_path / "a.raw", 10.0, crop=(4, 0, 8, 8)))


def test_missing_frames_and_too_many_requested(tmp_path):
    with pytest.raises(DataError, match="missing"):
        D.load_clip(D.ClipManifest(tmp_path / "nope.raw", 30.0))
    D.save_raw(tmp_path / "a.raw", np.zeros((3, 4, 8, 8)))
    with pytest.raises(DataError, match="only 4"):
        D.load_clip(D.ClipManifest(tmp_path / "a.raw", 30.0), size=None, T=5)


def test_resize_identity_and_constant():
    a = np.random.default_rng(3).uniform(size=(2, 5, 5))
    np.testing.assert_array_equal(D.resize_bilinear(a, (5, 5)), a)
    np.testing.assert_allclose(D.resize_bilinear(np.full((7, 9), 0.3), (4, 13)), 0.3)


def test_transform_points_matches_resize_of_delta():
    img = np.zeros((20, 20))
    img[6, 10] = 1.0
    pts = D.transform_points([[10.0, 6.0]], None, (20, 20), (40, 40))
    out = D.resize_bilinear(img, (40, 40))
    cy, cx = np.unravel_index(np.argmax(out), out.shape)
    assert abs(pts[0, 0] - cx) <= 0.5 and abs(pts[0, 1] - cy) <= 0.5


def test_ppg_resampling_keeps_tone_bin():
    t = np.arange(0, 15.0, 1e-3)
    v = np.sin(2 * np.pi * 1.2 * t)
    r = D.resample_ppg(t, v, 30.0, 450)
    assert len(r) == 450
    spec = psd(r, 30.0)
    assert spec.freqs[np.argmax(spec.power)] == pytest.approx(1.2)


def test_ppg_short_coverage_rejected():
    t = np.arange(0, 5.0, 1e-3)
    with pytest.raises(DataError, match="PPG covers"):
        D.resample_ppg(t, np.zeros_like(t), 30.0, 450)


def test_manifest_round_trip(tmp_path):
    D.write_manifest(tmp_path / "m.txt", "frames.raw", 25.0, crop=(1, 2, 30, 40),
                     landmarks="lm.csv", ppg="ppg.csv", hr=71.5, clip_id="s01", skin="s.raw")
    m = D.read_manifest(tmp_path / "m.txt")
    assert m.frames == tmp_path / "frames.raw" and m.fps == 25.0
    assert m.crop == (1, 2, 30, 40) and m.hr == 71.5 and m.clip_id == "s01"
    assert m.landmarks == tmp_path / "lm.csv" and m.ppg == tmp_path / "ppg.csv"
    assert m.skin == tmp_path / "s.raw"


def test_manifest_errors(tmp_path):
    (tmp_path / "bad.txt").write_text("fps = 30\n")
    with pytest.raises(DataError, match="frames"):
        D.read_manifest(tmp_path / "bad.txt")
    (tmp_path / "neg.txt").write_text("frames = a.raw\nfps = 0\n")
    with pytest.raises(DataError, match="fps"):
        D.read_manifest(tmp_path / "neg.txt")


def test_load_clip_aligns_ppg(tmp_path):
    syn = D.generate_synthetic(D.SynthSpec(T=60, H=16, W=16), seed=0)
    D.save_raw(tmp_path / "f.raw", syn.clip.frames)
    t = np.arange(0, 2.0, 1 / 250)
    D.write_ppg_csv(tmp_path / "ppg.csv", t, D.pulse_waveform(t, 72.0))
    D.write_manifest(tmp_path / "m.txt", "f.raw", 30.0, ppg="ppg.csv", hr=72.0)
    clip, ppg, hr = D.load_clip(tmp_path / "m.txt", size=(16, 16), T=30, start=15)
    assert clip.T == len(ppg) == 30
    expect = D.pulse_waveform(0.5 + np.arange(30) / 30.0, 72.0)
    np.testing.assert_allclose(ppg.values, expect, atol=0.02)
    assert hr == 72.0


def test_csv_helpers(tmp_path):
    D.write_signal_csv(tmp_path / "s.csv", [0.5, -1.25, 2.0], 30.0)
    np.testing.assert_array_equal(D.read_signal_csv(tmp_path / "s.csv"), [0.5, -1.25, 2.0])
    pts = np.array([[1.5, 2.0], [3.0, 4.25], [5.0, 6.0]])
    D.write_landmarks_csv(tmp_path / "l.csv", pts)
    np.testing.assert_array_equal(D.read_landmarks_csv(tmp_path / "l.csv"), pts)
    D.write_landmarks_csv(tmp_path / "few.csv", pts[:2])
    with pytest.raises(DataError):
        D.read_landmarks_csv(tmp_path / "few.csv")


def test_segment_examples():
    assert D.segment_starts(600, 450, 150) == [0, 150]
    assert D.segment_starts(600, 150, 150) == [0, 150, 300, 450]
    with pytest.raises(InvalidArgument):
        D.segment_starts(100, 150, 10)


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 20), st.integers(1, 8), st.integers(1, 6))
def test_segment_contents_match_index_arithmetic(total, T, stride):
    T = min(T, total)
    frames = np.arange(3 * total * 2 * 2, dtype=float).reshape(3, total, 2, 2)
    segs = D.segment_clips(D.VideoClip(frames, 30.0), T, stride)
    assert len(segs) == (total - T) // stride + 1
    for k, seg in enumerate(segs):
        for j in range(T):
            np.testing.assert_array_equal(seg.frames[:, j], frames[:, k * stride + j])


def test_synthetic_zero_amplitude_is_static():
    syn = D.generate_synthetic(D.SynthSpec(T=20, H=32, W=32, pulse_amplitude=(0, 0, 0)))
    np.testing.assert_array_equal(syn.clip.frames, syn.clip.frames[:, :1].repeat(20, axis=1))
    np.testing.assert_array_equal(syn.ppg.values, 0.0)


def test_synthetic_green_recovers_hr():
    syn = D.generate_synthetic(D.SynthSpec(hr=72, fps=30, T=450), seed=0)
    tr = roi_mean_trace(syn.clip.frames, fill_polygon(syn.landmarks[0], 64, 64))
    assert green_method(tr, 30.0)[1] == 72.0
    spec = psd(tr[:, 1], 30.0)
    band = spec.band_mask()
    assert spec.freqs[band][np.argmax(spec.power[band])] == pytest.approx(1.2)


def test_synthetic_landmarks_drift_exactly():
    syn = D.generate_synthetic(D.SynthSpec(T=10, drift=(1.0, 0.0)), seed=0)
    assert syn.landmarks.shape == (10, 29, 2)
    np.testing.assert_allclose(np.diff(syn.landmarks[:, :, 0], axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.diff(syn.landmarks[:, :, 1], axis=0), 0.0, atol=1e-12)


def test_synthetic_deterministic_and_in_range():
    a = D.generate_synthetic(D.SynthSpec(T=8, noise_std=0.01), seed=5)
    b = D.generate_synthetic(D.SynthSpec(T=8, noise_std=0.01), seed=5)
    np.testing.assert_array_equal(a.clip.frames, b.clip.frames)
    assert a.clip.frames.min() >= 0 and a.clip.frames.max() <= 1


def test_synth_spec_validation():
    with pytest.raises(InvalidArgument):
        D.SynthSpec(hr=30)
    with pytest.raises(InvalidArgument):
        D.SynthSpec(pulse_amplitude=(0.5, 0.0, 0.0))
