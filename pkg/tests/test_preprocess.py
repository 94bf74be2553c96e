import json

import numpy as np
import pytest

from mouthnet.preprocess import (
    DataError,
    MEAN_FACE_REF,
    ManifestEntry,
    apply_transform,
    crop_mouth,
    estimate_similarity,
    five_points,
    invert_similarity,
    load_manifest,
    make_clips,
    preprocess_video,
    save_manifest,
    smooth_landmarks,
    warp_frame,
)
from mouthnet.rng import Rng
from mouthnet.synthetic import SynthConfig, render_raw_corpus


def test_smooth_constant_track_unchanged():
    track = np.tile(np.arange(136).reshape(1, 68, 2), (30, 1, 1)).astype(float)
    assert np.allclose(smooth_landmarks(track), track)


def test_smooth_single_frame_unchanged():
    track = Rng(0).normal((1, 68, 2)).astype(np.float64)
    assert np.allclose(smooth_landmarks(track), track)


def test_smooth_impulse_response_is_one_twelfth():
    track = np.zeros((40, 68, 2))
    track[20, 0, 0] = 1.0
    smoothed = smooth_landmarks(track)
    assert smoothed[20, 0, 0] == pytest.approx(1.0 / 12.0)
    # support is exactly the 12-frame window around the impulse
    nonzero = np.nonzero(smoothed[:, 0, 0])[0]
    assert len(nonzero) == 12 and nonzero.min() == 14 and nonzero.max() == 25


def test_smooth_is_shift_equivariant_away_from_boundaries():
    track = np.zeros((60, 68, 2))
    track[25, 3, 1] = 1.0
    a = smooth_landmarks(track)[15:36, 3, 1]
    track2 = np.zeros((60, 68, 2))
    track2[30, 3, 1] = 1.0
    b = smooth_landmarks(track2)[20:41, 3, 1]
    assert np.allclose(a, b)


def _five(seed=0):
    return np.asarray(Rng(seed).normal((5, 2), 0.0, 20.0), dtype=np.float64) + 100.0


def test_similarity_identity():
    pts = _five()
    transform = estimate_similarity(pts, pts)
    assert np.allclose(transform, [[1, 0, 0], [0, 1, 0]], atol=1e-9)


def test_similarity_recovers_rotation_scale():
    src = _five(3)
    angle = np.deg2rad(30.0)
    rot = 2.0 * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    dst = src @ rot.T + np.array([7.0, -4.0])
    recovered = estimate_similarity(dst, src)
    residual = np.abs(apply_transform(recovered, dst) - src).max()
    assert residual <= 1e-6


def test_similarity_degenerate_points():
    pts = np.ones((5, 2))
    with pytest.raises(DataError, match="degenerate"):
        estimate_similarity(pts, _five())


def test_invert_similarity():
    transform = estimate_similarity(_five(1), _five(2))
    pts = _five(3)
    back = apply_transform(invert_similarity(transform), apply_transform(transform, pts))
    assert np.allclose(back, pts, atol=1e-9)


def test_warp_identity():
    img = Rng(1).normal((20, 20), 100.0, 10.0)
    out = warp_frame(img, np.array([[1.0, 0, 0], [0, 1.0, 0]]), (20, 20))
    assert np.allclose(out, img, atol=1e-4)


def test_warp_integer_translation_shifts_columns():
    img = np.asarray(Rng(2).normal((16, 16), 100.0, 10.0), dtype=np.float32)
    out = warp_frame(img, np.array([[1.0, 0, 1.0], [0, 1.0, 0]]), (16, 16))
    assert np.allclose(out[:, 1:], img[:, :-1], atol=1e-4)
    assert np.allclose(out[:, 0], 0.0)


def test_warp_constant_image_stays_constant_in_bounds():
    img = np.full((24, 24), 77.0, dtype=np.float32)
    transform = estimate_similarity(_five(4), _five(4) * 0.9)
    out = warp_frame(img, transform, (24, 24))
    interior = out[8:16, 8:16]
    assert np.allclose(interior, 77.0, atol=1e-3)


def test_crop_mouth_gray_passthrough_and_luma():
    frame = np.full((120, 120, 3), 200.0, dtype=np.float32)
    lm = np.zeros((68, 2))
    lm[48:68] = [60.0, 60.0]
    crop = crop_mouth(frame, lm)
    assert crop.shape == (96, 96)
    assert np.allclose(crop[48, 48], 200.0, atol=1e-3)
    red = np.zeros((120, 120, 3), dtype=np.float32)
    red[..., 0] = 255.0
    crop_red = crop_mouth(red, lm)
    assert crop_red[48, 48] == pytest.approx(0.299 * 255, abs=0.1)


def test_crop_window_definition():
    frame = np.arange(120 * 120, dtype=np.float32).reshape(120, 120)
    lm = np.full((68, 2), 60.0)
    crop = crop_mouth(frame, lm)
    assert np.array_equal(crop, frame[12:108, 12:108])


def test_crop_zero_pads_out_of_bounds():
    frame = np.full((100, 100), 50.0, dtype=np.float32)
    lm = np.full((68, 2), 10.0)  # window [10-48, 10+48) leaves the frame
    crop = crop_mouth(frame, lm)
    assert np.allclose(crop[:38], 0.0)
    assert np.allclose(crop[40, 40], 50.0)


def test_make_clips_counts():
    seq = np.zeros((110, 96, 96), dtype=np.float32)
    assert make_clips(seq, 25).shape == (4, 25, 96, 96, 1)
    assert make_clips(np.zeros((24, 96, 96)), 25).shape[0] == 0
    assert make_clips(np.zeros((25, 96, 96)), 25).shape[0] == 1
    assert make_clips(np.zeros((50, 96, 96)), 25, stride=5).shape[0] == 6


def test_pipeline_invariant_to_global_similarity():
    """Warping frames+landmarks by one similarity must not change the crops
    (up to interpolation error on interior pixels)."""
    video = render_raw_corpus(SynthConfig(num_videos=1, seed=77), "forgery")[0]
    frames, landmarks = video["frames"], video["landmarks"]
    base = preprocess_video(frames, landmarks)

    angle = np.deg2rad(9.0)
    rot = 1.1 * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    centre = np.array([70.0, 70.0])
    shift = centre - rot @ centre + np.array([3.0, -2.0])
    perturb = np.hstack([rot, shift[:, None]])

    warped_frames = np.stack([
        np.clip(np.round(warp_frame(f, perturb, frames.shape[1:3])), 0, 255).astype(np.uint8)
        for f in frames
    ])
    warped_lm = np.stack([apply_transform(perturb, lm) for lm in landmarks])
    redone = preprocess_video(warped_frames, warped_lm)

    interior = (slice(None), slice(12, 84), slice(12, 84))
    diff = np.abs(base[interior] - redone[interior]) / 255.0
    assert float(diff.mean()) <= 2.0 / 255.0


def test_pipeline_deterministic():
    video = render_raw_corpus(SynthConfig(num_videos=1, seed=5), "forgery")[0]
    a = preprocess_video(video["frames"], video["landmarks"])
    b = preprocess_video(video["frames"], video["landmarks"])
    assert np.array_equal(a, b)


def test_five_points_layout():
    lm = Rng(8).normal((68, 2), 100.0, 5.0).astype(np.float64)
    pts = five_points(lm)
    assert np.allclose(pts[0], lm[36:42].mean(axis=0))
    assert np.allclose(pts[1], lm[42:48].mean(axis=0))
    assert np.allclose(pts[2:], lm[[28, 30, 33]])


def test_mean_face_reference_orientation():
    assert MEAN_FACE_REF[0, 0] < MEAN_FACE_REF[1, 0]  # left eye left of right eye


def test_manifest_round_trip(tmp_path):
    entries = [
        ManifestEntry("v1", "videos/v1/frames", "videos/v1/landmarks.json", "real",
                      split="train"),
        ManifestEntry("v2", "videos/v2/frames", "videos/v2/landmarks.json", "fake",
                      method_tag="jitter", split="test", word_label=None),
    ]
    path = tmp_path / "manifest.jsonl"
    save_manifest(path, entries)
    loaded = load_manifest(path, check_paths=False)
    assert [e.video_id for e in loaded] == ["v1", "v2"]
    assert loaded[1].method_tag == "jitter"


def test_manifest_duplicate_id_rejected(tmp_path):
    path = tmp_path / "manifest.jsonl"
    row = json.dumps({"video_id": "v", "frames_path": "f", "landmarks_path": "l",
                      "label": "real"})
    path.write_text(row + "\n" + row + "\n")
    with pytest.raises(DataError, match="duplicate"):
        load_manifest(path, check_paths=False)


def test_manifest_missing_path_rejected(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(json.dumps({"video_id": "v", "frames_path": "nope",
                                "landmarks_path": "also-nope", "label": "real"}) + "\n")
    with pytest.raises(DataError, match="missing path"):
        load_manifest(path)
