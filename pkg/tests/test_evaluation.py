import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mouthnet.corruptions import KINDS
from mouthnet.evaluation import (
    OCCLUSION_FILL,
    RawVideo,
    VideoScore,
    accuracy,
    occlusion_map,
    protocol_plain,
    protocol_robustness,
    roc_auc,
    score_video,
)
from mouthnet.model import Model, ModelConfig
from mouthnet.rng import Rng
from mouthnet.tensorops import sigmoid
from mouthnet.training import ForgerySample, PIXEL_MEAN, PIXEL_STD


def auc_pair_oracle(scores, labels):
    """Exhaustive Mann-Whitney count with the half-weight tie term."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_perfect_separation():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == pytest.approx(1.0)


def test_auc_all_ties_is_half():
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]).auc == pytest.approx(0.5)


def test_auc_known_value():
    assert roc_auc([0.4, 0.8, 0.6, 0.9], [0, 0, 1, 1]).auc == pytest.approx(0.75)


def test_auc_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pair_oracle_on_200_random_sets():
    rng = Rng(1234)
    for rep in range(200):
        n = 2 + rng.integer(49)
        scores = np.round(rng.substream("s", rep).uniform((n,)).astype(np.float64), 1)
        labels = (rng.substream("l", rep).uniform((n,)) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        got = roc_auc(scores, labels).auc
        expect = auc_pair_oracle(scores.tolist(), labels.tolist())
        assert abs(got - expect) <= 1e-12


def test_roc_curve_endpoints_and_monotone():
    curve = roc_auc([0.1, 0.5, 0.5, 0.9], [0, 1, 0, 1])
    assert curve.points[0] == (0.0, 0.0)
    assert curve.points[-1] == (1.0, 1.0)
    fprs = [p[0] for p in curve.points]
    tprs = [p[1] for p in curve.points]
    assert fprs == sorted(fprs) and tprs == sorted(tprs)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=50, deadline=None)
def test_auc_invariant_under_monotone_transform(seed):
    rng = Rng(seed)
    n = 4 + rng.integer(20)
    scores = rng.uniform((n,)).astype(np.float64)
    labels = (rng.substream("l").uniform((n,)) < 0.5).astype(int)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    base = roc_auc(scores, labels).auc
    for transform in (lambda s: 3.0 * s + 1.0, np.exp, lambda s: s ** 3):
        assert roc_auc(transform(scores), labels).auc == pytest.approx(base, abs=1e-12)


def test_accuracy_cases():
    assert accuracy([0.9, 0.1], [1, 0]) == 1.0
    assert accuracy([0.1, 0.9], [1, 0]) == 0.0
    assert accuracy([0.6, 0.6, 0.1], [1, 0, 0]) == pytest.approx(2 / 3)


def test_video_score_mean_and_validation():
    vs = VideoScore("v", 1, [0.2, 0.8])
    assert vs.video_score == pytest.approx(0.5)
    with pytest.raises(ValueError, match="clips"):
        VideoScore("v", 1, [])


def tiny_model():
    return Model(ModelConfig(base_width=4, branch_width=4, lipread_classes=2), seed=0)


def test_score_video_uses_all_windows_and_is_order_invariant():
    model = tiny_model()
    windows = Rng(1).normal((4, 25, 96, 96, 1), 128.0, 20.0).clip(0, 255)
    sample = ForgerySample("v", windows, 1)
    scored = score_video(model, sample)
    assert len(scored.clip_scores) == 4
    permuted = ForgerySample("v", windows[::-1].copy(), 1)
    assert score_video(model, permuted).video_score == pytest.approx(scored.video_score,
                                                                     abs=1e-7)


def test_score_video_single_clip_logit_zero_is_half():
    model = tiny_model()
    model.forgery_head.weight[...] = 0.0
    model.forgery_head.bias[...] = 0.0
    windows = Rng(2).normal((1, 25, 96, 96, 1), 128.0, 20.0).clip(0, 255)
    scored = score_video(model, ForgerySample("v", windows, 0))
    assert scored.video_score == pytest.approx(0.5, abs=1e-7)


# ---------------------------------------------------------------------------
# occlusion

class PlantedDetector:
    """Reads exactly one pixel of the normalized clip; counts evaluations."""

    def __init__(self, y=44, x=44):
        self.y, self.x = y, x
        self.forwards = 0

    def __call__(self, clips):
        self.forwards += len(clips)
        vals = clips[:, :, self.y, self.x, 0].mean(axis=1)
        return sigmoid(4.0 * vals)


def test_occlusion_forward_count_and_range():
    clip = Rng(3).normal((3, 88, 88, 1), 1.0, 0.5)
    probe = PlantedDetector()
    omap = occlusion_map(probe, clip, label=1, block=40)
    assert omap.forwards == (88 - 40 + 1) ** 2 == 2401
    assert probe.forwards == 2401
    assert omap.heatmap.shape == (88, 88)
    assert omap.heatmap.min() >= 0.0 and omap.heatmap.max() <= 1.0


def test_occlusion_minimum_near_planted_pixel():
    clip = np.full((3, 88, 88, 1), 2.0, dtype=np.float32)  # bright pixel => high prob
    probe = PlantedDetector(44, 44)
    omap = occlusion_map(probe, clip, label=1, block=40)
    my, mx = np.unravel_index(np.argmin(omap.heatmap), omap.heatmap.shape)
    assert max(abs(my - 44), abs(mx - 44)) <= 39


def test_occlusion_constant_model_gives_zero_map():
    clip = Rng(4).normal((2, 88, 88, 1))
    omap = occlusion_map(lambda clips: np.full(len(clips), 0.7), clip, label=1, block=40)
    assert np.array_equal(omap.heatmap, np.zeros((88, 88), dtype=np.float32))


def test_occlusion_block_too_large():
    with pytest.raises(ValueError, match="block"):
        occlusion_map(lambda c: np.zeros(len(c)), np.zeros((2, 32, 32, 1)), 1, block=40)


def test_occlusion_fill_is_normalized_mid_gray():
    assert OCCLUSION_FILL == pytest.approx((0.5 - PIXEL_MEAN) / PIXEL_STD)


# ---------------------------------------------------------------------------
# protocols

def test_protocol_plain_report_shape():
    model = tiny_model()
    rng = Rng(5)
    samples = [
        ForgerySample(f"v{i}", rng.substream(i).normal((2, 25, 96, 96, 1), 128, 20)
                      .clip(0, 255), i % 2)
        for i in range(6)
    ]
    report = protocol_plain(model, samples)
    assert report["numVideos"] == 6
    assert len(report["videos"]) == 6
    assert all(len(v["clipScores"]) == 2 for v in report["videos"])
    assert 0.0 <= report["auc"] <= 1.0
    v0 = report["videos"][0]
    assert v0["videoScore"] == pytest.approx(np.mean(v0["clipScores"]), abs=1e-7)


def _raw_videos(n=4, frames=8):
    rng = Rng(6)
    out = []
    for i in range(n):
        frames_arr = np.clip(np.round(
            rng.substream(i).normal((frames, 140, 140, 3), 128, 30)), 0, 255).astype(np.uint8)
        lm = np.zeros((frames, 68, 2))
        lm[:, 36:42] = [46, 50]
        lm[:, 42:48] = [94, 50]
        lm[:, 28] = [70, 58]
        lm[:, 30] = [70, 70]
        lm[:, 33] = [70, 80]
        lm[:, 48:68] = [70, 96]
        out.append(RawVideo(f"v{i}", frames_arr, lm, i % 2))
    return out


def test_protocol_robustness_grid_shape_and_exact_means():
    model = Model(ModelConfig(base_width=4, branch_width=4, lipread_classes=2,
                              clip_len=8), seed=0)
    videos = _raw_videos(4, frames=8)
    report = protocol_robustness(model, videos, seed=3, clip_len=8)
    assert set(report["kinds"]) == set(KINDS)
    for kind in KINDS:
        cells = report["kinds"][kind]["severities"]
        assert sorted(cells) == ["1", "2", "3", "4", "5"]
        assert report["kinds"][kind]["mean"] == sum(cells.values()) / 5
    assert report["average"] == sum(report["kinds"][k]["mean"] for k in KINDS) / len(KINDS)
    assert "clean" in report


def test_protocol_robustness_identity_equals_clean():
    model = Model(ModelConfig(base_width=4, branch_width=4, lipread_classes=2,
                              clip_len=8), seed=0)
    videos = _raw_videos(4, frames=8)
    identity = lambda frames, spec: frames
    report = protocol_robustness(model, videos, seed=3, clip_len=8, apply_fn=identity)
    for kind in KINDS:
        for value in report["kinds"][kind]["severities"].values():
            assert value == report["clean"]
