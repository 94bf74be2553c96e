import numpy as np
import pytest

from mouthnet.model import Model, desk_config
from mouthnet.rng import Rng
from mouthnet.training import (
    Adam,
    EarlyStopper,
    ForgerySample,
    LipreadingSample,
    TrainConfig,
    adam_step,
    augment,
    bce_loss,
    ce_loss,
    early_stop,
    finetune_forgery,
    oversample_epoch,
    pretrain_lipreading,
    split_train_val,
)


def test_bce_symmetric_point():
    loss, _ = bce_loss(0.0, 1)
    assert loss == pytest.approx(np.log(2.0), abs=1e-9)


def test_bce_saturation():
    loss, _ = bce_loss(20.0, 1)
    assert loss <= 1e-8
    loss_neg, _ = bce_loss(-20.0, 0)
    assert loss_neg <= 1e-8


def test_bce_stable_at_extremes():
    for logit in (-500.0, 500.0):
        loss, grad = bce_loss(logit, 1)
        assert np.isfinite(loss) and np.isfinite(grad)


def test_ce_uniform_logits():
    loss, _ = ce_loss(np.zeros(5, dtype=np.float32), 2)
    assert loss == pytest.approx(np.log(5.0), abs=1e-6)


def test_ce_label_out_of_range():
    with pytest.raises(ValueError, match="label"):
        ce_loss(np.zeros(3, dtype=np.float32), 3)


def test_ce_nan_rejected():
    with pytest.raises(FloatingPointError):
        ce_loss(np.array([np.nan, 0.0], dtype=np.float32), 0)


def test_adam_first_step_is_signed_lr():
    cfg = TrainConfig(learning_rate=1e-3)
    params = {"w": np.array([1.0, -1.0], dtype=np.float32)}
    grads = {"w": np.array([0.5, -0.25], dtype=np.float32)}
    state = {}
    adam_step(params, grads, state, 1, cfg)
    expect = np.array([1.0, -1.0]) - 1e-3 * np.sign([0.5, -0.25])
    assert np.allclose(params["w"], expect, atol=1e-5)


def test_adam_zero_gradient_keeps_params():
    cfg = TrainConfig()
    params = {"w": np.ones(3, dtype=np.float32)}
    state = {}
    for t in range(1, 20):
        adam_step(params, {"w": np.zeros(3, dtype=np.float32)}, state, t, cfg)
    assert np.array_equal(params["w"], np.ones(3, dtype=np.float32))


def test_adam_descends_quadratic():
    cfg = TrainConfig(learning_rate=2e-4)
    theta = {"t": np.array([1.0], dtype=np.float32)}
    opt = Adam(cfg)
    for _ in range(100):
        opt.step(theta, {"t": 2.0 * theta["t"]})
    assert abs(float(theta["t"][0])) < 1.0


def test_adam_shape_mismatch():
    cfg = TrainConfig()
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2, dtype=np.float32)},
                  {"w": np.zeros(3, dtype=np.float32)}, {}, 1, cfg)


def _forgery_set(n_real, n_fake):
    mk = lambda i, label: ForgerySample(
        f"v{label}{i}", np.zeros((1, 2, 96, 96, 1), dtype=np.float32), label)
    return [mk(i, 0) for i in range(n_real)] + [mk(i, 1) for i in range(n_fake)]


def test_oversample_balanced_input():
    order = oversample_epoch(_forgery_set(10, 10), Rng(0))
    assert len(order) == 20 and sorted(order) == list(range(20))


def test_oversample_counts_30_10():
    samples = _forgery_set(30, 10)
    order = oversample_epoch(samples, Rng(1))
    assert len(order) == 60
    labels = [samples[i].label for i in order]
    assert labels.count(0) == 30 and labels.count(1) == 30


def test_oversample_single_minority():
    samples = _forgery_set(1, 5)
    order = oversample_epoch(samples, Rng(2))
    assert len(order) == 10
    assert order.count(0) == 5  # the lone real appears 5 times


def test_oversample_preserves_every_sample():
    samples = _forgery_set(7, 3)
    order = oversample_epoch(samples, Rng(3))
    assert set(order) == set(range(10))


def test_oversample_missing_class():
    with pytest.raises(ValueError, match="absent"):
        oversample_epoch(_forgery_set(5, 0), Rng(0))


def test_augment_eval_center_crop():
    clip = Rng(0).normal((3, 96, 96, 1), 128.0, 30.0)
    out = augment(clip, Rng(1), train=False)
    expect = (clip[:, 4:92, 4:92, :] / 255.0 - np.float32(0.421)) / np.float32(0.165)
    assert np.allclose(out, expect, atol=1e-6)


def test_augment_offsets_uniform_and_flip_rate():
    clip = np.zeros((1, 96, 96, 1), dtype=np.float32)
    for y in range(96):
        clip[0, y, :, 0] = y
    offsets = []
    flips = 0
    n = 10000
    for i in range(n):
        rng = Rng(0).substream("aug", i)
        out = augment(clip, rng, train=True)
        # recover the row offset from the first pixel value
        val = float(out[0, 0, 0, 0]) * 0.165 + 0.421
        offsets.append(int(round(val * 255.0)))
        rng2 = Rng(0).substream("aug", i)
        oy, ox = rng2.integer(9), rng2.integer(9)
        flips += int(rng2.uniform(()) < 0.5)
        assert offsets[-1] == oy
    counts = np.bincount(offsets, minlength=9)
    assert counts.min() > n / 9 * 0.8 and counts.max() < n / 9 * 1.2
    assert 0.45 < flips / n < 0.55


def test_augment_flip_involution():
    clip = Rng(2).normal((2, 96, 96, 1), 100.0, 20.0)
    cropped = clip[:, 4:92, 4:92, :]
    flipped_twice = cropped[:, :, ::-1, :][:, :, ::-1, :]
    assert np.array_equal(flipped_twice, cropped)


def test_augment_rejects_small_input():
    with pytest.raises(ValueError, match="88"):
        augment(np.zeros((2, 64, 64, 1), dtype=np.float32), Rng(0), train=True)


def test_early_stop_strictly_decreasing_never_stops():
    history = [1.0 - 0.01 * i for i in range(50)]
    assert early_stop(history, patience=10)["stop_epoch"] is None


def test_early_stop_flat_history_stops_at_11():
    result = early_stop([0.5] * 11, patience=10)
    assert result["stop_epoch"] == 11
    assert result["best_epoch"] == 1


def test_early_stop_exact_min_delta_does_not_reset():
    # each epoch improves by exactly min_delta: not a strict improvement
    history = [8.0 - 0.25 * i for i in range(12)]
    assert early_stop(history, patience=10, min_delta=0.25)["stop_epoch"] == 11


def test_early_stopper_tie_keeps_earliest():
    stopper = EarlyStopper(patience=3, min_delta=0.0)
    stopper.update(0.4, 1)
    is_best, _ = stopper.update(0.4, 2)
    assert not is_best and stopper.best_epoch == 1


def test_split_is_video_level_and_seeded():
    samples = _forgery_set(18, 2)
    train, val = split_train_val(samples, 0.1, Rng(5))
    assert len(train) + len(val) == 20 and len(val) == 2
    train_ids = {s.video_id for s in train}
    val_ids = {s.video_id for s in val}
    assert not train_ids & val_ids
    train2, val2 = split_train_val(samples, 0.1, Rng(5))
    assert [s.video_id for s in val2] == [s.video_id for s in val]


def _tiny_corpus(n, seed, sep=3.0):
    """Directly constructed mouth windows: class 1 flickers, class 0 smooth."""
    rng = Rng(seed)
    out = []
    for i in range(n):
        label = i % 2
        base = rng.substream(i).normal((8, 96, 96, 1), 128.0, 5.0)
        if label:
            base[::2] += sep * 10
        out.append(ForgerySample(f"v{i}", base[None].clip(0, 255), label))
    return out


def _tiny_cfg(**kw):
    base = dict(batch_size=4, learning_rate=2e-3, max_epochs=3, patience=10,
                augment=False, val_fraction=0.2)
    base.update(kw)
    return TrainConfig(**base)


def _tiny_model_cfg():
    return desk_config(clip_len=8, base_width=4, branch_width=4)


def test_finetune_frozen_leaves_extractor_bitwise_identical():
    corpus = _tiny_corpus(8, 1)
    model_cfg = _tiny_model_cfg()
    pretrained = Model(model_cfg, seed=3).store.snapshot()
    model, snap, _ = finetune_forgery(corpus, pretrained, "frozen", model_cfg,
                                      _tiny_cfg(max_epochs=4), seed=5)
    for name, arr in pretrained.items():
        if name.startswith("featureExtractor/"):
            assert np.array_equal(arr, snap[name]), name
    changed_h = any(
        not np.array_equal(pretrained[n], snap[n])
        for n in pretrained if n.startswith("temporalNet/")
    )
    assert changed_h


def test_finetune_ft_whole_changes_extractor():
    corpus = _tiny_corpus(8, 2)
    model_cfg = _tiny_model_cfg()
    pretrained = Model(model_cfg, seed=3).store.snapshot()
    _, snap, _ = finetune_forgery(corpus, pretrained, "ft_whole", model_cfg,
                                  _tiny_cfg(max_epochs=1), seed=5)
    changed_g = any(
        not np.array_equal(pretrained[n], snap[n])
        for n in pretrained
        if n.startswith("featureExtractor/") and n.endswith(("weight", "gamma", "beta"))
    )
    assert changed_g


def test_finetune_needs_both_classes():
    corpus = [s for s in _tiny_corpus(8, 3) if s.label == 0]
    with pytest.raises(ValueError, match="both"):
        finetune_forgery(corpus, None, "scratch", _tiny_model_cfg(), _tiny_cfg(), seed=1)


def test_finetune_rejects_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        finetune_forgery(_tiny_corpus(4, 4), None, "partial", _tiny_model_cfg(),
                         _tiny_cfg(), seed=1)


def test_finetune_frozen_requires_checkpoint():
    with pytest.raises(ValueError, match="pretrained"):
        finetune_forgery(_tiny_corpus(4, 5), None, "frozen", _tiny_model_cfg(),
                         _tiny_cfg(), seed=1)


def test_finetune_deterministic_rerun():
    corpus = _tiny_corpus(8, 6)
    model_cfg = _tiny_model_cfg()
    pretrained = Model(model_cfg, seed=3).store.snapshot()
    _, snap_a, log_a = finetune_forgery(corpus, pretrained, "frozen", model_cfg,
                                        _tiny_cfg(), seed=9)
    _, snap_b, log_b = finetune_forgery(corpus, pretrained, "frozen", model_cfg,
                                        _tiny_cfg(), seed=9)
    assert [r["trainLoss"] for r in log_a] == [r["trainLoss"] for r in log_b]
    assert all(np.array_equal(snap_a[k], snap_b[k]) for k in snap_a)


def test_single_step_decreases_batch_loss():
    """One optimizer step with a small lr lowers that batch's loss."""
    model_cfg = _tiny_model_cfg()
    model = Model(model_cfg, seed=11)
    clips = Rng(1).normal((4, 8, 88, 88, 1), 0.0, 1.0)
    labels = np.array([0.0, 1.0, 0.0, 1.0], dtype=np.float32)
    cfg = TrainConfig(learning_rate=1e-6)
    opt = Adam(cfg)
    logits = model.forward(clips, head="forgery", extractor_train=True, temporal_train=True,
                           rng=Rng(2))
    loss_before, dlogits = bce_loss(logits[:, 0], labels)
    grads = model.backward(np.asarray(dlogits, dtype=np.float32)[:, None])
    opt.step(model.store.trainable_params(), grads)
    logits_after = model.forward(clips, head="forgery", extractor_train=True,
                                 temporal_train=True, rng=Rng(2))
    loss_after, _ = bce_loss(logits_after[:, 0], labels)
    assert loss_after < loss_before


def test_pretrain_rejects_single_class():
    windows = np.zeros((1, 8, 96, 96, 1), dtype=np.float32)
    samples = [LipreadingSample(f"v{i}", windows, 0) for i in range(6)]
    with pytest.raises(ValueError, match="2 word classes"):
        pretrain_lipreading(samples, _tiny_model_cfg(), _tiny_cfg(), seed=1)


def test_pretrain_loss_curve_bitwise_reproducible():
    rng = Rng(0)
    samples = [
        LipreadingSample(f"v{i}", rng.substream(i).normal((1, 8, 96, 96, 1), 128, 20)
                         .clip(0, 255), i % 2)
        for i in range(8)
    ]
    cfg = _tiny_cfg(max_epochs=2, augment=True)
    _, snap_a, log_a = pretrain_lipreading(samples, _tiny_model_cfg(), cfg, seed=4)
    _, snap_b, log_b = pretrain_lipreading(samples, _tiny_model_cfg(), cfg, seed=4)
    assert [r["trainLoss"] for r in log_a] == [r["trainLoss"] for r in log_b]
    assert [r["valLoss"] for r in log_a] == [r["valLoss"] for r in log_b]
    assert all(np.array_equal(snap_a[k], snap_b[k]) for k in snap_a)
