"""Video-level scoring, ROC/AUC, occlusion-sensitivity maps, and the
experiment protocol runners (plain, cross-manipulation, robustness,
clip-length sweep).

A video's score is the mean of its per-clip fake probabilities; rankings and
report layouts are deterministic given (data, seed) and serialize as
stable-key JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corruptions import KINDS, CorruptionSpec, apply_corruption
from .model import Model, ModelConfig
from .preprocess import make_clips, preprocess_video
from .rng import Rng
from .tensorops import sigmoid
from .training import (
    PIXEL_MEAN,
    PIXEL_STD,
    ForgerySample,
    TrainConfig,
    augment,
    finetune_forgery,
)

SCORE_BATCH = 16


@dataclass
class VideoScore:
    video_id: str
    label: int
    clip_scores: list
    video_score: float = field(init=False)

    def __post_init__(self):
        if not self.clip_scores:
            raise ValueError(f"video {self.video_id!r} has no clips to score")
        self.video_score = float(np.mean(self.clip_scores))


def forgery_probs(model: Model, clips: np.ndarray) -> np.ndarray:
    """Fake probabilities for normalized clips [n, T, 88, 88, 1]."""
    probs = []
    for s in range(0, len(clips), SCORE_BATCH):
        logits = model.forward(clips[s : s + SCORE_BATCH], head="forgery")
        probs.append(sigmoid(logits[:, 0]))
    return np.concatenate(probs) if probs else np.zeros(0)


def score_video(model: Model, sample: ForgerySample) -> VideoScore:
    """Average the per-clip predictions across the whole video."""
    clips = np.stack([augment(w, Rng(0), train=False) for w in sample.windows]) \
        if len(sample.windows) else np.zeros((0,))
    if len(clips) == 0:
        raise ValueError(f"video {sample.video_id!r} has no clips to score")
    probs = forgery_probs(model, clips)
    return VideoScore(sample.video_id, sample.label, [float(p) for p in probs])


def score_dataset(model: Model, samples: list) -> list:
    return [score_video(model, s) for s in samples]


# ---------------------------------------------------------------------------
# metrics

@dataclass
class RocCurve:
    points: list  # (fpr, tpr), from (0, 0) to (1, 1)
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC by threshold sweep with tied scores collapsed into single steps;
    trapezoidal area. Equals the Mann-Whitney statistic
    P(s_fake > s_real) + 0.5 P(s_fake = s_real)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    points = [(0.0, 0.0)]
    auc = 0.0
    tp = fp = 0
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and scores[order[j]] == scores[order[i]]:
            j += 1
        d_tp = int(np.sum(labels[order[i:j]] == 1))
        d_fp = (j - i) - d_tp
        prev = (fp / n_neg, tp / n_pos)
        tp += d_tp
        fp += d_fp
        cur = (fp / n_neg, tp / n_pos)
        auc += (cur[0] - prev[0]) * (prev[1] + cur[1]) / 2.0
        points.append(cur)
        i = j
    return RocCurve(points, float(auc))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(scores) == 0:
        raise ValueError("accuracy of an empty score set")
    predicted = (scores >= threshold).astype(np.int64)
    return float(np.mean(predicted == labels))


# ---------------------------------------------------------------------------
# occlusion sensitivity

OCCLUSION_FILL = (0.5 - PIXEL_MEAN) / PIXEL_STD  # mid-gray pixel, normalized


@dataclass
class OcclusionMap:
    heatmap: np.ndarray  # [H, W] in [0, 1]
    block: int
    forwards: int


def occlusion_map(prob_fn, clip: np.ndarray, label: int, block: int = 40,
                  fill: float = OCCLUSION_FILL, batch: int = 64) -> OcclusionMap:
    """Slide a gray block x full clip length over every spatial position
    (stride 1); record the correct-class probability per position; each
    pixel's heat is the mean over all blocks covering it, min-max normalized.

    prob_fn maps a batch of clips [B, T, H, W, 1] to fake probabilities [B].
    """
    t, h, w, _ = clip.shape
    if block > h or block > w:
        raise ValueError(f"block {block} exceeds frame extent {h}x{w}")
    positions = [(y, x) for y in range(h - block + 1) for x in range(w - block + 1)]
    acc = np.zeros((h, w), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    forwards = 0
    for s in range(0, len(positions), batch):
        chunk = positions[s : s + batch]
        occluded = np.repeat(clip[None], len(chunk), axis=0)
        for b, (y, x) in enumerate(chunk):
            occluded[b, :, y : y + block, x : x + block, :] = fill
        probs = np.asarray(prob_fn(occluded), dtype=np.float64)
        forwards += len(chunk)
        p_correct = probs if label == 1 else 1.0 - probs
        for p, (y, x) in zip(p_correct, chunk):
            acc[y : y + block, x : x + block] += p
            cnt[y : y + block, x : x + block] += 1.0
    heat = acc / cnt
    span = heat.max() - heat.min()
    if span <= 1e-12:
        heat = np.zeros_like(heat)
    else:
        heat = (heat - heat.min()) / span
    return OcclusionMap(heat.astype(np.float32), block, forwards)


def model_prob_fn(model: Model):
    return lambda clips: forgery_probs(model, np.ascontiguousarray(clips))


# ---------------------------------------------------------------------------
# single-frame ceiling probe

def frame_probe_auc(model: Model, train_samples: list, test_samples: list, seed: int,
                    steps: int = 300, lr: float = 0.05) -> float:
    """Video-level AUC of a logistic regression on single-frame features.

    Every frame is embedded as its own length-1 clip, so the extractor's
    temporal receptive field cannot smuggle in neighbouring frames; each
    frame inherits its video's label and a video's score is the mean frame
    probability. This measures how much of the real/fake signal is
    photometric rather than temporal.
    """
    def embed(samples):
        embs, labels = [], []
        for s in samples:
            clip = augment(s.windows[0], Rng(0), train=False)
            single = clip[:, None]  # [T, 1, 88, 88, 1]: one clip per frame
            embs.append(model.forward_embeddings(single)[:, 0, :])
            labels.append(s.label)
        return np.stack(embs), np.array(labels, dtype=np.float64)

    x_tr, y_tr = embed(train_samples)          # [N, T, D]
    n, t, d = x_tr.shape
    flat = x_tr.reshape(n * t, d).astype(np.float64)
    mu, sd = flat.mean(axis=0), flat.std(axis=0) + 1e-6
    flat = (flat - mu) / sd
    y_flat = np.repeat(y_tr, t)

    rng = Rng(seed).substream("probe")
    w = rng.normal((d,), 0.0, 0.01).astype(np.float64)
    b = 0.0
    m_w = np.zeros(d)
    v_w = np.zeros(d)
    m_b = v_b = 0.0
    for step in range(1, steps + 1):
        p = sigmoid(flat @ w + b)
        gw = flat.T @ (p - y_flat) / len(y_flat)
        gb = float(np.mean(p - y_flat))
        m_w = 0.9 * m_w + 0.1 * gw
        v_w = 0.999 * v_w + 0.001 * gw * gw
        m_b = 0.9 * m_b + 0.1 * gb
        v_b = 0.999 * v_b + 0.001 * gb * gb
        bc1, bc2 = 1 - 0.9 ** step, 1 - 0.999 ** step
        w -= lr * (m_w / bc1) / (np.sqrt(v_w / bc2) + 1e-8)
        b -= lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + 1e-8)

    x_te, y_te = embed(test_samples)
    scores = []
    for emb in x_te:
        z = ((emb.astype(np.float64) - mu) / sd) @ w + b
        scores.append(float(np.mean(sigmoid(z))))
    return roc_auc(scores, y_te.astype(int)).auc


# ---------------------------------------------------------------------------
# protocol runners

def _mean(values) -> float:
    return sum(values) / len(values)


def protocol_plain(model: Model, samples: list) -> dict:
    """Score a test set; report per-video scores, AUC, and accuracy."""
    scored = score_dataset(model, samples)
    scores = [v.video_score for v in scored]
    labels = [v.label for v in scored]
    return {
        "protocol": "plain",
        "videos": [
            {"videoId": v.video_id, "label": v.label,
             "clipScores": [round(c, 8) for c in v.clip_scores],
             "videoScore": round(v.video_score, 8)}
            for v in scored
        ],
        "auc": roc_auc(scores, labels).auc,
        "accuracy": accuracy(scores, labels),
        "numVideos": len(scored),
    }


def protocol_cross_manipulation(train_samples: list, test_samples: list, methods: list,
                                pretrained: dict, model_cfg: ModelConfig,
                                train_cfg: TrainConfig, seed: int) -> dict:
    """Hold out one manipulation at a time: train on the remaining fake
    methods plus reals, evaluate video-level AUC on the held-out method plus
    reals. Emits one row per held-out method and their average."""
    train_tags = {s.method_tag for s in train_samples if s.label == 1}
    rows = []
    for held_out in methods:
        if held_out not in train_tags:
            raise ValueError(f"held-out method {held_out!r} absent from the training manifest")
        tr = [s for s in train_samples if s.label == 0 or s.method_tag != held_out]
        te = [s for s in test_samples if s.label == 0 or s.method_tag == held_out]
        if not any(s.label == 1 for s in te):
            raise ValueError(f"held-out method {held_out!r} has no fake test videos")
        model, _, _ = finetune_forgery(tr, pretrained, "frozen", model_cfg, train_cfg,
                                       seed=Rng(seed).substream("xman", held_out).integer(2 ** 31))
        scored = score_dataset(model, te)
        auc = roc_auc([v.video_score for v in scored], [v.label for v in scored]).auc
        rows.append({"heldOut": held_out, "auc": auc, "numTest": len(te)})
    return {
        "protocol": "cross-manipulation",
        "rows": rows,
        "average": _mean([r["auc"] for r in rows]),
    }


@dataclass
class RawVideo:
    """Unprocessed test video: frames plus landmark track, for protocols that
    perturb pixels before preprocessing."""
    video_id: str
    frames: np.ndarray  # [F, H, W, 3] uint8
    landmarks: np.ndarray  # [F, 68, 2]
    label: int


def _score_raw(model: Model, videos: list, clip_len: int, corrupt=None) -> tuple:
    scores, labels = [], []
    for v in videos:
        frames = v.frames if corrupt is None else corrupt(v.frames, v.video_id)
        windows = make_clips(preprocess_video(frames, v.landmarks), clip_len)
        sample = ForgerySample(v.video_id, windows, v.label)
        scores.append(score_video(model, sample).video_score)
        labels.append(v.label)
    return scores, labels


def protocol_robustness(model: Model, videos: list, seed: int, clip_len: int = 25,
                        apply_fn=apply_corruption) -> dict:
    """Clean AUC plus the 7 kinds x 5 severities grid, per-kind means over
    severities, and the grand average across kinds."""
    scores, labels = _score_raw(model, videos, clip_len)
    report = {
        "protocol": "robustness",
        "clean": roc_auc(scores, labels).auc,
        "kinds": {},
    }
    for kind in KINDS:
        cells = {}
        for severity in range(1, 6):
            def corrupt(frames, video_id, _k=kind, _s=severity):
                spec = CorruptionSpec(_k, _s, Rng(seed).substream(_k, video_id).integer(2 ** 31))
                return apply_fn(frames, spec)
            scores, labels = _score_raw(model, videos, clip_len, corrupt)
            cells[str(severity)] = roc_auc(scores, labels).auc
        report["kinds"][kind] = {
            "severities": cells,
            "mean": _mean(list(cells.values())),
        }
    report["average"] = _mean([report["kinds"][k]["mean"] for k in KINDS])
    return report


def protocol_clip_sweep(train_videos: list, test_videos: list, pretrained: dict,
                        model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int,
                        clip_lengths=(5, 10, 15, 20, 25, 30)) -> dict:
    """Train one detector per clip length and report its test AUC.

    Videos arrive as (video_id, label, mouth_seq [F, 96, 96]) tuples so each
    sweep entry can re-window the sequences at its own length."""
    rows = []
    for clip_len in clip_lengths:
        cfg = ModelConfig(**{**model_cfg.to_dict(), "clip_len": clip_len})
        tr = [ForgerySample(vid, make_clips(seq, clip_len), label)
              for vid, label, seq in train_videos]
        tr = [s for s in tr if len(s.windows)]
        te = [ForgerySample(vid, make_clips(seq, clip_len), label)
              for vid, label, seq in test_videos]
        te = [s for s in te if len(s.windows)]
        model, _, _ = finetune_forgery(tr, pretrained, "frozen", cfg, train_cfg,
                                       seed=Rng(seed).substream("sweep", clip_len).integer(2 ** 31))
        scored = score_dataset(model, te)
        auc = roc_auc([v.video_score for v in scored], [v.label for v in scored]).auc
        rows.append({"clipLen": clip_len, "auc": auc})
    return {"protocol": "clip-sweep", "rows": rows}
