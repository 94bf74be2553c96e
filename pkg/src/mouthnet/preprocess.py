"""Mouth-crop preprocessing from frames plus precomputed 68-point landmarks.

Per video: smooth the landmark track over a 12-frame window, estimate a
least-squares similarity transform from five eye/nose reference points to a
fixed mean-face template, warp each frame into the canonical face space, and
cut a 96x96 grayscale crop centred on the mean mouth landmark. Consecutive
frames are then windowed into fixed-length clips.

Alignment removes translation, scale, and rotation of the head; it does not
touch how the mouth moves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image

MOUTH_CROP = 96
SMOOTH_WINDOW = 12

# 68-point landmark layout: eyes 36-41 / 42-47, nose bridge 27-30,
# nose base 31-35, mouth 48-67.
LEFT_EYE = slice(36, 42)
RIGHT_EYE = slice(42, 48)
NOSE_POINTS = (28, 30, 33)
MOUTH = slice(48, 68)

# Mean-face reference points (x, y) in a canonical 256x256 frame:
# left eye centre, right eye centre, nose bridge, nose tip, nose base.
MEAN_FACE_256 = np.array(
    [
        [94.0, 90.0],
        [162.0, 90.0],
        [128.0, 94.0],
        [128.0, 122.0],
        [128.0, 138.0],
    ]
)

# Fixed scale composed into the similarity so the warped face fits a
# 96 px mouth crop. Warped frames live on a 192x192 canvas.
CANONICAL_SCALE = 0.75
WARP_SIZE = 192
MEAN_FACE_REF = MEAN_FACE_256 * CANONICAL_SCALE

LUMA = np.array([0.299, 0.587, 0.114])


class DataError(ValueError):
    pass


def smooth_landmarks(track: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Per-coordinate moving average over a centred window, truncated at the
    sequence boundaries. track is [F, 68, 2]."""
    track = np.asarray(track, dtype=np.float64)
    frames = track.shape[0]
    half_lo = (window - 2) // 2  # 5 frames back, 6 forward for window 12
    half_hi = window - half_lo - 1
    cumsum = np.concatenate([np.zeros((1,) + track.shape[1:]), np.cumsum(track, axis=0)])
    out = np.empty_like(track)
    for i in range(frames):
        lo = max(0, i - half_lo)
        hi = min(frames, i + half_hi + 1)
        out[i] = (cumsum[hi] - cumsum[lo]) / (hi - lo)
    return out


def five_points(landmarks68: np.ndarray) -> np.ndarray:
    """Eye centres plus three nose points, the alignment references."""
    lm = np.asarray(landmarks68, dtype=np.float64)
    return np.stack([
        lm[LEFT_EYE].mean(axis=0),
        lm[RIGHT_EYE].mean(axis=0),
        lm[NOSE_POINTS[0]],
        lm[NOSE_POINTS[1]],
        lm[NOSE_POINTS[2]],
    ])


def estimate_similarity(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Least-squares similarity (rotation + uniform scale + translation)
    mapping src points onto ref points. Returns a 2x3 matrix.

    Minimizing sum ||A p_i - q_i||^2 over A = [[a, -b, tx], [b, a, ty]] has
    the closed form a = <p, q> / <p, p>, b = <p, q_perp> / <p, p> on centred
    coordinates.
    """
    src = np.asarray(src, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if src.shape != ref.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError(f"point sets must both be [N, 2]; got {src.shape} and {ref.shape}")
    sc = src.mean(axis=0)
    rc = ref.mean(axis=0)
    p = src - sc
    q = ref - rc
    ss = float(np.sum(p * p))
    if ss < 1e-9:
        raise DataError("degenerate point configuration: source points coincide")
    a = float(np.sum(p * q)) / ss
    b = float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0])) / ss
    rot = np.array([[a, -b], [b, a]])
    t = rc - rot @ sc
    return np.hstack([rot, t[:, None]])


def invert_similarity(transform: np.ndarray) -> np.ndarray:
    rot = transform[:, :2]
    inv = np.linalg.inv(rot)
    t = -inv @ transform[:, 2]
    return np.hstack([inv, t[:, None]])


def apply_transform(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ transform[:, :2].T + transform[:, 2]


def warp_frame(frame: np.ndarray, transform: np.ndarray, out_size=WARP_SIZE) -> np.ndarray:
    """Affine-warp a frame into the destination space of the transform.

    Inverse-mapping with bilinear interpolation; samples outside the source
    are zero. Integer pixel coordinates address pixel centres.
    """
    frame = np.asarray(frame, dtype=np.float32)
    flat = frame.ndim == 2
    if flat:
        frame = frame[:, :, None]
    h_src, w_src = frame.shape[:2]
    h_out, w_out = (out_size, out_size) if np.isscalar(out_size) else out_size
    inv = invert_similarity(np.asarray(transform, dtype=np.float64))
    ys, xs = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(np.float32)
    fy = (sy - y0).astype(np.float32)

    def sample(yy, xx):
        valid = (yy >= 0) & (yy < h_src) & (xx >= 0) & (xx < w_src)
        vals = frame[np.clip(yy, 0, h_src - 1), np.clip(xx, 0, w_src - 1)]
        return vals * valid[..., None]

    out = (
        sample(y0, x0) * ((1 - fy) * (1 - fx))[..., None]
        + sample(y0, x0 + 1) * ((1 - fy) * fx)[..., None]
        + sample(y0 + 1, x0) * (fy * (1 - fx))[..., None]
        + sample(y0 + 1, x0 + 1) * (fy * fx)[..., None]
    )
    return out[:, :, 0] if flat else out


def crop_mouth(warped_frame: np.ndarray, warped_landmarks: np.ndarray) -> np.ndarray:
    """Fixed 96x96 grayscale crop centred on the mean mouth landmark.

    Color frames are converted with BT.601 luma; the crop window is clamped
    to the frame and zero padded where it reaches outside. Output pixel
    values stay on the 0..255 scale.
    """
    frame = np.asarray(warped_frame, dtype=np.float32)
    if frame.ndim == 3:
        gray = frame @ LUMA.astype(np.float32)
    else:
        gray = frame
    lm = np.asarray(warped_landmarks, dtype=np.float64)
    mouth = lm[MOUTH] if lm.shape[0] == 68 else lm
    cx, cy = np.round(mouth.mean(axis=0)).astype(int)
    half = MOUTH_CROP // 2
    out = np.zeros((MOUTH_CROP, MOUTH_CROP), dtype=np.float32)
    y_lo, y_hi = cy - half, cy + half
    x_lo, x_hi = cx - half, cx + half
    sy_lo, sy_hi = max(0, y_lo), min(gray.shape[0], y_hi)
    sx_lo, sx_hi = max(0, x_lo), min(gray.shape[1], x_hi)
    if sy_lo < sy_hi and sx_lo < sx_hi:
        out[sy_lo - y_lo : sy_hi - y_lo, sx_lo - x_lo : sx_hi - x_lo] = gray[
            sy_lo:sy_hi, sx_lo:sx_hi
        ]
    return out


def _warp_crop_gray(gray: np.ndarray, transform: np.ndarray, centre) -> np.ndarray:
    """Warp just the 96x96 mouth window out of a grayscale source frame.

    Equivalent to warp_frame followed by crop_mouth (luma precomputed):
    output pixels whose canonical coordinates fall outside the warp canvas
    are zero, matching the crop's zero padding.
    """
    cx, cy = centre
    half = MOUTH_CROP // 2
    inv = invert_similarity(transform)
    ys, xs = np.meshgrid(np.arange(cy - half, cy + half, dtype=np.float64),
                         np.arange(cx - half, cx + half, dtype=np.float64), indexing="ij")
    inside = (ys >= 0) & (ys < WARP_SIZE) & (xs >= 0) & (xs < WARP_SIZE)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(np.float32)
    fy = (sy - y0).astype(np.float32)
    h_src, w_src = gray.shape

    def sample(yy, xx):
        valid = (yy >= 0) & (yy < h_src) & (xx >= 0) & (xx < w_src)
        return gray[np.clip(yy, 0, h_src - 1), np.clip(xx, 0, w_src - 1)] * valid

    out = (
        sample(y0, x0) * (1 - fy) * (1 - fx)
        + sample(y0, x0 + 1) * (1 - fy) * fx
        + sample(y0 + 1, x0) * fy * (1 - fx)
        + sample(y0 + 1, x0 + 1) * fy * fx
    )
    return (out * inside).astype(np.float32)


def preprocess_video(frames: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    """Frames [F, H, W, 3] uint8 plus landmarks [F, 68, 2] -> aligned mouth
    sequence [F, 96, 96] float32 (0..255)."""
    frames = np.asarray(frames)
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.ndim != 3 or landmarks.shape[1:] != (68, 2):
        raise DataError(f"landmarks must be [F, 68, 2], got {list(landmarks.shape)}")
    if len(frames) != len(landmarks):
        raise DataError(f"{len(frames)} frames but {len(landmarks)} landmark frames")
    if not np.all(np.isfinite(landmarks)):
        raise DataError("landmarks contain non-finite coordinates")
    track = smooth_landmarks(landmarks)
    out = np.empty((len(frames), MOUTH_CROP, MOUTH_CROP), dtype=np.float32)
    for f in range(len(frames)):
        transform = estimate_similarity(five_points(track[f]), MEAN_FACE_REF)
        gray = frames[f].astype(np.float32) @ LUMA.astype(np.float32) \
            if frames[f].ndim == 3 else frames[f].astype(np.float32)
        mouth = apply_transform(transform, track[f][MOUTH])
        centre = np.round(mouth.mean(axis=0)).astype(int)
        out[f] = _warp_crop_gray(gray, transform, centre)
    return out


def make_clips(mouth_seq: np.ndarray, clip_len: int = 25, stride: int | None = None) -> np.ndarray:
    """Window a mouth sequence into clips [n, T, 96, 96, 1]. The default
    stride equals the clip length (non-overlapping windows, remainder
    dropped); videos shorter than one clip yield zero clips."""
    stride = clip_len if stride is None else stride
    seq = np.asarray(mouth_seq, dtype=np.float32)
    frames = seq.shape[0]
    starts = range(0, frames - clip_len + 1, stride)
    if frames < clip_len:
        return np.zeros((0, clip_len, seq.shape[1], seq.shape[2], 1), dtype=np.float32)
    return np.stack([seq[s : s + clip_len, :, :, None] for s in starts])


# ---------------------------------------------------------------------------
# dataset index and on-disk formats

LABELS = ("real", "fake")
SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    video_id: str
    frames_path: str
    landmarks_path: str
    label: str
    method_tag: str = ""
    dataset_tag: str = ""
    split: str = "train"
    word_label: int | None = None  # set for word-classification corpora


def save_manifest(path, entries: list) -> None:
    lines = []
    for e in entries:
        d = {k: v for k, v in asdict(e).items() if v is not None}
        lines.append(json.dumps(d, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, check_paths: bool = True) -> list:
    root = Path(path).parent
    entries = []
    seen = set()
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
        entry = ManifestEntry(**d)
        if entry.video_id in seen:
            raise DataError(f"{path}:{line_no}: duplicate videoId {entry.video_id!r}")
        seen.add(entry.video_id)
        if entry.label not in LABELS:
            raise DataError(f"{path}:{line_no}: label must be one of {LABELS}")
        if entry.split not in SPLITS:
            raise DataError(f"{path}:{line_no}: split must be one of {SPLITS}")
        if check_paths:
            for p in (entry.frames_path, entry.landmarks_path):
                if not (root / p).exists():
                    raise DataError(f"{path}:{line_no}: missing path {p}")
        entries.append(entry)
    return entries


def load_frames(frames_dir) -> np.ndarray:
    """All PNG/PPM frames of one video, lexicographic order, as [F, H, W, 3]."""
    frames_dir = Path(frames_dir)
    files = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if not files:
        raise DataError(f"no frames found under {frames_dir}")
    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in files]
    return np.stack(frames)


def save_frames(frames_dir, frames: np.ndarray) -> None:
    frames_dir = Path(frames_dir)
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(frame).save(frames_dir / f"{i:05d}.png")


def load_landmark_file(path) -> np.ndarray:
    data = np.asarray(json.loads(Path(path).read_text()), dtype=np.float64)
    if data.ndim != 3 or data.shape[1:] != (68, 2):
        raise DataError(f"{path}: expected [frames][68][2] landmark array")
    return data


def save_landmark_file(path, landmarks: np.ndarray) -> None:
    Path(path).write_text(json.dumps(np.asarray(landmarks).tolist()))
