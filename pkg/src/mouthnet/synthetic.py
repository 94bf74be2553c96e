"""Deterministic desk-scale datasets: a toy word-classification corpus and a
real/fake corpus with injected temporal mouth anomalies.

Each video is a rendered face-like scene: a textured background, a head
ellipse, eyes, nose marks, and a mouth whose vertical aperture follows a
smooth per-video trajectory. Word classes differ only in the frequency and
phase family of that trajectory, and the forgery artefacts perturb only its
temporal structure, so single frames carry no class signal.

Artefact families (fake class only):
    jitter            per-frame timing noise on the trajectory, i.e. unnatural
                      fluctuations in the speed of mouth movement
    shape_flicker     per-frame perturbation of the mouth's horizontal radius
    incomplete_close  the aperture floor is raised so the mouth never closes
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import make_clips, preprocess_video
from .rng import Rng
from .training import ForgerySample, LipreadingSample

FRAME_SIZE = 140
ARTEFACT_FAMILIES = ("jitter", "shape_flicker", "incomplete_close")

# Canonical face geometry (x, y) before the per-video similarity jitter.
_LEFT_EYE = (46.0, 50.0)
_RIGHT_EYE = (94.0, 50.0)
_MOUTH = (70.0, 96.0)
_HEAD = (70.0, 72.0)

# Word classes are trajectory-frequency families (cycles per 25 frames).
CLASS_FREQS = (0.55, 1.0, 1.55, 2.2, 2.9, 3.7, 4.6, 5.6)


@dataclass
class SynthConfig:
    num_videos: int = 100
    frames_per_video: int = 25
    vocab: int = 4
    artefact_family: str = "jitter"
    artefact_strength: float = 1.5
    seed: int = 0
    clip_len: int = 25

    def __post_init__(self):
        if self.artefact_family not in ARTEFACT_FAMILIES:
            raise ValueError(f"artefact_family must be one of {ARTEFACT_FAMILIES}")
        if self.artefact_strength < 0:
            raise ValueError("artefact_strength must be >= 0")
        if not 2 <= self.vocab <= len(CLASS_FREQS):
            raise ValueError(f"vocab must be in [2, {len(CLASS_FREQS)}]")


def _canonical_landmarks(mouth_rx: float, mouth_ry: float) -> np.ndarray:
    """Analytic 68-point layout for the rendered face."""
    lm = np.zeros((68, 2))
    # jaw 0-16: lower half of the head ellipse
    ang = np.linspace(np.pi * 0.05, np.pi * 0.95, 17)
    lm[0:17, 0] = _HEAD[0] - 48 * np.cos(ang)
    lm[0:17, 1] = _HEAD[1] + 54 * np.sin(ang)
    # brows 17-21 / 22-26
    lm[17:22, 0] = np.linspace(36, 56, 5)
    lm[17:22, 1] = 40 - 2 * np.sin(np.linspace(0, np.pi, 5))
    lm[22:27, 0] = np.linspace(84, 104, 5)
    lm[22:27, 1] = 40 - 2 * np.sin(np.linspace(0, np.pi, 5))
    # nose bridge 27-30 and base 31-35
    lm[27:31, 0] = _HEAD[0]
    lm[27:31, 1] = (52.0, 58.0, 64.0, 70.0)
    lm[31:36, 0] = (62.0, 66.0, 70.0, 74.0, 78.0)
    lm[31:36, 1] = (78.0, 79.0, 80.0, 79.0, 78.0)
    # eyes 36-41 / 42-47: six points around each centre
    ang6 = np.arange(6) * (2 * np.pi / 6)
    for start, (cx, cy) in ((36, _LEFT_EYE), (42, _RIGHT_EYE)):
        lm[start : start + 6, 0] = cx + 5.0 * np.cos(ang6)
        lm[start : start + 6, 1] = cy + 2.5 * np.sin(ang6)
    # mouth 48-59 outer ring, 60-67 inner ring
    ang12 = np.arange(12) * (2 * np.pi / 12)
    lm[48:60, 0] = _MOUTH[0] + mouth_rx * np.cos(ang12)
    lm[48:60, 1] = _MOUTH[1] + mouth_ry * np.sin(ang12)
    ang8 = np.arange(8) * (2 * np.pi / 8)
    lm[60:68, 0] = _MOUTH[0] + 0.6 * mouth_rx * np.cos(ang8)
    lm[60:68, 1] = _MOUTH[1] + 0.6 * mouth_ry * np.sin(ang8)
    return lm


def _similarity_matrix(angle: float, scale: float, tx: float, ty: float,
                       about=(70.0, 72.0)) -> np.ndarray:
    c, s = np.cos(angle) * scale, np.sin(angle) * scale
    rot = np.array([[c, -s], [s, c]])
    centre = np.asarray(about)
    t = centre - rot @ centre + np.array([tx, ty])
    return np.hstack([rot, t[:, None]])


def _ellipse_alpha(u, v, cx, cy, rx, ry):
    """Anti-aliased ellipse coverage via an approximate signed distance."""
    f = np.sqrt(((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2)
    d = (f - 1.0) * min(rx, ry)
    return np.clip(0.5 - d, 0.0, 1.0)


def _static_face(grid_uv, texture):
    """Everything that does not move: background, head, eyes, brows, nose."""
    u, v = grid_uv
    img = 68.0 + texture * 0.5
    head = _ellipse_alpha(u, v, *_HEAD, 50.0, 60.0)
    img = img + head * (178.0 + texture - img)
    for cx, cy in (_LEFT_EYE, _RIGHT_EYE):
        eye = _ellipse_alpha(u, v, cx, cy, 5.5, 3.2)
        img = img + eye * (45.0 - img)
        brow = _ellipse_alpha(u, v, cx, cy - 10.0, 9.0, 1.8)
        img = img + brow * (95.0 - img)
    nose = _ellipse_alpha(u, v, _HEAD[0], 68.0, 3.0, 10.0)
    img = img + nose * (150.0 - img)
    return img


def _render_frame(grid_uv, static, mouth_ry, mouth_rx, noise):
    u, v = grid_uv
    mouth = _ellipse_alpha(u, v, _MOUTH[0], _MOUTH[1], mouth_rx, max(mouth_ry, 0.6))
    img = static + mouth * (38.0 - static) + noise
    rgb = np.stack([img * 1.04, img, img * 0.96], axis=-1)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def _aperture(times: np.ndarray, freq: float, phase: float, lo: float, hi: float,
              period: float) -> np.ndarray:
    return lo + (hi - lo) * 0.5 * (1.0 + np.sin(2.0 * np.pi * (freq * times / period + phase)))


def render_video(rng: Rng, frames: int, freq: float, phase: float,
                 family: str | None = None, strength: float = 0.0) -> tuple:
    """One rendered video: (frames uint8 [F, 140, 140, 3], landmarks [F, 68, 2]).

    family None renders a clean (real) trajectory; otherwise the named
    anomaly is injected with the given strength.
    """
    geo = rng.substream("geom")
    angle = (geo.uniform(()) * 2 - 1) * np.deg2rad(6.0)
    scale = 0.95 + geo.uniform(()) * 0.13
    tx = (geo.uniform(()) * 2 - 1) * 4.0
    ty = (geo.uniform(()) * 2 - 1) * 4.0
    sim = _similarity_matrix(float(angle), float(scale), float(tx), float(ty))
    inv_rot = np.linalg.inv(sim[:, :2])
    inv_t = -inv_rot @ sim[:, 2]

    a_lo = 0.4 + float(geo.uniform(())) * 0.6
    a_hi = 6.0 + float(geo.uniform(())) * 3.0
    mouth_rx = 14.0 + float(geo.uniform(())) * 4.0

    times = np.arange(frames, dtype=np.float64)
    if family == "jitter" and strength > 0:
        times = times + strength * rng.substream("jitter").normal((frames,)).astype(np.float64)
    aperture = _aperture(times, freq, phase, a_lo, a_hi, 25.0)
    if family == "incomplete_close" and strength > 0:
        aperture = np.maximum(aperture, a_lo + 1.2 * strength)
    rx_track = np.full(frames, mouth_rx)
    if family == "shape_flicker" and strength > 0:
        flick = rng.substream("flicker").normal((frames,)).astype(np.float64)
        rx_track = np.clip(mouth_rx * (1.0 + 0.08 * strength * flick), 8.0, 22.0)

    # Render in canonical face coordinates by pulling the pixel grid through
    # the inverse of the per-video similarity.
    ys, xs = np.meshgrid(np.arange(FRAME_SIZE, dtype=np.float64),
                         np.arange(FRAME_SIZE, dtype=np.float64), indexing="ij")
    u = inv_rot[0, 0] * xs + inv_rot[0, 1] * ys + inv_t[0]
    v = inv_rot[1, 0] * xs + inv_rot[1, 1] * ys + inv_t[1]

    tex_rng = rng.substream("texture")
    texture = np.zeros_like(u)
    for _ in range(3):
        wx, wy = (tex_rng.uniform((2,)) * 0.35 + 0.03)
        ph = tex_rng.uniform(()) * 2 * np.pi
        texture += 6.0 * np.sin(wx * u + wy * v + ph)

    noise_rng = rng.substream("pixelnoise")
    static = _static_face((u, v), texture)
    frames_out = np.empty((frames, FRAME_SIZE, FRAME_SIZE, 3), dtype=np.uint8)
    landmarks = np.empty((frames, 68, 2))
    lm_noise = rng.substream("lmnoise")
    for f in range(frames):
        noise = noise_rng.normal((FRAME_SIZE, FRAME_SIZE), 0.0, 2.5).astype(np.float64)
        frames_out[f] = _render_frame((u, v), static, float(aperture[f]),
                                      float(rx_track[f]), noise)
        lm = _canonical_landmarks(float(rx_track[f]), float(aperture[f]))
        lm = lm @ sim[:, :2].T + sim[:, 2]
        landmarks[f] = lm + lm_noise.normal((68, 2), 0.0, 0.3).astype(np.float64)
    return frames_out, landmarks


def lipreading_video_params(rng: Rng, word: int) -> tuple:
    freq = CLASS_FREQS[word] + float(rng.substream("f").normal((), 0.0, 0.04))
    phase = float(rng.substream("p").uniform(()))
    return freq, phase


def forgery_video_params(rng: Rng) -> tuple:
    freq = 0.7 + float(rng.substream("f").uniform(())) * 1.0
    phase = float(rng.substream("p").uniform(()))
    return freq, phase


def gen_lipreading(cfg: SynthConfig) -> list:
    """Word-classification samples; class identity lives only in the
    trajectory dynamics, never in a single frame."""
    samples = []
    for v in render_raw_corpus(cfg, "lipreading"):
        windows = make_clips(preprocess_video(v["frames"], v["landmarks"]), cfg.clip_len)
        samples.append(LipreadingSample(v["video_id"], windows, v["word_label"]))
    return samples


def gen_forgery(cfg: SynthConfig) -> list:
    """Real/fake samples; fakes share the renderer and noise model and add
    only the configured temporal anomaly (a no-op at strength 0)."""
    samples = []
    for v in render_raw_corpus(cfg, "forgery"):
        windows = make_clips(preprocess_video(v["frames"], v["landmarks"]), cfg.clip_len)
        label = 1 if v["label"] == "fake" else 0
        samples.append(ForgerySample(v["video_id"], windows, label,
                                     v["method_tag"] or "real"))
    return samples


def render_raw_corpus(cfg: SynthConfig, mode: str) -> list:
    """Raw videos for on-disk corpora: list of dicts with frames, landmarks,
    and labels, in the same deterministic order as gen_lipreading/gen_forgery."""
    out = []
    if mode == "lipreading":
        root = Rng(cfg.seed).substream("lipreading")
        for i in range(cfg.num_videos):
            word = i % cfg.vocab
            vid_rng = root.substream("video", i)
            freq, phase = lipreading_video_params(vid_rng, word)
            frames, landmarks = render_video(vid_rng, cfg.frames_per_video, freq, phase)
            out.append({"video_id": f"lip{i:04d}", "frames": frames,
                        "landmarks": landmarks, "label": "real", "word_label": word,
                        "method_tag": ""})
    elif mode == "forgery":
        root = Rng(cfg.seed).substream("forgery")
        for i in range(cfg.num_videos):
            label = i % 2
            vid_rng = root.substream("video", i)
            freq, phase = forgery_video_params(vid_rng)
            family = cfg.artefact_family if label == 1 else None
            frames, landmarks = render_video(vid_rng, cfg.frames_per_video, freq, phase,
                                             family, cfg.artefact_strength)
            out.append({"video_id": f"forg{i:04d}", "frames": frames,
                        "landmarks": landmarks,
                        "label": "fake" if label else "real",
                        "word_label": None,
                        "method_tag": cfg.artefact_family if label else ""})
    else:
        raise ValueError("mode must be 'lipreading' or 'forgery'")
    return out
