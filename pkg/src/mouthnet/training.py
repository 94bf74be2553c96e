"""Losses, optimizer, sampling, augmentation, and the two-phase protocol:
word-classification pretraining followed by forgery finetuning with the
feature extractor frozen.

All randomness is drawn from substreams keyed by purpose and (epoch, index),
so a fixed seed reproduces every loss curve and checkpoint bitwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict, field

import numpy as np

from .model import Model, ModelConfig
from .rng import Rng
from .tensorops import DTYPE, sigmoid

# Grayscale normalization applied after scaling pixels to [0, 1].
PIXEL_MEAN = 0.421
PIXEL_STD = 0.165

CROP_SIZE = 88
SOURCE_SIZE = 96


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    min_delta: float = 1e-4
    max_epochs: int = 100
    augment: bool = True
    oversample: bool = True
    val_fraction: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LipreadingSample:
    """One video: its cached 96x96 mouth windows [n, T, 96, 96, 1]
    (pixel values 0..255) and the spoken-word class."""
    video_id: str
    windows: np.ndarray
    word_label: int


@dataclass
class ForgerySample:
    video_id: str
    windows: np.ndarray
    label: int  # 0 real, 1 fake
    method_tag: str = ""


# ---------------------------------------------------------------------------
# losses

def ce_loss(logits: np.ndarray, labels) -> tuple:
    """Mean cross entropy from raw logits; returns (loss, dlogits).

    Accepts a single [L] vector with an int label or a batch [B, L] with [B]
    labels. Uses the log-sum-exp form, so it is safe for large logits.
    """
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, l = lg.shape
    if np.any(lab < 0) or np.any(lab >= l):
        raise ValueError(f"label out of range [0, {l})")
    m = lg.max(axis=1, keepdims=True)
    z = lg - m
    lse = m[:, 0] + np.log(np.sum(np.exp(z), axis=1))
    loss = float(np.mean(lse - lg[np.arange(b), lab]))
    if np.isnan(loss):
        raise FloatingPointError("NaN loss")
    soft = np.exp(z) / np.sum(np.exp(z), axis=1, keepdims=True)
    soft[np.arange(b), lab] -= 1.0
    dlogits = (soft / b).astype(lg.dtype)
    return loss, dlogits[0] if single else dlogits


def bce_loss(logits, labels) -> tuple:
    """Mean binary cross entropy from raw logits via the softplus form."""
    lg = np.atleast_1d(np.asarray(logits, dtype=np.float64))
    lab = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if np.any((lab != 0) & (lab != 1)):
        raise ValueError("binary labels must be 0 or 1")
    # softplus(x) - y*x, evaluated stably for either sign of x
    loss_each = np.maximum(lg, 0) - lab * lg + np.log1p(np.exp(-np.abs(lg)))
    loss = float(np.mean(loss_each))
    if np.isnan(loss):
        raise FloatingPointError("NaN loss")
    dlogits = ((sigmoid(lg) - lab) / lg.size).astype(DTYPE)
    return loss, dlogits if np.ndim(logits) else float(dlogits[0])


# ---------------------------------------------------------------------------
# optimizer

def adam_step(params: dict, grads: dict, state: dict, t: int, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place. Entries without a gradient
    (frozen or inactive parameters) are left untouched."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        if name not in state:
            state[name] = (np.zeros_like(p), np.zeros_like(p))
        m, v = state[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.dtype)


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.state: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        adam_step(params, grads, self.state, self.t, self.cfg)


# ---------------------------------------------------------------------------
# sampling and augmentation

def oversample_epoch(samples: list, rng: Rng) -> list:
    """Class-balanced epoch order: every sample once, plus minority-class
    duplicates drawn with replacement until both classes reach the majority
    count. Returns a shuffled list of sample indices."""
    by_class: dict[int, list[int]] = {0: [], 1: []}
    for i, s in enumerate(samples):
        by_class[int(s.label)].append(i)
    if not by_class[0] or not by_class[1]:
        missing = "real" if not by_class[0] else "fake"
        raise ValueError(f"oversampling needs both classes; {missing} class is absent")
    target = max(len(by_class[0]), len(by_class[1]))
    order: list[int] = []
    for cls in (0, 1):
        idxs = by_class[cls]
        order.extend(idxs)
        short = target - len(idxs)
        if short > 0:
            extra = rng.substream("extra", cls).integers(short, len(idxs))
            order.extend(idxs[j] for j in extra)
    return [order[i] for i in rng.substream("shuffle").permutation(len(order))]


def normalize_pixels(gray255: np.ndarray) -> np.ndarray:
    return ((gray255.astype(DTYPE) / 255.0) - DTYPE(PIXEL_MEAN)) / DTYPE(PIXEL_STD)


def augment(clip96: np.ndarray, rng: Rng, train: bool) -> np.ndarray:
    """96x96 mouth sequence -> normalized 88x88 clip.

    Train mode picks one crop offset in {0..8}^2 shared by all frames and
    flips the whole clip horizontally with probability 0.5. Eval mode is the
    deterministic center crop (4, 4) with no flip.
    """
    if clip96.shape[1] < CROP_SIZE or clip96.shape[2] < CROP_SIZE:
        raise ValueError(f"augment input spatial extent {clip96.shape[1:3]} is below 88x88")
    margin = clip96.shape[1] - CROP_SIZE
    if train:
        oy = rng.integer(margin + 1)
        ox = rng.integer(margin + 1)
        flip = rng.uniform(()) < 0.5
    else:
        oy = ox = margin // 2
        flip = False
    clip = clip96[:, oy : oy + CROP_SIZE, ox : ox + CROP_SIZE, :]
    if flip:
        clip = clip[:, :, ::-1, :]
    return normalize_pixels(clip)


# ---------------------------------------------------------------------------
# early stopping

class EarlyStopper:
    """Stop after `patience` consecutive epochs without an improvement
    strictly greater than `min_delta` over the best validation loss."""

    def __init__(self, patience: int, min_delta: float):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.bad = 0

    def update(self, loss: float, epoch: int) -> tuple:
        """Returns (is_new_best, should_stop)."""
        if self.best - loss > self.min_delta or not np.isfinite(self.best):
            self.best = loss
            self.best_epoch = epoch
            self.bad = 0
            return True, False
        self.bad += 1
        return False, self.bad >= self.patience


def early_stop(val_losses, patience: int = 10, min_delta: float = 1e-4) -> dict:
    """Replay a validation-loss history; returns the stop epoch (1-based, or
    None if training would continue) and the best epoch."""
    if len(val_losses) == 0:
        raise ValueError("history must be non-empty")
    stopper = EarlyStopper(patience, min_delta)
    stopped_at = None
    for epoch, loss in enumerate(val_losses, start=1):
        _, stop = stopper.update(float(loss), epoch)
        if stop:
            stopped_at = epoch
            break
    return {"stop_epoch": stopped_at, "best_epoch": stopper.best_epoch}


# ---------------------------------------------------------------------------
# shared loop machinery

def split_train_val(samples: list, fraction: float, rng: Rng) -> tuple:
    """Video-level split; validation gets ceil(fraction * n), at least 1 when
    there are at least 2 videos."""
    n = len(samples)
    order = rng.permutation(n)
    n_val = min(n - 1, max(1, int(np.ceil(fraction * n)))) if n > 1 else 0
    val_idx = set(int(i) for i in order[:n_val])
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def _window_index(sample, rng: Rng) -> int:
    """One clip window per video per epoch, chosen uniformly when the video
    is long enough to hold several."""
    n = len(sample.windows)
    return rng.integer(n) if n > 1 else 0


def _batch_clips(samples, idxs, rng, epoch, train_aug):
    clips = []
    for i in idxs:
        sub = rng.substream("aug", epoch, int(i))
        window = samples[i].windows[_window_index(samples[i], sub)]
        clips.append(augment(window, sub, train_aug))
    return np.stack(clips)


def _mean_val_loss(model, samples, head, loss_fn, labels_of, batch_size):
    total, count = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        clips = np.stack([augment(s.windows[0], Rng(0), train=False) for s in chunk])
        logits = model.forward(clips, head=head)
        loss, _ = loss_fn(logits if head == "lipread" else logits[:, 0], labels_of(chunk))
        total += loss * len(chunk)
        count += len(chunk)
    return total / max(count, 1)


def _log_row(epoch, train_loss, val_loss, lr, started):
    return {
        "epoch": epoch,
        "trainLoss": round(float(train_loss), 8),
        "valLoss": round(float(val_loss), 8),
        "lr": lr,
        "seconds": round(time.perf_counter() - started, 3),
    }


# ---------------------------------------------------------------------------
# phase 1: word-classification pretraining

def pretrain_lipreading(samples: list, model_cfg: ModelConfig, train_cfg: TrainConfig,
                        seed: int) -> tuple:
    """Train extractor, temporal net, and word head jointly with cross
    entropy. Returns (model at best validation loss, best snapshot, log rows).
    """
    if not samples:
        raise ValueError("empty pretraining dataset")
    n_classes = len({s.word_label for s in samples})
    if n_classes < 2 or model_cfg.lipread_classes < 2:
        raise ValueError("lipreading pretraining needs at least 2 word classes")

    model = Model(model_cfg, seed)
    rng = Rng(seed).substream("pretrain")
    train, val = split_train_val(samples, train_cfg.val_fraction, rng.substream("valsplit"))
    opt = Adam(train_cfg)
    stopper = EarlyStopper(train_cfg.patience, train_cfg.min_delta)
    best_snapshot = model.store.snapshot()
    log = []

    for epoch in range(1, train_cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.substream("shuffle", epoch).permutation(len(train))
        losses = []
        for step, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            idxs = order[start : start + train_cfg.batch_size]
            clips = _batch_clips(train, idxs, rng, epoch, train_cfg.augment)
            labels = np.array([train[i].word_label for i in idxs])
            logits = model.forward(clips, head="lipread", extractor_train=True,
                                   temporal_train=True, rng=rng.substream("drop", epoch, step))
            loss, dlogits = ce_loss(logits, labels)
            grads = model.backward(dlogits)
            opt.step(model.store.trainable_params(), grads)
            losses.append(loss)
        val_loss = _mean_val_loss(model, val or train, "lipread", ce_loss,
                                  lambda c: [s.word_label for s in c], train_cfg.batch_size)
        log.append(_log_row(epoch, np.mean(losses), val_loss, train_cfg.learning_rate, started))
        is_best, stop = stopper.update(val_loss, epoch)
        if is_best:
            best_snapshot = model.store.snapshot()
        if stop:
            break

    model.store.load_snapshot(best_snapshot)
    return model, best_snapshot, log


# ---------------------------------------------------------------------------
# phase 2: forgery finetuning

FINETUNE_MODES = ("frozen", "ft_whole", "scratch")


def finetune_forgery(samples: list, pretrained: dict | None, mode: str,
                     model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int) -> tuple:
    """Binary finetuning on real/fake clips.

    frozen    load pretrained extractor + temporal net, train temporal net and
              a freshly initialized binary head; the extractor never updates.
    ft_whole  same initialization but the extractor trains too.
    scratch   random initialization everywhere, pretrained checkpoint ignored.
    """
    if mode not in FINETUNE_MODES:
        raise ValueError(f"mode must be one of {FINETUNE_MODES}")
    labels_present = {int(s.label) for s in samples}
    if labels_present != {0, 1}:
        raise ValueError("finetuning needs both real and fake samples")
    if mode in ("frozen", "ft_whole"):
        if pretrained is None:
            raise ValueError(f"mode {mode!r} requires a pretrained checkpoint")

    model = Model(model_cfg, seed)
    if mode in ("frozen", "ft_whole"):
        model.store.load_snapshot(pretrained, partitions=("featureExtractor", "temporalNet"))
    model.store.trainable["featureExtractor"] = mode != "frozen"
    model.store.trainable["lipreadHead"] = False

    rng = Rng(seed).substream("finetune")
    train, val = split_train_val(samples, train_cfg.val_fraction, rng.substream("valsplit"))
    opt = Adam(train_cfg)
    stopper = EarlyStopper(train_cfg.patience, train_cfg.min_delta)
    best_snapshot = model.store.snapshot()
    log = []

    # With a frozen extractor and no crop augmentation the embeddings are a
    # pure function of each clip window, so compute them once and train on them.
    cache_embeddings = mode == "frozen" and not train_cfg.augment
    if cache_embeddings:
        train_emb = _embed_windows(model, train, train_cfg.batch_size)
        val_emb = None
        if val:
            val_emb = np.stack([e[0] for e in _embed_windows(model, val, train_cfg.batch_size)])

    for epoch in range(1, train_cfg.max_epochs + 1):
        started = time.perf_counter()
        if train_cfg.oversample:
            order = oversample_epoch(train, rng.substream("oversample", epoch))
        else:
            order = list(rng.substream("shuffle", epoch).permutation(len(train)))
        losses = []
        for step, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            idxs = order[start : start + train_cfg.batch_size]
            labels = np.array([train[i].label for i in idxs], dtype=DTYPE)
            drop_rng = rng.substream("drop", epoch, step)
            if cache_embeddings:
                emb = np.stack([
                    train_emb[i][_window_index(train[i], rng.substream("aug", epoch, int(i)))]
                    for i in idxs
                ])
                logits = model.forward_temporal(emb, head="forgery", train=True, rng=drop_rng)
            else:
                clips = _batch_clips(train, idxs, rng, epoch, train_cfg.augment)
                logits = model.forward(clips, head="forgery",
                                       extractor_train=mode != "frozen",
                                       temporal_train=True, rng=drop_rng)
            loss, dlogits = bce_loss(logits[:, 0], labels)
            grads = model.backward(np.asarray(dlogits, dtype=DTYPE)[:, None])
            opt.step(model.store.trainable_params(), grads)
            losses.append(loss)
        if val:
            if cache_embeddings:
                logits = _temporal_logits(model, val_emb, train_cfg.batch_size)
                val_loss, _ = bce_loss(logits, np.array([s.label for s in val], dtype=DTYPE))
            else:
                val_loss = _mean_val_loss(model, val, "forgery", bce_loss,
                                          lambda c: np.array([s.label for s in c], dtype=DTYPE),
                                          train_cfg.batch_size)
        else:
            val_loss = float(np.mean(losses))
        log.append(_log_row(epoch, np.mean(losses), val_loss, train_cfg.learning_rate, started))
        is_best, stop = stopper.update(val_loss, epoch)
        if is_best:
            best_snapshot = model.store.snapshot()
        if stop:
            break

    model.store.load_snapshot(best_snapshot)
    return model, best_snapshot, log


def _embed_windows(model: Model, samples, batch_size) -> list:
    """Eval-mode embeddings for every cached window; one [n_i, T, D] array
    per sample."""
    clips = [augment(w, Rng(0), train=False) for s in samples for w in s.windows]
    embs = []
    for start in range(0, len(clips), batch_size):
        embs.append(model.forward_embeddings(np.stack(clips[start : start + batch_size])))
    flat = np.concatenate(embs) if embs else np.zeros((0,))
    out, at = [], 0
    for s in samples:
        out.append(flat[at : at + len(s.windows)])
        at += len(s.windows)
    return out


def _temporal_logits(model: Model, emb: np.ndarray, batch_size) -> np.ndarray:
    outs = [
        model.forward_temporal(emb[s : s + batch_size], head="forgery")[:, 0]
        for s in range(0, len(emb), batch_size)
    ]
    return np.concatenate(outs)
