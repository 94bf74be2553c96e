"""Model assembly: spatio-temporal feature extractor, multi-scale temporal
convolutional network, task heads, and the partitioned parameter store.

Parameter partitions:
    featureExtractor  ResNet-18 trunk behind a 3-D convolutional front-end;
                      one embedding per input frame.
    temporalNet       stack of multi-branch dilated 1-D convolution blocks.
    lipreadHead       linear classifier over word classes.
    forgeryHead       linear real/fake classifier (single logit).

Tensor names are "partition/block/layer/tensor" paths, e.g.
"temporalNet/block2/branch5/conv1/weight".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import checkpoint
from .layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Conv3d,
    Conv3dSliced,
    Dropout,
    Linear,
    MaxPool2d,
    PReLU,
    ReLU,
    SpatialMean,
    TemporalMean,
    kaiming_uniform,
)
from .rng import Rng
from .tensorops import DTYPE

PARTITIONS = ("featureExtractor", "temporalNet", "lipreadHead", "forgeryHead")

# Front-end geometry: preserves the temporal extent, halves space twice.
FRONTEND_KERNEL = (5, 7, 7)
FRONTEND_STRIDE = (1, 2, 2)
FRONTEND_PAD = (2, 3, 3)


@dataclass
class ModelConfig:
    clip_len: int = 25
    input_size: int = 88
    base_width: int = 64
    mstcn_blocks: int = 4
    branch_kernels: tuple = (3, 5, 7)
    branch_width: int = 256
    dropout: float = 0.2
    lipread_classes: int = 500

    @property
    def embed_dim(self) -> int:
        return self.base_width * 8

    @property
    def mstcn_out(self) -> int:
        return self.branch_width * len(self.branch_kernels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_kernels"] = list(self.branch_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "branch_kernels" in d:
            d["branch_kernels"] = tuple(d["branch_kernels"])
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    """Small configuration used by the synthetic-data experiments and tests."""
    base = dict(base_width=8, branch_width=8, lipread_classes=4)
    base.update(overrides)
    return ModelConfig(**base)


class ParameterStore:
    """Named tensors split into partitions with per-partition trainable flags.

    Arrays are registered by reference, so in-place updates through the store
    are visible to the layers that own them.
    """

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.trainable = {p: True for p in PARTITIONS}

    def register(self, partition: str, name: str, arr: np.ndarray, buffer: bool = False):
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        full = f"{partition}/{name}"
        if full in self._params or full in self._buffers:
            raise ValueError(f"duplicate parameter name {full!r}")
        (self._buffers if buffer else self._params)[full] = arr

    @staticmethod
    def partition_of(name: str) -> str:
        return name.split("/", 1)[0]

    def named_params(self, partition=None) -> dict:
        if partition is None:
            return dict(self._params)
        return {k: v for k, v in self._params.items() if self.partition_of(k) == partition}

    def named_tensors(self) -> dict:
        out = dict(self._params)
        out.update(self._buffers)
        return out

    def trainable_params(self) -> dict:
        return {
            k: v for k, v in self._params.items() if self.trainable[self.partition_of(k)]
        }

    def snapshot(self, partition=None) -> dict:
        return {
            k: v.copy()
            for k, v in self.named_tensors().items()
            if partition is None or self.partition_of(k) == partition
        }

    def load_snapshot(self, snap: dict, partitions=None) -> None:
        """Copy values into the registered arrays in place."""
        everything = self.named_tensors()
        for name, value in snap.items():
            if partitions is not None and self.partition_of(name) not in partitions:
                continue
            if name not in everything:
                raise ValueError(f"checkpoint tensor {name!r} does not exist in this model")
            dst = everything[name]
            if dst.shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {value.shape} vs model {dst.shape}"
                )
            dst[...] = value

    def param_counts(self) -> dict:
        counts = {p: 0 for p in PARTITIONS}
        for name, arr in self._params.items():
            counts[self.partition_of(name)] += arr.size
        return counts


class BasicBlock:
    """Standard two-conv residual block with optional strided 1x1 downsample."""

    def __init__(self, c_in, c_out, stride, rng: Rng, dtype=DTYPE):
        self.conv1 = Conv2d(c_in, c_out, 3, stride, 1, rng=rng.substream("c1"), dtype=dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(c_out, c_out, 3, 1, 1, rng=rng.substream("c2"), dtype=dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, stride, 0, rng=rng.substream("d"), dtype=dtype)
            self.down_bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.down_conv = None
            self.down_bn = None
        self.relu_out = ReLU()

    def named_layers(self):
        items = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.down_conv is not None:
            items += [("down/conv", self.down_conv), ("down/bn", self.down_bn)]
        return items

    def forward(self, x, train=False):
        identity = x
        y = self.conv1.forward(x, train)
        y = self.bn1.forward(y, train)
        y = self.relu1.forward(y, train)
        y = self.conv2.forward(y, train)
        y = self.bn2.forward(y, train)
        if self.down_conv is not None:
            identity = self.down_conv.forward(x, train)
            identity = self.down_bn.forward(identity, train)
        return self.relu_out.forward(y + identity, train)

    def backward(self, dy):
        d = self.relu_out.backward(dy)
        dmain = self.bn2.backward(d)
        dmain = self.conv2.backward(dmain)
        dmain = self.relu1.backward(dmain)
        dmain = self.bn1.backward(dmain)
        dmain = self.conv1.backward(dmain)
        if self.down_conv is not None:
            dskip = self.down_bn.backward(d)
            dskip = self.down_conv.backward(dskip)
        else:
            dskip = d
        return dmain + dskip


class FeatureExtractor:
    """Frame-sequence encoder: 3-D front-end, per-frame 2-D residual trunk,
    spatial global average pooling. [B, T, H, W, 1] -> [B, T, embed_dim]."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=DTYPE):
        w = cfg.base_width
        self.frontend = Conv3dSliced(1, w, FRONTEND_KERNEL, FRONTEND_STRIDE, FRONTEND_PAD,
                                     rng=rng.substream("frontend"), dtype=dtype)
        self.frontend_bn = BatchNorm(w, dtype=dtype)
        self.frontend_relu = ReLU()
        self.pool = MaxPool2d(3, 2, 1)
        widths = [w, 2 * w, 4 * w, 8 * w]
        strides = [1, 2, 2, 2]
        self.stages = []
        c_in = w
        for s_idx, (c_out, stride) in enumerate(zip(widths, strides), start=1):
            blocks = [
                BasicBlock(c_in, c_out, stride, rng.substream(f"s{s_idx}b1"), dtype),
                BasicBlock(c_out, c_out, 1, rng.substream(f"s{s_idx}b2"), dtype),
            ]
            self.stages.append(blocks)
            c_in = c_out
        self.spatial_mean = SpatialMean()

    def named_layers(self):
        items = [("frontend/conv", self.frontend), ("frontend/bn", self.frontend_bn)]
        for s_idx, blocks in enumerate(self.stages, start=1):
            for b_idx, block in enumerate(blocks, start=1):
                for name, layer in block.named_layers():
                    items.append((f"stage{s_idx}/block{b_idx}/{name}", layer))
        return items

    def forward(self, clips, train=False):
        b, t = clips.shape[:2]
        y = self.frontend.forward(clips, train)
        y = self.frontend_bn.forward(y, train)
        y = self.frontend_relu.forward(y, train)
        y = y.reshape(b * t, *y.shape[2:])
        y = self.pool.forward(y, train)
        for blocks in self.stages:
            for block in blocks:
                y = block.forward(y, train)
        emb = self.spatial_mean.forward(y, train)
        return emb.reshape(b, t, -1)

    def backward(self, demb):
        b, t = demb.shape[:2]
        d = self.spatial_mean.backward(demb.reshape(b * t, -1))
        for blocks in reversed(self.stages):
            for block in reversed(blocks):
                d = block.backward(d)
        d = self.pool.backward(d)
        d = d.reshape(b, t, *d.shape[1:])
        d = self.frontend_relu.backward(d)
        d = self.frontend_bn.backward(d)
        return self.frontend.backward(d)


class Branch:
    """Conv1D -> BatchNorm -> PReLU -> Dropout -> Conv1D -> BatchNorm."""

    def __init__(self, c_in, width, kernel, dilation, p, rng: Rng, dtype=DTYPE):
        self.conv1 = Conv1d(c_in, width, kernel, dilation, rng=rng.substream("c1"), dtype=dtype)
        self.bn1 = BatchNorm(width, dtype=dtype)
        self.act = PReLU(width, dtype=dtype)
        self.drop = Dropout(p)
        self.conv2 = Conv1d(width, width, kernel, dilation, rng=rng.substream("c2"), dtype=dtype)
        self.bn2 = BatchNorm(width, dtype=dtype)

    def named_layers(self):
        return [("conv1", self.conv1), ("bn1", self.bn1), ("prelu", self.act),
                ("conv2", self.conv2), ("bn2", self.bn2)]

    def forward(self, x, train=False, rng=None):
        y = self.conv1.forward(x, train)
        y = self.bn1.forward(y, train)
        y = self.act.forward(y, train)
        y = self.drop.forward(y, train, rng)
        y = self.conv2.forward(y, train)
        return self.bn2.forward(y, train)

    def backward(self, dy):
        d = self.bn2.backward(dy)
        d = self.conv2.backward(d)
        d = self.drop.backward(d)
        d = self.act.backward(d)
        d = self.bn1.backward(d)
        return self.conv1.backward(d)


class TemporalBlock:
    """Parallel dilated branches, channel concat, residual add, PReLU."""

    def __init__(self, c_in, kernels, width, dilation, p, rng: Rng, dtype=DTYPE):
        c_out = width * len(kernels)
        self.kernels = tuple(kernels)
        self.width = width
        self.branches = [
            Branch(c_in, width, k, dilation, p, rng.substream(f"k{k}"), dtype)
            for k in kernels
        ]
        if c_in != c_out:
            self.res_conv = Conv1d(c_in, c_out, 1, 1, bias=True, rng=rng.substream("res"),
                                   dtype=dtype)
        else:
            self.res_conv = None
        self.act_out = PReLU(c_out, dtype=dtype)

    def named_layers(self):
        items = []
        for k, branch in zip(self.kernels, self.branches):
            for name, layer in branch.named_layers():
                items.append((f"branch{k}/{name}", layer))
        if self.res_conv is not None:
            items.append(("res/conv", self.res_conv))
        items.append(("prelu", self.act_out))
        return items

    def forward(self, x, train=False, rng=None):
        outs = [
            b.forward(x, train, rng.substream(f"br{i}") if rng is not None else None)
            for i, b in enumerate(self.branches)
        ]
        y = np.concatenate(outs, axis=-1)
        res = x if self.res_conv is None else self.res_conv.forward(x, train)
        return self.act_out.forward(y + res, train)

    def backward(self, dy):
        d = self.act_out.backward(dy)
        dx = self.res_conv.backward(d) if self.res_conv is not None else d.copy()
        for i, branch in enumerate(self.branches):
            sl = d[..., i * self.width : (i + 1) * self.width]
            dx += branch.backward(sl)
        return dx


class MSTCN:
    """Four-block multi-scale temporal network; block b uses dilation 2**(b-1)."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=DTYPE):
        self.blocks = []
        c_in = cfg.embed_dim
        for b in range(cfg.mstcn_blocks):
            block = TemporalBlock(c_in, cfg.branch_kernels, cfg.branch_width, 2 ** b,
                                  cfg.dropout, rng.substream(f"block{b + 1}"), dtype)
            self.blocks.append(block)
            c_in = cfg.mstcn_out

    def named_layers(self):
        items = []
        for b_idx, block in enumerate(self.blocks, start=1):
            for name, layer in block.named_layers():
                items.append((f"block{b_idx}/{name}", layer))
        return items

    def forward(self, x, train=False, rng=None):
        for i, block in enumerate(self.blocks):
            x = block.forward(x, train, rng.substream(f"b{i}") if rng is not None else None)
        return x

    def backward(self, dy):
        for block in reversed(self.blocks):
            dy = block.backward(dy)
        return dy


class Model:
    """Full detector. Heads: "lipread" (word logits) or "forgery" (one logit)."""

    def __init__(self, cfg: ModelConfig, seed: int, dtype=DTYPE):
        self.cfg = cfg
        init = Rng(seed).substream("init")
        self.extractor = FeatureExtractor(cfg, init.substream("extractor"), dtype)
        self.mstcn = MSTCN(cfg, init.substream("mstcn"), dtype)
        self.temporal_mean = TemporalMean()
        self.lipread_head = Linear(cfg.mstcn_out, cfg.lipread_classes,
                                   rng=init.substream("lipread"), dtype=dtype)
        self.forgery_head = Linear(cfg.mstcn_out, 1, rng=init.substream("forgery"), dtype=dtype)
        self.store = ParameterStore()
        self._register("featureExtractor", self.extractor.named_layers())
        self._register("temporalNet", self.mstcn.named_layers())
        self._register("lipreadHead", [("linear", self.lipread_head)])
        self._register("forgeryHead", [("linear", self.forgery_head)])
        self._ran = None

    def _register(self, partition, named_layers):
        for name, layer in named_layers:
            for pname, arr in layer.params().items():
                self.store.register(partition, f"{name}/{pname}", arr)
            for bname, arr in layer.buffers().items():
                self.store.register(partition, f"{name}/{bname}", arr, buffer=True)

    def reinit_head(self, head: str, seed: int) -> None:
        """Fresh random weights for one classifier head."""
        layer = self.lipread_head if head == "lipread" else self.forgery_head
        rng = Rng(seed).substream("head", head)
        layer.weight[...] = kaiming_like(rng, layer.weight)
        layer.bias[...] = 0

    def forward_embeddings(self, clips, train=False):
        if clips.ndim != 5 or clips.shape[2:] != (self.cfg.input_size, self.cfg.input_size, 1):
            raise ValueError(
                f"expected clips [B, T, {self.cfg.input_size}, {self.cfg.input_size}, 1], "
                f"got {list(clips.shape)}"
            )
        return self.extractor.forward(clips, train)

    def forward_temporal(self, emb, head="forgery", train=False, rng=None):
        feat = self.mstcn.forward(emb, train, rng)
        pooled = self.temporal_mean.forward(feat, train)
        layer = self.lipread_head if head == "lipread" else self.forgery_head
        logits = layer.forward(pooled, train)
        self._ran = {"head": head, "extractor": False, "temporal": train}
        return logits

    def forward(self, clips, head="forgery", extractor_train=False, temporal_train=False,
                rng=None):
        emb = self.forward_embeddings(clips, extractor_train)
        logits = self.forward_temporal(emb, head, temporal_train, rng)
        self._ran["extractor"] = extractor_train
        return logits

    def backward(self, dlogits) -> dict:
        """Reverse pass; returns gradients for trainable partitions only."""
        if self._ran is None:
            raise RuntimeError("backward called before a train-mode forward")
        head = self._ran["head"]
        layer = self.lipread_head if head == "lipread" else self.forgery_head
        d = layer.backward(dlogits)
        d = self.temporal_mean.backward(d)
        d = self.mstcn.backward(d)
        if self._ran["extractor"]:
            self.extractor.backward(d)
        grads: dict[str, np.ndarray] = {}
        head_partition = "lipreadHead" if head == "lipread" else "forgeryHead"
        ran_partitions = {"temporalNet", head_partition}
        if self._ran["extractor"]:
            ran_partitions.add("featureExtractor")
        sources = {
            "featureExtractor": self.extractor.named_layers(),
            "temporalNet": self.mstcn.named_layers(),
            "lipreadHead": [("linear", self.lipread_head)],
            "forgeryHead": [("linear", self.forgery_head)],
        }
        for partition in ran_partitions:
            if not self.store.trainable[partition]:
                continue
            for name, lyr in sources[partition]:
                for pname, g in lyr.grads.items():
                    grads[f"{partition}/{name}/{pname}"] = g
        self._ran = None
        return grads


def kaiming_like(rng: Rng, arr: np.ndarray) -> np.ndarray:
    fan_in = int(np.prod(arr.shape[:-1])) or 1
    return kaiming_uniform(rng, arr.shape, fan_in, arr.dtype)


def feature_extract(model: Model, clip: np.ndarray) -> np.ndarray:
    """One clip [T, H, W, 1] -> per-frame embeddings [T, embed_dim]."""
    if clip.ndim != 4:
        raise ValueError(f"expected clip [T, H, W, 1], got {list(clip.shape)}")
    return model.forward_embeddings(clip[None].astype(DTYPE))[0]


def classify(features: np.ndarray, head: Linear) -> np.ndarray:
    """Temporal mean over [T, C] features, then the head's affine map."""
    if features.shape[-1] != head.c_in:
        raise ValueError(f"feature width {features.shape[-1]} != head width {head.c_in}")
    pooled = np.mean(features, axis=0, dtype=np.float64).astype(features.dtype)
    return pooled @ head.weight + head.bias


def count_trainable(model: Model) -> dict:
    """Per-partition and total learnable parameter counts."""
    counts = model.store.param_counts()
    counts["total"] = sum(counts[p] for p in PARTITIONS)
    return counts


def save_model(path, model: Model) -> None:
    """Checkpoint tensors plus a JSON sidecar holding the model config."""
    path = Path(path)
    checkpoint.save_tensors(path, model.store.named_tensors())
    sidecar = {"model": model.cfg.to_dict(), "format": "mouthnet-checkpoint-v1"}
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )


def load_model(path) -> Model:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    cfg = ModelConfig.from_dict(sidecar["model"])
    model = Model(cfg, seed=0)
    model.store.load_snapshot(checkpoint.load_tensors(path))
    return model
