"""Probe re-check with single-frame embeddings (scratch)."""
import time
from pathlib import Path

import numpy as np

from mouthnet import checkpoint
from mouthnet.evaluation import frame_probe_auc, roc_auc, score_dataset
from mouthnet.model import Model, desk_config
from mouthnet.synthetic import SynthConfig, gen_forgery, gen_lipreading
from mouthnet.training import TrainConfig, finetune_forgery, pretrain_lipreading

t0 = time.time()
mcfg = desk_config()
cache = Path("/tmp/pretrained_desk.lfw")
if cache.exists():
    snap = checkpoint.load_tensors(cache)
    print(f"[{time.time()-t0:.0f}s] loaded cached pretrain", flush=True)
else:
    lip = gen_lipreading(SynthConfig(num_videos=200, vocab=4, seed=1001))
    pre_cfg = TrainConfig(batch_size=4, learning_rate=2e-3, max_epochs=10, patience=10,
                          augment=True)
    model, snap, log = pretrain_lipreading(lip, mcfg, pre_cfg, seed=2001)
    checkpoint.save_tensors(cache, snap)
    print(f"[{time.time()-t0:.0f}s] pretrained and cached", flush=True)

train = gen_forgery(SynthConfig(num_videos=400, seed=3001))
test = gen_forgery(SynthConfig(num_videos=100, seed=4001))
print(f"[{time.time()-t0:.0f}s] corpora", flush=True)

ft_cfg = TrainConfig(batch_size=8, learning_rate=2e-3, max_epochs=40, patience=10,
                     augment=False)
det, _, _ = finetune_forgery(train, snap, "frozen", mcfg, ft_cfg, seed=5001)
scored = score_dataset(det, test)
auc = roc_auc([v.video_score for v in scored], [v.label for v in scored]).auc
print(f"[{time.time()-t0:.0f}s] jitter AUC: {auc:.4f}", flush=True)

probe = frame_probe_auc(det, train, test, seed=6001)
print(f"[{time.time()-t0:.0f}s] single-frame probe AUC: {probe:.4f}", flush=True)
