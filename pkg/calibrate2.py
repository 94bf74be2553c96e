"""Full-scale calibration matching the acceptance setup (scratch file)."""
import time

import numpy as np

from mouthnet.evaluation import frame_probe_auc, roc_auc, score_dataset
from mouthnet.model import desk_config
from mouthnet.rng import Rng
from mouthnet.synthetic import SynthConfig, gen_forgery, gen_lipreading
from mouthnet.training import TrainConfig, augment, finetune_forgery, pretrain_lipreading

t0 = time.time()
lip = gen_lipreading(SynthConfig(num_videos=200, vocab=4, seed=1001))
print(f"[{time.time()-t0:.0f}s] lipreading corpus 200", flush=True)

mcfg = desk_config()
pre_cfg = TrainConfig(batch_size=4, learning_rate=2e-3, max_epochs=10, patience=10,
                      augment=True)
model, snap, log = pretrain_lipreading(lip, mcfg, pre_cfg, seed=2001)
for row in log:
    print("   ", row, flush=True)

correct = 0
for s in lip:
    clips = np.stack([augment(s.windows[0], Rng(0), train=False)])
    logits = model.forward(clips, head="lipread")
    correct += int(np.argmax(logits[0]) == s.word_label)
print(f"[{time.time()-t0:.0f}s] train accuracy: {correct / len(lip):.3f}", flush=True)

train = gen_forgery(SynthConfig(num_videos=400, seed=3001))
test = gen_forgery(SynthConfig(num_videos=100, seed=4001))
print(f"[{time.time()-t0:.0f}s] jitter corpora", flush=True)

ft_cfg = TrainConfig(batch_size=8, learning_rate=2e-3, max_epochs=40, patience=10,
                     augment=False)
det, _, ftlog = finetune_forgery(train, snap, "frozen", mcfg, ft_cfg, seed=5001)
scored = score_dataset(det, test)
auc = roc_auc([v.video_score for v in scored], [v.label for v in scored]).auc
print(f"[{time.time()-t0:.0f}s] jitter AUC: {auc:.4f} ({len(ftlog)} ft epochs)", flush=True)

probe = frame_probe_auc(det, train, test, seed=6001)
print(f"[{time.time()-t0:.0f}s] frame probe AUC: {probe:.4f}", flush=True)

null_train = gen_forgery(SynthConfig(num_videos=400, artefact_strength=0.0, seed=3001))
null_test = gen_forgery(SynthConfig(num_videos=100, artefact_strength=0.0, seed=4001))
det0, _, _ = finetune_forgery(null_train, snap, "frozen", mcfg, ft_cfg, seed=5001)
scored0 = score_dataset(det0, null_test)
auc0 = roc_auc([v.video_score for v in scored0], [v.label for v in scored0]).auc
print(f"[{time.time()-t0:.0f}s] null AUC: {auc0:.4f}", flush=True)
print(f"[{time.time()-t0:.0f}s] done", flush=True)
