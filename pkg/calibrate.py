"""Scratch calibration of the synthetic-detection pipeline (not part of the package)."""
import sys
import time

import numpy as np

from mouthnet.evaluation import roc_auc, score_dataset
from mouthnet.model import desk_config
from mouthnet.synthetic import SynthConfig, gen_forgery, gen_lipreading
from mouthnet.training import TrainConfig, finetune_forgery, pretrain_lipreading, augment
from mouthnet.rng import Rng

n_lip = int(sys.argv[1]) if len(sys.argv) > 1 else 100
n_train = int(sys.argv[2]) if len(sys.argv) > 2 else 100
n_test = int(sys.argv[3]) if len(sys.argv) > 3 else 50
epochs = int(sys.argv[4]) if len(sys.argv) > 4 else 10

t0 = time.time()
lip = gen_lipreading(SynthConfig(num_videos=n_lip, vocab=4, seed=101))
print(f"[{time.time()-t0:.0f}s] lipreading corpus: {n_lip}")

mcfg = desk_config()
tcfg = TrainConfig(batch_size=4, learning_rate=2e-3, max_epochs=epochs, patience=10,
                   augment=True)
model, snap, log = pretrain_lipreading(lip, mcfg, tcfg, seed=7)
for row in log:
    print("   ", row)
print(f"[{time.time()-t0:.0f}s] pretrained")

# train accuracy
from mouthnet.training import ce_loss
correct = 0
for s in lip:
    clips = np.stack([augment(s.windows[0], Rng(0), train=False)])
    logits = model.forward(clips, head="lipread")
    correct += int(np.argmax(logits[0]) == s.word_label)
print(f"train accuracy: {correct / len(lip):.3f}")

train = gen_forgery(SynthConfig(num_videos=n_train, seed=202))
test = gen_forgery(SynthConfig(num_videos=n_test, seed=303))
print(f"[{time.time()-t0:.0f}s] forgery corpora")

ft_cfg = TrainConfig(batch_size=8, learning_rate=2e-3, max_epochs=40, patience=10,
                     augment=False)
det, _, ft_log = finetune_forgery(train, snap, "frozen", mcfg, ft_cfg, seed=9)
print(f"[{time.time()-t0:.0f}s] finetuned; {len(ft_log)} epochs; last: {ft_log[-1]}")
scored = score_dataset(det, test)
auc = roc_auc([v.video_score for v in scored], [v.label for v in scored]).auc
print(f"held-out AUC (jitter): {auc:.4f}")

null_train = gen_forgery(SynthConfig(num_videos=n_train, artefact_strength=0.0, seed=404))
null_test = gen_forgery(SynthConfig(num_videos=n_test, artefact_strength=0.0, seed=505))
det0, _, _ = finetune_forgery(null_train, snap, "frozen", mcfg, ft_cfg, seed=11)
scored0 = score_dataset(det0, null_test)
auc0 = roc_auc([v.video_score for v in scored0], [v.label for v in scored0]).auc
print(f"held-out AUC (strength 0): {auc0:.4f}")
print(f"[{time.time()-t0:.0f}s] done")
