"""Why the +1/-1 calibration offset matters for generalized zero-shot prediction."""

import numpy as np

from zslt import numerics as nx
from zslt.metrics import fuse_predict, harmonic_mean
from zslt.numerics import Tensor
from zslt.objectives import ClassSemanticBank, calibrated_logits, l_sc

# Three seen and two unseen classes with one-hot semantics.
bank = ClassSemanticBank(Tensor(np.eye(5)), [True, True, True, False, False])

# An uninformative embedding: the offset alone shifts mass to unseen classes.
zero = Tensor(np.zeros((1, 5)))
p = nx.softmax_rows(calibrated_logits(zero, bank)).data[0]
print("calibrated probabilities", p.round(4))
print("self-calibration loss", round(l_sc(zero, bank).item(), 3))

# A weak seen-class preference loses to the offset in GZSL; CZSL never sees it.
emb = np.array([0.8, 0.0, 0.0, 0.1, 0.0])
print("GZSL without offset ->", fuse_predict(emb, emb, 0.9, bank, "gzsl", calibrate=False).index)
print("GZSL with offset    ->", fuse_predict(emb, emb, 0.9, bank, "gzsl").index)
print("CZSL                ->", fuse_predict(emb, emb, 0.9, bank, "czsl").index)

# U, S and their harmonic mean.
for u, s in [(67.5, 73.6), (64.6, 82.7), (90.0, 10.0)]:
    print(f"U={u} S={s} H={harmonic_mean(u, s):.2f}")
