"""Export the attribute-to-region attention of a briefly trained model."""

import tempfile
from pathlib import Path

import numpy as np

from zslt.config import build_config
from zslt.data_io import generate_synthetic
from zslt.metrics import export_attention, read_attention
from zslt.training import run_train

cfg = build_config({"model.d": "32", "train.epochs": "15", "train.seed": "2", "synth.seed": "2"})
bundle = generate_synthetic(cfg.synth)
state = run_train(cfg, bundle).state

image = int(bundle.test_unseen_idx[0])
image_id = bundle.image_ids[image]
out = state.forward(bundle.features[image])
per_image = {image_id: {"attn": out.avt.attn.numpy(), "psi": out.psi.numpy(), "Psi": out.Psi.numpy()}}

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "attn.jsonl"
    export_attention(path, per_image, [image_id], bundle.vocab.names, bundle.grid_shape, top_k=3)
    records = read_attention(path)

# The generator remembers where it planted each attribute (-1 when the class lacks it).
planted = bundle.extras["planted_regions"][image]
for rec in records:
    a = bundle.vocab.names.index(rec["attribute_name"])
    peak = int(np.argmax(rec["attention"]))
    where = planted[a] if planted[a] >= 0 else "absent"
    print(f"{rec['attribute_name']}: psi {rec['psi_score']:+.3f}  peak region {peak}  planted at {where}")

hits = [int(np.argmax(out.avt.attn.numpy()[a])) == planted[a] for a in np.flatnonzero(planted >= 0)]
print(f"peak attention lands on the planted region for {sum(hits)}/{len(hits)} present attributes")
