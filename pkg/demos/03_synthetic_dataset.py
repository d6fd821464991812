"""
Synthetic otoscopic-style data
==============================

The package cannot ship clinical photographs, so it generates a seeded
stand-in: nine visually distinct classes with ring, blob, and streak
structure under a canal-style vignette. This script writes a sample grid
and shows the sharpness gate that later filters blurry frames.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from earnet.data import (
    CLASS_ABBREVIATIONS,
    calibrate_sharpness_gate,
    preprocess,
    sharpness,
    synth_dataset,
    synth_generate,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

# one seeded call produces the whole labeled set, byte-identical per seed
images, labels = synth_dataset(n_per_class=4, seed=0, size=96)
print("images:", images.shape, images.dtype, "labels:", np.bincount(labels))

# tile one row per class
rows = []
for c in range(9):
    rows.append(np.concatenate(list(images[labels == c]), axis=1))
grid = np.concatenate(rows, axis=0)
Image.fromarray(grid).save(out_dir / "class_grid.png")
print("wrote", out_dir / "class_grid.png", "rows are", ", ".join(CLASS_ABBREVIATIONS))

# preprocess resizes and normalizes to the network's input statistics
tensor = preprocess(images[0], size=64)
print("preprocessed:", tensor.shape, tensor.dtype, f"mean {tensor.mean():+.3f}")

# sharpness falls when a frame blurs; the gate threshold comes from data
crisp = images[0]
blurred = np.asarray(Image.fromarray(crisp).resize((24, 24)).resize((96, 96)))
print(f"sharpness crisp {sharpness(crisp):.1f} vs blurred {sharpness(blurred):.1f}")
gate = calibrate_sharpness_gate(images[:12])
print(f"calibrated gate (10th percentile): {gate:.1f}")

# the same generator can also write a folder-per-class tree for the trainer
n = synth_generate(out_dir / "synth_tree", n_per_class=2, size=64, seed=1)
print("wrote", n, "files under", out_dir / "synth_tree")
