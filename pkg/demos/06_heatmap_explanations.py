"""
Gradient-weighted heatmaps over the fused features
==================================================

Where does the class evidence sit in the image? Backpropagate one class
logit to the fusion output, weight the activations, and paint the result
over the input frame.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from earnet.data import preprocess, synth_image
from earnet.gradcam import grad_cam, overlay, save_png
from earnet.model import ModelConfig, build_best_earnet
from earnet.tensor import Tensor

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = ModelConfig(width_multiplier=0.25, input_size=64)
model = build_best_earnet(cfg, seed=0)
model.eval()

# one synthetic frame, class 4 (dense cerumen-style blobs)
frame = synth_image(4, np.random.default_rng(3), size=64)
x = preprocess(frame, size=64)[None]

# heatmap against the predicted class at the fusion layer (the default)
pred = int(model.predict(Tensor(x))[0])
heat = grad_cam(model, x, target_class=pred)
print(f"predicted class {pred}, map {heat.values.shape} from layer {heat.layer!r}, "
      f"peak {heat.values.max():.2f}, all_zero={heat.all_zero}")

# the map is already at input resolution; blending needs only an alpha
blended = overlay(heat, frame, alpha=0.5)
Image.fromarray(frame).save(out_dir / "frame.png")
save_png(blended, out_dir / "frame_heatmap.png")
print("wrote", out_dir / "frame_heatmap.png")

# any recorded stage works as the target layer
for layer in ("stage2", "stage4"):
    stage_heat = grad_cam(model, x, target_class=pred, layer=layer)
    print(f"{layer}: source {stage_heat.source_size}, map {stage_heat.values.shape}")

# asking for a different class asks a different question of the same frame
other = grad_cam(model, x, target_class=(pred + 1) % 9)
delta = np.abs(other.values - heat.values).max()
print(f"largest per-cell difference against class {(pred + 1) % 9}: {delta:.3f}")
