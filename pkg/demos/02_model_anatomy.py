"""
Model anatomy: stages, fusion, heads
====================================

Walk the network at full scale once, printing every feature-map shape on
the way, then show how the config scales the whole family down.
"""

import numpy as np

from earnet import tensor as T
from earnet.bench import count_params
from earnet.model import ModelConfig, build_best_earnet, build_shufflenet_baseline, with_num_classes

# the default config is the full-scale nine-class network
cfg = ModelConfig()
model = build_best_earnet(cfg, seed=0)
model.eval()
print(f"parameters: {count_params(model):,}")

x = T.Tensor(np.random.default_rng(0).normal(size=(1, 3, 224, 224)).astype(np.float32))
out = model(x)
for name in ("stem", "stage2", "stage3", "stage4", "flow", "fhigh"):
    print(f"{name:>7}: {out.stages[name].shape}")
print(f"  fused: {out.lgsff_out.shape}")
print(f"  heads: {out.logits1.shape} {out.logits2.shape} {out.logits3.shape}")

# predictions come from the last head only; the other two are train-time aids
probs = np.exp(out.logits3.numpy()) / np.exp(out.logits3.numpy()).sum()
print("argmax class:", int(np.argmax(probs)))

# width_multiplier shrinks every channel count; input_size must divide by 32
small = build_best_earnet(ModelConfig(width_multiplier=0.25, input_size=64), seed=0)
print(f"quarter-width parameters: {count_params(small):,}")

# the plain single-head backbone it improves on, at its usual 1000-way head
baseline = build_shufflenet_baseline(with_num_classes(ModelConfig(), 1000), seed=0)
print(f"baseline parameters: {count_params(baseline):,}")
