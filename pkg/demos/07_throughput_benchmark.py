"""
Measuring inference throughput
==============================

Single-stream, batch-1, one pinned thread: the number that matters for a
live camera feed. The harness reuses one pre-generated input so allocator
noise stays out of the loop, and reports tail latencies next to the mean.
"""

from pathlib import Path

from earnet.bench import format_report, fps_bench, write_report_csv, write_report_json
from earnet.model import ModelConfig, build_best_earnet

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

# quarter width first: the configuration a weak CPU would actually run
small = build_best_earnet(ModelConfig(width_multiplier=0.25, input_size=64), seed=0)
small.eval()
report = fps_bench(small, input_shape=(1, 3, 64, 64), n_warmup=20, n_iter=100)
print(format_report(report))

# the full-scale network; fewer iterations, it is ~20x more work per frame
full = build_best_earnet(ModelConfig(), seed=0)
full.eval()
full_report = fps_bench(full, n_warmup=5, n_iter=40)
print(format_report(full_report))

write_report_json(full_report, out_dir / "bench.json")
write_report_csv(full_report, out_dir / "bench.csv")
print("wrote", out_dir / "bench.json", "and", out_dir / "bench.csv")
