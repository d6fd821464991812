"""
Ranking competing models into one score
=======================================

Fold metrics from different architectures land in one CSV; the ranking
turns them into confidence-weighted, normalized shares and a single
ordering. The package bundles a seventeen-model comparison (accuracy and
throughput columns) to demonstrate the full path.
"""

from pathlib import Path

from earnet import ranking as R

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

# the bundled comparison, rendered in the input CSV schema
csv_text = R.demo_comparison_csv()
print("input schema:", csv_text.splitlines()[0])
print("sample row: ", csv_text.splitlines()[1])

table = R.parse_ranking_text(csv_text)
print(f"{len(table.models)} models, classes: {table.classes or '(accuracy-only)'}")

# every normalized column sums to one across models; the throughput share
# of the fastest entry is 80 frames out of the 455 total
shares = R.rsn_fps([m.fps for m in table.models])
print(f"fastest model's throughput share: {shares[0]:.6f} (= 80/455)")

# equal weights over the six columns unless told otherwise
result = R.ors(table)
print(R.format_ranking(result))

# write the output schema next to the input for inspection
R.write_ranking_csv(result, out_dir / "ranking.csv")
print("wrote", out_dir / "ranking.csv")

# weighting throughput to zero reshuffles the order: accuracy alone decides
acc_only = R.ors(table, alpha=(0, 0, 0, 0, 1, 0))
print("accuracy-only winner:", acc_only.rows[0].model)
