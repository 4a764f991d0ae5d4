"""Which part of the spectrum each synthetic degradation disturbs."""

from freqrestore import freq_analysis as F
from freqrestore import parse_task

tasks = [parse_task(t) for t in ("noise:25", "rain", "haze", "blur")]
rows = F.analyze(tasks, n_pairs=20, size=64, seed=0)
summary = F.direction_summary(rows)

print(f"{'kind':>6}  {'pairs':>5}  {'high share up':>13}  {'mean change':>11}")
for kind, s in summary.items():
    print(f"{kind:>6}  {s['n']:5d}  {s['frac_increased']:13.0%}  {s['mean_delta']:+11.4f}")

# residual histogram of the first noise pair: energy spread towards high radii
bins = rows[0][8:]
print("noise residual histogram (20 radius bins):", " ".join(f"{b:.2f}" for b in bins))
