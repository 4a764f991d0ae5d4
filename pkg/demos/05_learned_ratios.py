"""Free per-layer modulation ratios trained for one noise level at a time.

About four minutes. The ordering of the two ratios only settles after
roughly a hundred epochs; short runs can show it reversed.
"""

from freqrestore import parse_task
from freqrestore import train as TR
from freqrestore.rformer import RformerConfig

cfg = TR.TrainConfig(stage1_epochs=0, stage2_epochs=100, steps_per_epoch=10, batch_size=4, pool_size=16,
                     lr2=1e-3, seed=0)
rcfg = RformerConfig(dims=[8, 16], heads=[2, 2], blocks=[1, 1], bottleneck_heads=2, bottleneck_blocks=1, L=2)

for sigma in (15, 50):
    spec = parse_task(f"noise:{sigma}")
    model, log = TR.train_learned_ratios(spec, cfg, rcfg)
    print(f"sigma {sigma}: l_rec {log[0]['l_rec']:.4f} -> {log[-1]['l_rec']:.4f}, "
          f"mean M1 {log[-1]['ratios'][0]:+.5f}")
