"""Two-stage training on toy denoising, then restoration metrics and ratios.

Tiny sizes keep this to a couple of minutes on one CPU core.
"""

import tempfile

from freqrestore import parse_task
from freqrestore import train as TR
from freqrestore.dformer import DformerConfig
from freqrestore.rformer import RformerConfig

task = parse_task("noise:25")
cfg = TR.TrainConfig(stage1_epochs=2, stage2_epochs=12, steps_per_epoch=10, batch_size=4, queue_size=64,
                     pool_size=32, lr2=1e-3, seed=0)
dcfg = DformerConfig(dim0=8, heads=[2, 2], repr_dim=32)
rcfg = RformerConfig(dims=[8, 16], heads=[2, 2], bottleneck_heads=2, repr_dim=32)

with tempfile.TemporaryDirectory() as out:
    result = TR.train(cfg, [task], dcfg, rcfg, out_dir=out)
    for entry in result.log:
        rec = "-" if entry["l_rec"] is None else f"{entry['l_rec']:.4f}"
        print(f"stage {entry['stage']} epoch {entry['epoch']:2d}  l_cl {entry['l_cl']:.3f}  l_rec {rec}")
    dformer, rformer = TR.load_models(f"{out}/final.ckpt")

for row in TR.evaluate(dformer, rformer, [task], n_pairs=5, seed=1):
    print(f"{row['task']}: PSNR {row['psnr_in']:.2f} -> {row['psnr_out']:.2f} dB, "
          f"SSIM {row['ssim_in']:.3f} -> {row['ssim_out']:.3f}")

for row in TR.modulation_report(dformer, rformer, [parse_task("noise:15"), parse_task("noise:50")], samples=4):
    print(f"{row['task']}: embedded M1 {row['M1']:+.5f}")
