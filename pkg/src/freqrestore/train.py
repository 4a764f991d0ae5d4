"""Losses, the negative queue, AdamW, two-stage training and evaluation.

Stage 1 trains the degradation encoder alone with the contrastive loss
(query/key encoders, momentum updates, a FIFO queue of negatives).
Stage 2 trains encoder and restorer jointly on ``L_cl + L_rec``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .degrade import DegradationSpec, ImagePair, apply, sample_patch, synth_clean
from .dformer import Dformer, DformerConfig, momentum_update
from .errors import ConfigError, ContractError, NumericError
from .metrics import psnr, ssim
from .nn import Module
from .rformer import Rformer, RformerConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

class NegativeQueue:
    """Fixed-size FIFO ring buffer of unit-norm representation vectors."""

    def __init__(self, size: int, dim: int):
        if size < 1:
            raise ContractError("queue size must be >= 1")
        self.buffer = np.zeros((size, dim))
        self.head = 0
        self.filled = 0

    @classmethod
    def random(cls, size: int, dim: int, rng: np.random.Generator) -> "NegativeQueue":
        """Queue pre-filled with random unit vectors."""
        q = cls(size, dim)
        v = rng.normal(size=(size, dim))
        q.enqueue(v / np.linalg.norm(v, axis=1, keepdims=True))
        return q

    @property
    def size(self) -> int:
        return self.buffer.shape[0]

    def enqueue(self, vectors: np.ndarray) -> None:
        vectors = np.atleast_2d(np.asarray(getattr(vectors, "data", vectors), dtype=float))
        norms = np.linalg.norm(vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ContractError("queue entries must be L2-normalised")
        for v in vectors:
            self.buffer[self.head] = v
            self.head = (self.head + 1) % self.size
            self.filled = min(self.filled + 1, self.size)

    def vectors(self) -> np.ndarray:
        """Stored vectors, oldest first."""
        if self.filled < self.size:
            return self.buffer[:self.filled].copy()
        return np.roll(self.buffer, -self.head, axis=0)


def info_nce(d, d_pos, queue: NegativeQueue | np.ndarray, tau: float = 0.07) -> Tensor:
    """MoCo contrastive loss, averaged over the batch.

    ``-log(e^{d.d+/tau} / (e^{d.d+/tau} + sum_neg e^{d.d-/tau}))``; only ``d``
    receives gradients.
    """
    negatives = queue.vectors() if isinstance(queue, NegativeQueue) else np.asarray(queue, dtype=float)
    if len(negatives) == 0:
        raise ContractError("the negative queue is empty")
    if tau <= 0:
        raise ContractError("temperature must be positive")
    d = T.as_tensor(d)
    d_pos = np.asarray(getattr(d_pos, "data", d_pos), dtype=float)
    if d.ndim == 1:
        d = T.reshape(d, (1, -1))
        d_pos = d_pos.reshape(1, -1)
    pos = T.scale(T.sum_(d * d_pos, axis=1, keepdims=True), 1.0 / tau)
    neg = T.scale(d @ negatives.T, 1.0 / tau)
    logits = T.concat([pos, neg], axis=1)
    return T.mean(T.logsumexp(logits, axis=1) - pos[:, 0])


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error (subgradient 0 where pred == target)."""
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ContractError(f"l1_loss shape mismatch {pred.shape} vs {target.shape}")
    return T.mean(T.abs_(pred - target))


def composite_loss(l_cl, l_rec=None):
    """``L_cl + L_rec`` with unit weights; stage 1 passes only ``l_cl``."""
    return l_cl if l_rec is None else l_cl + l_rec


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------

def _decays(name: str, p: Tensor) -> bool:
    return p.ndim >= 2 and "rel_bias" not in name and "band_embed" not in name


class AdamW:
    """Adam with decoupled weight decay; norms, biases and tables are not decayed."""

    def __init__(self, named_params: Iterable[tuple[str, Tensor]], lr: float,
                 betas: Sequence[float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.decay = [_decays(n, p) for n, p in self.params]

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (_, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            data = p.data * (1.0 - self.lr * self.weight_decay) if self.decay[i] else p.data
            p.data = data - self.lr * update


@dataclass
class TrainConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 100
    steps_per_epoch: int = 10
    batch_size: int = 8
    patch_size: int = 32
    image_size: int = 64
    pool_size: int = 64
    lr1: float = 3e-4
    lr1_final: float = 3e-5
    lr1_drop: float = 0.6
    lr2: float = 1e-4
    lr2_halvings: int = 4
    weight_decay: float = 0.01
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    tau: float = 0.07
    momentum: float = 0.999
    queue_size: int = 256
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.queue_size < self.batch_size:
            raise ConfigError("queue_size must be >= batch_size")
        if min(self.stage1_epochs, self.stage2_epochs) < 0 or self.steps_per_epoch < 1:
            raise ConfigError("epoch counts must be >= 0 and steps_per_epoch >= 1")
        if self.patch_size > self.image_size:
            raise ConfigError("patch_size must not exceed image_size")
        if not 0 <= self.momentum <= 1:
            raise ConfigError("momentum must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(cfg: TrainConfig, stage: int, epoch: int) -> float:
    """Step schedules: stage 1 drops lr1 -> lr1_final at ``lr1_drop`` of the
    stage; stage 2 halves lr2 ``lr2_halvings`` times at even intervals."""
    if stage == 1:
        return cfg.lr1 if epoch < round(cfg.lr1_drop * cfg.stage1_epochs) else cfg.lr1_final
    n = cfg.lr2_halvings
    k = min(n, (epoch * (n + 1)) // max(cfg.stage2_epochs, 1))
    return cfg.lr2 * 0.5 ** k


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

TRAIN_STREAM = 0x5EED
EVAL_STREAM = 0xE7A1


def stream_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class Batch:
    anchor: np.ndarray     # degraded patches (B, 3, P, P)
    positive: np.ndarray   # second crop of the same degraded images
    clean: np.ndarray      # clean targets matching ``anchor``
    seeds: list[tuple[int, int]]
    labels: list[int]


class PatchSampler:
    """Draws anchor/positive patch pairs from a pool of procedural images."""

    def __init__(self, tasks: Sequence[DegradationSpec], cfg: TrainConfig):
        if not tasks:
            raise ConfigError("at least one degradation task is required")
        self.tasks = list(tasks)
        self.cfg = cfg
        self.rng = np.random.default_rng(stream_seed(cfg.seed, TRAIN_STREAM))
        self.pool_seeds = [stream_seed(cfg.seed, TRAIN_STREAM, i) for i in range(cfg.pool_size)]
        self.pool = [synth_clean(s, cfg.image_size, cfg.image_size) for s in self.pool_seeds]

    def sample(self) -> Batch:
        cfg, rng = self.cfg, self.rng
        anchors, positives, cleans, seeds, labels = [], [], [], [], []
        for t, spec in enumerate(self.tasks):
            for _ in range(cfg.batch_size):
                idx = int(rng.integers(len(self.pool)))
                dseed = int(rng.integers(2 ** 62))
                pair = apply(self.pool[idx], spec.with_seed(dseed))
                a = sample_patch(pair, cfg.patch_size, rng, cfg.augment)
                p = sample_patch(pair, cfg.patch_size, rng, cfg.augment)
                anchors.append(a.degraded)
                cleans.append(a.clean)
                positives.append(p.degraded)
                seeds.append((self.pool_seeds[idx], dseed))
                labels.append(t)
        return Batch(np.stack(anchors), np.stack(positives), np.stack(cleans), seeds, labels)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    dformer: Dformer
    rformer: Rformer
    key_encoder: Dformer
    log: list[dict]
    queue: NegativeQueue


def model_config(dformer: Dformer | None, rformer: Rformer, train_cfg: TrainConfig | None = None) -> dict:
    return {
        "dformer": dformer.cfg.to_dict() if dformer is not None else None,
        "rformer": rformer.cfg.to_dict(),
        "learnable_ratios": rformer.learnable_ratios,
        "train": train_cfg.to_dict() if train_cfg is not None else None,
    }


def save_models(path, dformer: Dformer | None, rformer: Rformer, train_cfg: TrainConfig | None = None) -> None:
    params = {}
    if dformer is not None:
        params.update({f"dformer.{k}": v for k, v in dformer.state_dict().items()})
    params.update({f"rformer.{k}": v for k, v in rformer.state_dict().items()})
    checkpoint.save(path, params, model_config(dformer, rformer, train_cfg))


def load_models(path) -> tuple[Dformer | None, Rformer]:
    params, cfg = checkpoint.load(path)
    dformer = None
    if cfg.get("dformer") is not None:
        dformer = Dformer(DformerConfig(**cfg["dformer"]))
        dformer.load_state_dict(checkpoint.split_prefix(params, "dformer"))
    rformer = Rformer(RformerConfig(**cfg["rformer"]), learnable_ratios=cfg.get("learnable_ratios", False))
    rformer.load_state_dict(checkpoint.split_prefix(params, "rformer"))
    return dformer, rformer


def _check_finite(loss: Tensor, where: str, batch: Batch, out_dir) -> None:
    if np.isfinite(loss.data).all():
        return
    msg = f"non-finite loss at {where}; batch (clean_seed, degradation_seed) = {batch.seeds}"
    if out_dir is not None:
        with open(os.path.join(out_dir, "nan_dump.json"), "w") as fh:
            json.dump({"where": where, "seeds": batch.seeds}, fh)
    raise NumericError(msg)


def train(cfg: TrainConfig, tasks: Sequence[DegradationSpec], dformer_cfg: DformerConfig | None = None,
          rformer_cfg: RformerConfig | None = None, out_dir: str | os.PathLike | None = None) -> TrainResult:
    """Two-stage training. Writes ``metrics.jsonl``, ``best.ckpt`` and
    ``final.ckpt`` into ``out_dir`` when given."""
    dformer_cfg = dformer_cfg or DformerConfig()
    rformer_cfg = rformer_cfg or RformerConfig(repr_dim=dformer_cfg.repr_dim, L=max(dformer_cfg.L, 2))
    if rformer_cfg.repr_dim != dformer_cfg.repr_dim:
        raise ConfigError("rformer.repr_dim must equal dformer.repr_dim")
    if cfg.queue_size < cfg.batch_size * len(tasks):
        raise ConfigError("queue_size must be >= the total batch size")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    query = Dformer(dformer_cfg)
    key = Dformer(dformer_cfg)
    key.load_state_dict(query.state_dict())
    rformer = Rformer(rformer_cfg)
    sampler = PatchSampler(tasks, cfg)
    queue = NegativeQueue.random(cfg.queue_size, dformer_cfg.repr_dim,
                                 np.random.default_rng(stream_seed(cfg.seed, 0xC0DE)))
    log: list[dict] = []
    log_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w") if out_dir is not None else None
    best = math.inf

    def run_stage(stage: int, epochs: int, opt: AdamW):
        nonlocal best
        for epoch in range(epochs):
            opt.lr = learning_rate(cfg, stage, epoch)
            t0 = time.perf_counter()
            l_cl_sum = l_rec_sum = 0.0
            for step in range(cfg.steps_per_epoch):
                batch = sampler.sample()
                opt.zero_grad()
                d = query(batch.anchor)
                with T.no_grad():
                    d_pos = key(batch.positive).data
                l_cl = info_nce(d, d_pos, queue, cfg.tau)
                l_rec = None
                if stage == 2:
                    l_rec = l1_loss(rformer(batch.anchor, d), batch.clean)
                loss = composite_loss(l_cl, l_rec)
                _check_finite(loss, f"stage {stage} epoch {epoch} step {step}", batch, out_dir)
                loss.backward()
                opt.step()
                momentum_update(key, query, cfg.momentum)
                queue.enqueue(d_pos)
                l_cl_sum += l_cl.item()
                l_rec_sum += l_rec.item() if l_rec is not None else 0.0
            n = cfg.steps_per_epoch
            rec = {"epoch": len(log), "stage": stage, "l_cl": l_cl_sum / n,
                   "l_rec": l_rec_sum / n if stage == 2 else None, "lr": opt.lr,
                   "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
            log.append(rec)
            logger.info("stage %d epoch %d: l_cl=%.4f l_rec=%s", stage, epoch, rec["l_cl"], rec["l_rec"])
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
                total = rec["l_cl"] + (rec["l_rec"] or 0.0)
                if total < best:
                    best = total
                    save_models(os.path.join(out_dir, "best.ckpt"), query, rformer, cfg)

    betas = tuple(cfg.betas)
    try:
        if cfg.stage1_epochs:
            run_stage(1, cfg.stage1_epochs,
                      AdamW(query.named_parameters(), cfg.lr1, betas, weight_decay=cfg.weight_decay))
        if cfg.stage2_epochs:
            best = math.inf  # stage-2 totals include L_rec; do not compare with stage 1
            named = [(f"dformer.{n}", p) for n, p in query.named_parameters()]
            named += [(f"rformer.{n}", p) for n, p in rformer.named_parameters()]
            run_stage(2, cfg.stage2_epochs, AdamW(named, cfg.lr2, betas, weight_decay=cfg.weight_decay))
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_models(os.path.join(out_dir, "final.ckpt"), query, rformer, cfg)
    return TrainResult(query, rformer, key, log, queue)


def train_learned_ratios(spec: DegradationSpec, cfg: TrainConfig,
                         rformer_cfg: RformerConfig | None = None) -> tuple[Rformer, list[dict]]:
    """Train a restorer with free modulation ratios on a single task.

    Uses ``L_rec`` only, for ``cfg.stage2_epochs`` epochs on the stage-2
    learning-rate schedule.
    """
    rformer = Rformer(rformer_cfg or RformerConfig(), learnable_ratios=True)
    sampler = PatchSampler([spec], cfg)
    opt = AdamW(rformer.named_parameters(), cfg.lr2, tuple(cfg.betas), weight_decay=cfg.weight_decay)
    log = []
    for epoch in range(cfg.stage2_epochs):
        opt.lr = learning_rate(cfg, 2, epoch)
        total = 0.0
        for step in range(cfg.steps_per_epoch):
            batch = sampler.sample()
            opt.zero_grad()
            loss = l1_loss(rformer(batch.anchor), batch.clean)
            _check_finite(loss, f"epoch {epoch} step {step}", batch, None)
            loss.backward()
            opt.step()
            total += loss.item()
        log.append({"epoch": epoch, "l_rec": total / cfg.steps_per_epoch, "lr": opt.lr,
                    "ratios": rformer.modulation_ratios().band_means().tolist()})
    return rformer, log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_pairs(spec: DegradationSpec, n: int, size: int, seed: int, task_index: int = 0) -> list[ImagePair]:
    """Held-out procedural pairs (seed stream disjoint from training)."""
    pairs = []
    for i in range(n):
        clean = synth_clean(stream_seed(seed, EVAL_STREAM, task_index, i), size, size)
        pairs.append(apply(clean, spec.with_seed(stream_seed(seed, EVAL_STREAM, task_index, i, 1))))
    return pairs


def restore(dformer: Dformer | None, rformer: Rformer, degraded: np.ndarray) -> np.ndarray:
    """Inference on a (B, 3, H, W) batch without recording a graph."""
    with T.no_grad():
        d = dformer(degraded) if dformer is not None and not rformer.learnable_ratios else None
        return rformer(degraded, d).data


def evaluate(dformer: Dformer | None, rformer: Rformer, specs: Sequence[DegradationSpec],
             n_pairs: int, size: int = 64, seed: int = 0) -> list[dict]:
    """PSNR/SSIM of degraded and restored images against the clean ones."""
    rows = []
    for t, spec in enumerate(specs):
        pairs = eval_pairs(spec, n_pairs, size, seed, t)
        degraded = np.stack([p.degraded for p in pairs])
        restored = np.clip(restore(dformer, rformer, degraded), 0.0, 1.0)
        rows.append({
            "task": spec.label, "n": n_pairs,
            "psnr_in": float(np.mean([psnr(p.degraded, p.clean) for p in pairs])),
            "ssim_in": float(np.mean([ssim(p.degraded, p.clean) for p in pairs])),
            "psnr_out": float(np.mean([psnr(r, p.clean) for r, p in zip(restored, pairs)])),
            "ssim_out": float(np.mean([ssim(r, p.clean) for r, p in zip(restored, pairs)])),
        })
    return rows


def modulation_report(dformer: Dformer | None, rformer: Rformer, specs: Sequence[DegradationSpec],
                      samples: int, size: int = 32, seed: int = 0) -> list[dict]:
    """Mean ratio of each non-DC band per task (over samples, layers, heads)."""
    rows = []
    for t, spec in enumerate(specs):
        if rformer.learnable_ratios:
            means = rformer.modulation_ratios().band_means()
        else:
            if dformer is None:
                raise ContractError("embedded ratios need a degradation encoder")
            degraded = np.stack([p.degraded for p in eval_pairs(spec, samples, size, seed, t)])
            with T.no_grad():
                means = rformer.projection(dformer(degraded)).band_means()
        row = {"task": spec.label, "n": samples}
        row.update({f"M{k + 1}": float(m) for k, m in enumerate(means)})
        rows.append(row)
    return rows


def representations(dformer: Dformer, specs: Sequence[DegradationSpec], n: int, size: int,
                    seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Encoder outputs for ``n`` held-out images per task, with task labels."""
    feats, labels = [], []
    for t, spec in enumerate(specs):
        degraded = np.stack([p.degraded for p in eval_pairs(spec, n, size, seed, t)])
        with T.no_grad():
            feats.append(dformer(degraded).data)
        labels += [t] * n
    return np.concatenate(feats), np.array(labels)


def nearest_centroid_accuracy(train_x: np.ndarray, train_y: np.ndarray,
                              test_x: np.ndarray, test_y: np.ndarray) -> float:
    classes = np.unique(train_y)
    centroids = np.stack([train_x[train_y == c].mean(axis=0) for c in classes])
    dist = ((test_x[:, None, :] - centroids[None]) ** 2).sum(-1)
    return float((classes[dist.argmin(axis=1)] == test_y).mean())
