import json
import math

import numpy as np
import pytest

from freqrestore import tensor as T
from freqrestore import train as TR
from freqrestore.degrade import parse_task
from freqrestore.dformer import DformerConfig
from freqrestore.errors import ConfigError, ContractError, NumericError
from freqrestore.rformer import Rformer, RformerConfig
from freqrestore.tensor import Tensor, grad_check

DCFG = dict(dim0=4, heads=[2, 2], repr_dim=8)
RCFG = dict(dims=[4], heads=[2], blocks=[1], bottleneck_heads=2, bottleneck_blocks=1, repr_dim=8)


def tiny_train_cfg(**kw):
    base = dict(stage1_epochs=1, stage2_epochs=1, steps_per_epoch=2, batch_size=2, patch_size=16,
                image_size=32, pool_size=4, queue_size=8, seed=3)
    base.update(kw)
    return TR.TrainConfig(**base)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# --- losses -----------------------------------------------------------------

def test_info_nce_uniform_case_is_log_q_plus_one():
    for Q in (1, 5, 64):
        d = unit(np.ones(4))
        loss = TR.info_nce(Tensor(d), d, np.tile(d, (Q, 1)), tau=0.07)
        assert loss.item() == pytest.approx(math.log(Q + 1), rel=1e-12)


def test_info_nce_perfect_alignment_limit():
    e = np.eye(6)
    d = Tensor(50 * 0.07 * e[0][None])  # s+ / tau = 50
    loss = TR.info_nce(d, e[0][None], e[1:], tau=0.07)
    assert loss.item() < 1e-6


def test_info_nce_is_nonnegative_and_differentiable(rng):
    for i in range(10):
        r = np.random.default_rng(i)
        d_pos, queue = unit(r.normal(size=(3, 8))), unit(r.normal(size=(16, 8)))
        d = Tensor(unit(r.normal(size=(3, 8))))
        assert TR.info_nce(d, d_pos, queue, 0.5).item() >= 0
        assert grad_check(lambda t: TR.info_nce(t, d_pos, queue, 0.5), d) <= 1e-4


def test_info_nce_contracts(rng):
    with pytest.raises(ContractError):
        TR.info_nce(Tensor(unit(rng.normal(size=(2, 4)))), unit(rng.normal(size=(2, 4))), np.zeros((0, 4)))
    with pytest.raises(ContractError):
        TR.info_nce(Tensor(np.ones(4) / 2), np.ones(4) / 2, np.ones((2, 4)) / 2, tau=0.0)


def test_info_nce_gradient_reaches_only_the_query(rng):
    d = Tensor(unit(rng.normal(size=(2, 4))), requires_grad=True)
    pos = Tensor(unit(rng.normal(size=(2, 4))), requires_grad=True)
    TR.info_nce(d, pos, unit(rng.normal(size=(5, 4)))).backward()
    assert d.grad is not None and pos.grad is None


def test_l1_examples(rng):
    x = rng.random((2, 3, 4, 4))
    assert TR.l1_loss(Tensor(x), x).item() == 0.0
    assert TR.l1_loss(Tensor(x + 0.5), x).item() == pytest.approx(0.5)
    with pytest.raises(ContractError):
        TR.l1_loss(Tensor(x), x[0])
    t = Tensor(x, requires_grad=True)
    TR.l1_loss(t, x).backward()
    assert not t.grad.any()


def test_composite_loss():
    assert TR.composite_loss(Tensor(0.3), Tensor(0.2)).item() == pytest.approx(0.5)
    assert TR.composite_loss(Tensor(0.3)).item() == 0.3


# --- queue ------------------------------------------------------------------

def test_queue_fifo_eviction(rng):
    Q = 5
    q = TR.NegativeQueue(Q, 3)
    vecs = unit(rng.normal(size=(Q + 1, 3)))
    q.enqueue(vecs[:Q])
    np.testing.assert_array_equal(q.vectors(), vecs[:Q])
    q.enqueue(vecs[Q])
    stored = q.vectors()
    assert not any(np.array_equal(v, vecs[0]) for v in stored)
    np.testing.assert_array_equal(stored, vecs[1:])
    assert q.filled == Q


def test_queue_partial_and_validation(rng):
    q = TR.NegativeQueue(4, 3)
    assert len(q.vectors()) == 0
    q.enqueue(unit(rng.normal(size=(2, 3))))
    assert len(q.vectors()) == 2
    with pytest.raises(ContractError):
        q.enqueue(np.ones((1, 3)))
    with pytest.raises(ContractError):
        TR.NegativeQueue(0, 3)
    r = TR.NegativeQueue.random(7, 3, rng)
    np.testing.assert_allclose(np.linalg.norm(r.vectors(), axis=1), 1.0)


# --- optimiser and schedule ------------------------------------------------------

def test_adamw_matches_reference_update(rng):
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    w0, b0 = w.data.copy(), b.data.copy()
    opt = TR.AdamW([("fc.weight", w), ("fc.bias", b)], lr=0.1, weight_decay=0.5)
    m = v = 0.0
    ref = w0.copy()
    for t in range(1, 4):
        g = rng.normal(size=(3, 2))
        w.grad, b.grad = g.copy(), np.ones(2)
        g_before = w.grad.copy()
        opt.step()
        np.testing.assert_array_equal(w.grad, g_before)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref * (1 - 0.1 * 0.5) - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(w.data, ref, atol=1e-12)
    # 1-D parameters are not decayed: three unit-gradient steps move by ~lr each
    np.testing.assert_allclose(b.data, b0 - 0.3, atol=1e-6)


def test_adamw_skips_decay_for_norms_biases_and_tables():
    assert TR._decays("mlp.fc1.weight", Tensor(np.ones((2, 2))))
    assert not TR._decays("norm1.weight", Tensor(np.ones(2)))
    assert not TR._decays("attn.rel_bias", Tensor(np.ones((9, 2))))
    assert not TR._decays("band_embed", Tensor(np.ones((2, 4))))


def test_learning_rate_schedule():
    cfg = TR.TrainConfig()
    assert TR.learning_rate(cfg, 1, 0) == 3e-4
    assert TR.learning_rate(cfg, 1, 17) == 3e-4
    assert TR.learning_rate(cfg, 1, 18) == 3e-5
    assert TR.learning_rate(cfg, 1, 29) == 3e-5
    stage2 = [TR.learning_rate(cfg, 2, e) for e in range(100)]
    assert stage2[0] == 1e-4 and stage2[19] == 1e-4
    assert stage2[20] == 5e-5
    assert stage2[-1] == pytest.approx(1e-4 / 16)
    assert len(set(stage2)) == 5


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TR.TrainConfig(tau=0)
    with pytest.raises(ConfigError):
        TR.TrainConfig(queue_size=4, batch_size=8)
    with pytest.raises(ConfigError):
        TR.TrainConfig(patch_size=80)
    with pytest.raises(ConfigError):
        TR.train(tiny_train_cfg(queue_size=3), [parse_task("noise"), parse_task("blur")],
                 DformerConfig(**DCFG), RformerConfig(**RCFG))


# --- sampling ------------------------------------------------------------------

def test_positive_pairs_come_from_the_same_degraded_image():
    cfg = tiny_train_cfg(augment=False, patch_size=32)
    batch = TR.PatchSampler([parse_task("haze:0.5,0.8")], cfg).sample()
    # whole-image patches without augmentation: anchor and positive coincide
    np.testing.assert_array_equal(batch.anchor, batch.positive)
    np.testing.assert_allclose(batch.anchor, batch.clean * 0.5 + 0.4, atol=1e-12)
    assert batch.anchor.shape == (2, 3, 32, 32)
    assert len(batch.seeds) == 2


# --- training loop -----------------------------------------------------------

def run_tiny(tmp_path=None, **kw):
    return TR.train(tiny_train_cfg(**kw), [parse_task("noise:25"), parse_task("blur")],
                    DformerConfig(**DCFG), RformerConfig(**RCFG), out_dir=tmp_path)


def strip_time(log):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in log]


def test_training_is_deterministic():
    a, b = run_tiny(), run_tiny()
    assert strip_time(a.log) == strip_time(b.log)
    for k, v in a.rformer.state_dict().items():
        np.testing.assert_array_equal(v, b.rformer.state_dict()[k])


def test_stage_one_leaves_restorer_untouched():
    res = run_tiny(stage2_epochs=0)
    fresh = Rformer(RformerConfig(**RCFG)).state_dict()
    for k, v in res.rformer.state_dict().items():
        np.testing.assert_array_equal(v, fresh[k])
    assert [r["stage"] for r in res.log] == [1]
    assert res.log[0]["l_rec"] is None


def test_stage_two_updates_both_networks():
    res = run_tiny(stage1_epochs=0, steps_per_epoch=3)
    fresh = Rformer(RformerConfig(**RCFG)).state_dict()
    assert any(not np.array_equal(v, fresh[k]) for k, v in res.rformer.state_dict().items()
               if k.startswith("encoder"))
    from freqrestore.dformer import Dformer
    dfresh = Dformer(DformerConfig(**DCFG)).state_dict()
    assert any(not np.array_equal(v, dfresh[k]) for k, v in res.dformer.state_dict().items())


def test_joint_loss_reaches_every_parameter_group(rng):
    from freqrestore.dformer import Dformer
    dformer, rformer = Dformer(DformerConfig(**DCFG)), Rformer(RformerConfig(**RCFG))
    rformer.output_proj.weight.data = rng.normal(scale=0.1, size=rformer.output_proj.weight.shape)
    rformer.projection.mlp.fc2.weight.data = rng.normal(scale=0.1, size=rformer.projection.mlp.fc2.weight.shape)
    img, clean = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    d = dformer(img)
    loss = TR.composite_loss(TR.info_nce(d, unit(rng.normal(size=(2, 8))), unit(rng.normal(size=(4, 8)))),
                             TR.l1_loss(rformer(img, d), clean))
    loss.backward()
    for model in (dformer, rformer):
        for name, p in model.named_parameters():
            assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def test_outputs_log_and_checkpoints(tmp_path, rng):
    res = run_tiny(tmp_path)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    recs = [json.loads(l) for l in lines]
    assert all(set(r) == {"epoch", "stage", "l_cl", "l_rec", "lr", "wall_ms"} for r in recs)
    assert [r["stage"] for r in recs] == [1, 2]
    assert (tmp_path / "best.ckpt").exists()
    dformer, rformer = TR.load_models(tmp_path / "final.ckpt")
    img = rng.random((1, 3, 16, 16))
    np.testing.assert_array_equal(dformer(img).data, res.dformer(img).data)
    d = res.dformer(img)
    np.testing.assert_array_equal(rformer(img, d).data, res.rformer(img, d).data)


def test_nan_loss_aborts_with_seed_dump(tmp_path, monkeypatch):
    monkeypatch.setattr(TR, "info_nce", lambda *a, **k: Tensor(np.nan, requires_grad=True))
    with pytest.raises(NumericError, match="seed"):
        run_tiny(tmp_path)
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert len(dump["seeds"]) == 4 and "stage 1" in dump["where"]


# --- evaluation ----------------------------------------------------------------

def test_untrained_checkpoint_restores_nothing():
    from freqrestore.dformer import Dformer
    rows = TR.evaluate(Dformer(DformerConfig(**DCFG)), Rformer(RformerConfig(**RCFG)),
                       [parse_task("noise:25")], 3, size=32)
    assert rows[0]["psnr_out"] == rows[0]["psnr_in"]
    assert rows[0]["ssim_out"] == rows[0]["ssim_in"]
    assert list(rows[0]) == ["task", "n", "psnr_in", "ssim_in", "psnr_out", "ssim_out"]


def test_untrained_modulation_report_is_zero():
    from freqrestore.dformer import Dformer
    rows = TR.modulation_report(Dformer(DformerConfig(**DCFG)), Rformer(RformerConfig(**RCFG, L=3)),
                                [parse_task("noise:15"), parse_task("haze")], 2, size=16)
    assert [r["task"] for r in rows] == ["noise:15", "haze:0.5,0.8"]
    assert all(r["M1"] == 0 and r["M2"] == 0 for r in rows)
    learn = Rformer(RformerConfig(**RCFG), learnable_ratios=True)
    assert TR.modulation_report(None, learn, [parse_task("noise")], 2)[0]["M1"] == 0
    with pytest.raises(ContractError):
        TR.modulation_report(None, Rformer(RformerConfig(**RCFG)), [parse_task("noise")], 2)


def test_eval_pairs_are_disjoint_from_training_pool():
    cfg = tiny_train_cfg()
    pool = TR.PatchSampler([parse_task("noise")], cfg).pool
    held = TR.eval_pairs(parse_task("noise"), 4, cfg.image_size, cfg.seed)
    for p in held:
        assert not any(np.array_equal(p.clean, c) for c in pool)


def test_nearest_centroid_accuracy():
    x = np.array([[0, 0], [0, 1], [5, 5], [5, 6]], dtype=float)
    y = np.array([0, 0, 1, 1])
    assert TR.nearest_centroid_accuracy(x, y, np.array([[0, 0.2], [5, 4], [4, 4]]), np.array([0, 1, 0])) \
        == pytest.approx(2 / 3)


def test_learned_ratio_training_runs():
    rformer, log = TR.train_learned_ratios(parse_task("noise:15"), tiny_train_cfg(stage2_epochs=2),
                                           RformerConfig(**RCFG))
    assert rformer.learnable_ratios and len(log) == 2
    assert log[0]["l_rec"] > 0 and len(log[-1]["ratios"]) == 1
