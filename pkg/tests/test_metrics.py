import numpy as np
import pytest

from freqrestore.checkpoint import load, save, split_prefix
from freqrestore.errors import ContractError, DimensionError
from freqrestore.metrics import PSNR_CAP, psnr, ssim


def test_psnr_examples(rng):
    a = rng.random((3, 16, 16)) * 0.8
    assert psnr(a, a) == PSNR_CAP == 100.0
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)
    assert psnr(a, a - 0.1) == pytest.approx(20.0, abs=1e-12)
    assert psnr(np.zeros(4), np.full(4, 0.01)) == pytest.approx(40.0, abs=1e-12)


def test_psnr_symmetric_and_monotone(rng):
    a, b = rng.random((2, 3, 8, 8))
    assert psnr(a, b) == psnr(b, a)
    vals = [psnr(a * 0.5, a * 0.5 + d) for d in (0.01, 0.05, 0.1, 0.3)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    with pytest.raises(DimensionError):
        psnr(a, b[:, :4])


def test_ssim_identity_and_anticorrelation():
    yy, xx = np.mgrid[0:32, 0:32]
    a = np.stack([0.5 + 0.4 * np.sin(xx / 3.0) * np.cos(yy / 4.0)] * 3)
    a[:, a.shape[1] // 2] = 0.95  # no exact mid-grey symmetry
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, 1 - a) < 0


@pytest.mark.parametrize("ca,cb", [(0.2, 0.6), (0.9, 0.1), (0.5, 0.52)])
def test_ssim_constant_images_closed_form(ca, cb):
    c1 = 0.01 ** 2
    expected = (2 * ca * cb + c1) / (ca ** 2 + cb ** 2 + c1)
    assert ssim(np.full((3, 16, 16), ca), np.full((3, 16, 16), cb)) == pytest.approx(expected, abs=1e-10)


def test_ssim_matches_direct_window_loop(rng):
    a, b = rng.random((2, 1, 14, 13))
    g = np.exp(-((np.arange(11) - 5) ** 2) / (2 * 1.5 ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(14 - 10):
        for j in range(13 - 10):
            pa, pb = a[0, i:i + 11, j:j + 11], b[0, i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * pa * pa).sum() - ma ** 2, (w * pb * pb).sum() - mb ** 2
            cov = (w * pa * pb).sum() - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-12)


def test_ssim_rejects_small_images():
    with pytest.raises(ContractError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a.weight": rng.normal(size=(3, 4)), "a.bias": rng.normal(size=4), "s": np.array(2.5)}
    save(tmp_path / "m.ckpt", params, {"dim": 4})
    loaded, cfg = load(tmp_path / "m.ckpt")
    assert cfg == {"dim": 4}
    assert list(loaded) == list(params)
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])
    assert split_prefix(loaded, "a") == {"weight": loaded["a.weight"], "bias": loaded["a.bias"]}


def test_checkpoint_layout_is_header_then_little_endian_f64(tmp_path):
    save(tmp_path / "m.ckpt", {"x": np.array([1.0, -2.0])})
    raw = (tmp_path / "m.ckpt").read_bytes()
    n = int.from_bytes(raw[:8], "little")
    assert raw[8:8 + n].startswith(b"{")
    np.testing.assert_array_equal(np.frombuffer(raw[8 + n:], "<f8"), [1.0, -2.0])


def test_checkpoint_corruption_is_detected(tmp_path):
    save(tmp_path / "m.ckpt", {"x": np.ones(3)})
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ContractError):
        load(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(ContractError):
        load(tmp_path / "x.ckpt")
    (tmp_path / "e.ckpt").write_bytes(b"abc")
    with pytest.raises(ContractError):
        load(tmp_path / "e.ckpt")
