import numpy as np
import pytest

from msfsnet import tensor as T
from msfsnet.blocks import UpParams, upsample
from msfsnet.errors import ContractError, DimensionError
from msfsnet.gradcheck import grad_check
from msfsnet.losses import LossWeights, loss_total
from msfsnet.network import MSFSNet, NetworkConfig, ScaleTaps, csffm_stage, encode_output, forward
from msfsnet.tensor import Tensor

TOY = NetworkConfig(base_channels=8, rcab_bottleneck_count=1)


def _img(rng, n=1, h=16, w=16):
    return Tensor(rng.random((n, 3, h, w)).astype(T.get_default_dtype()))


def test_output_and_tap_shapes(rng):
    net = MSFSNet(TOY, seed=0)
    x = _img(rng, 2, 16, 24)
    out, taps = net.forward_with_taps(x)
    assert out.shape == x.shape
    for k in range(3):
        c = TOY.width(k) // 2
        h, w = 16 >> k, 24 >> k
        assert taps.en_hf[k].shape == (2, c, h, w)
        assert taps.de_hf[k].shape == (2, c, h, w)
        assert taps.out_hf[k].shape == (2, c, h, w)
        assert taps.en_lf[k].shape == (2, c, h // 2, w // 2)
        assert taps.out_lf[k].shape == (2, c, h // 2, w // 2)
    taps.validate()


def test_zero_head_is_identity(rng):
    net = MSFSNet(TOY, seed=3)
    x = _img(rng, 2)
    np.testing.assert_array_equal(net.restore(x.data), x.data)


def test_nonzero_head_changes_output(rng):
    net = MSFSNet(NetworkConfig(base_channels=8, rcab_bottleneck_count=1, zero_head=False), seed=3)
    x = _img(rng)
    assert not np.array_equal(net.restore(x.data), x.data)


@pytest.mark.parametrize("h,w", [(12, 20), (4, 4), (20, 8)])
def test_sizes_not_multiple_of_eight(rng, h, w):
    cfg = NetworkConfig(base_channels=8, rcab_bottleneck_count=1, zero_head=False)
    net = MSFSNet(cfg, seed=0)
    x = _img(rng, 1, h, w)
    out, taps = net.forward_with_taps(x)
    assert out.shape == x.shape
    taps.validate()


def test_bad_inputs_rejected(rng):
    net = MSFSNet(TOY)
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((1, 3, 10, 16), np.float32)))
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((1, 1, 16, 16), np.float32)))
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((3, 16, 16), np.float32)))


def test_config_validation():
    with pytest.raises(ContractError):
        NetworkConfig(scales=4).validate()
    with pytest.raises(ContractError):
        NetworkConfig(base_channels=6).validate()


def test_encode_output_needs_forward_taps(rng):
    net = MSFSNet(TOY)
    with pytest.raises(ContractError):
        encode_output(_img(rng), net.params, ScaleTaps())


def test_samples_are_independent(rng):
    net = MSFSNet(NetworkConfig(base_channels=8, rcab_bottleneck_count=1, zero_head=False), seed=1)
    x = rng.random((3, 3, 16, 16)).astype(np.float32)
    whole = net.restore(x)
    for i in range(3):
        np.testing.assert_allclose(net.restore(x[i : i + 1])[0], whole[i], atol=1e-5)


def test_seeded_init_is_deterministic():
    a = dict(MSFSNet(TOY, seed=7).named_parameters())
    b = dict(MSFSNet(TOY, seed=7).named_parameters())
    c = dict(MSFSNet(TOY, seed=8).named_parameters())
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a if a[k].data.any())


def test_without_fsm_taps_are_whole_features(rng):
    cfg = NetworkConfig(base_channels=8, rcab_bottleneck_count=1, use_fsm=False)
    out, taps = MSFSNet(cfg).forward_with_taps(_img(rng))
    for k in range(3):
        assert taps.en_hf[k] is taps.en_lf[k]
        assert taps.en_hf[k].shape == (1, cfg.width(k), 16 >> k, 16 >> k)


def test_without_csffm_has_narrower_upsamplers(rng):
    full = MSFSNet(TOY)
    plain = MSFSNet(NetworkConfig(base_channels=8, rcab_bottleneck_count=1, use_csffm=False))
    assert full.params.ups[0].reduce.in_channels == 2 * plain.params.ups[0].reduce.in_channels
    out, _ = plain(_img(rng))
    assert out.shape == (1, 3, 16, 16)


def test_csffm_stage_mixes_by_sigmoid(rng, f64):
    up = UpParams.init(rng, 8, 4, 2)
    en = Tensor(rng.standard_normal((1, 4, 2, 2)))
    de = Tensor(rng.standard_normal((1, 4, 2, 2)))
    got = csffm_stage(en, de, Tensor(np.zeros(1)), up)
    ref = upsample(T.concat_channels([Tensor((en.data + de.data) / 2), en]), up)
    np.testing.assert_allclose(got.data, ref.data, atol=1e-12)
    # a saturated gate keeps only the encoder feature
    got = csffm_stage(en, de, Tensor(np.array([50.0])), up)
    ref = upsample(T.concat_channels([en, en]), up)
    np.testing.assert_allclose(got.data, ref.data, atol=1e-12)
    with pytest.raises(DimensionError):
        csffm_stage(en, Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros(1)), up)


def test_full_loss_gradients_64bit(f64):
    cfg = NetworkConfig(base_channels=4, rcab_bottleneck_count=1, attention_ratio=2, zero_head=False)
    net = MSFSNet(cfg, seed=0)
    rng = np.random.default_rng(5)
    x = Tensor(rng.random((1, 3, 8, 8)))
    gt = Tensor(rng.random((1, 3, 8, 8)))

    def fn():
        out, taps = forward(x, net.params, cfg)
        encode_output(out, net.params, taps)
        return loss_total(out, gt, taps, LossWeights())

    rep = grad_check(fn, dict(net.named_parameters()), tol=1e-6, max_per_leaf=3, rng=np.random.default_rng(0))
    assert rep.passed, rep.summary()
