import numpy as np
import pytest

from conftest import gradcheck, param_gradcheck
from genpretrain.backbones import (
    DualDomainModel,
    EncoderModel,
    HeadSpec,
    Heads,
    RBlock,
    ResNet,
    ResNetSpec,
    Transformer,
    TransformerSpec,
    head_forward,
    load_model,
    magnitude_spectrum,
    positional_encoding,
    save_checkpoint,
)
from genpretrain.tensor import Tensor, no_grad
from genpretrain.tensor.nn import Conv1d

SMALL_T = TransformerSpec(width=16, n_heads=4, n_layers=2)


def test_resnet_embedding_shape():
    out = ResNet(rng=0)(np.random.default_rng(0).normal(size=(2, 1, 64)))
    assert out.shape == (2, 128)


def test_resnet_per_timestep_halves_length():
    spec = ResNetSpec().for_ts2vec()
    assert ResNet(spec, rng=0)(np.zeros((2, 1, 64))).shape == (2, 32, 128)
    assert ResNet(spec, rng=0)(np.zeros((2, 1, 63))).shape == (2, 32, 128)


def test_resnet_zero_input_zero_head_gives_zero():
    net = ResNet(ResNetSpec(widths=(8, 16, 16)), rng=0)
    net.fc.weight.data[:] = 0.0
    net.fc.bias.data[:] = 0.0
    np.testing.assert_array_equal(net(np.zeros((2, 1, 16))).data, 0.0)


def test_resnet_rejects_short_series():
    with pytest.raises(ValueError, match="minimum"):
        ResNet(rng=0)(np.zeros((1, 1, 7)))


def test_resnet_embedding_shape_independent_of_length():
    net = ResNet(ResNetSpec(widths=(8, 16, 16)), rng=0)
    shapes = {net(np.zeros((3, 1, L))).shape for L in (8, 17, 40)}
    assert shapes == {(3, 16)}


def test_resnet_kernel_sizes_fixed():
    with pytest.raises(ValueError):
        ResNetSpec(kernel_sizes=(3, 3, 3))


def test_rblock_skip_identity_when_widths_equal():
    block = RBlock(4, 4, rng=0)
    assert block.skip is None
    for conv in block.convs:
        conv.weight.data[:] = 0.0
        conv.bias.data[:] = 0.0
    x = np.random.default_rng(1).normal(size=(2, 4, 10))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_rblock_skip_single_pointwise_conv_when_widths_differ():
    block = RBlock(3, 5, rng=0)
    assert isinstance(block.skip, Conv1d)
    assert block.skip.weight.shape == (5, 3, 1)
    assert [c.weight.shape[-1] for c in block.convs] == [7, 5, 3]


def test_rblock_width_mismatch():
    with pytest.raises(ValueError, match="channels"):
        RBlock(3, 5, rng=0)(Tensor(np.zeros((1, 4, 10))))


def test_resnet_parameter_count_matches_formula():
    for spec in (ResNetSpec(), ResNetSpec(in_channels=3, widths=(8, 8, 16))):
        assert ResNet(spec, rng=0).num_parameters() == spec.num_parameters()


def test_transformer_sequence_includes_start_token():
    net = Transformer(SMALL_T, rng=0)
    assert net.sequence(np.zeros((2, 1, 11))).shape == (2, 12, 16)


def test_transformer_paper_configuration_shape():
    net = Transformer(rng=0)
    assert (net.spec.n_layers, net.spec.n_heads, net.spec.width) == (4, 8, 64)
    assert net(np.random.default_rng(0).normal(size=(2, 1, 20))).shape == (2, 64)
    assert net.num_parameters() == TransformerSpec().num_parameters()


def test_transformer_start_output_permutation_invariant_without_positions():
    spec = TransformerSpec(width=16, n_heads=4, n_layers=2, positional_encoding=False)
    net = Transformer(spec, rng=3)
    x = np.random.default_rng(0).normal(size=(2, 1, 9))
    perm = np.random.default_rng(1).permutation(9)
    with no_grad():
        a, b = net(x).data, net(x[:, :, perm]).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    # the positional table breaks the symmetry
    net_pe = Transformer(TransformerSpec(width=16, n_heads=4, n_layers=2), rng=3)
    with no_grad():
        assert not np.allclose(net_pe(x).data, net_pe(x[:, :, perm]).data)


def test_transformer_per_timestep_variant():
    net = Transformer(SMALL_T.for_ts2vec(), rng=0)
    assert net(np.zeros((2, 1, 15))).shape == (2, 8, 16)


def test_positional_encoding_values():
    pe = positional_encoding(6, 8)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    assert pe[1, 0] == np.sin(1.0)
    assert pe[3, 4] == pytest.approx(np.sin(3 / 10000 ** (4 / 8)))
    assert np.all(np.abs(pe) <= 1.0)
    with pytest.raises(ValueError):
        positional_encoding(4, 7)


def test_heads_shapes_and_classifier_guard():
    heads = Heads(HeadSpec(128), rng=0)
    emb = Tensor(np.ones((2, 128)))
    proj, logits = head_forward(emb, heads)
    assert proj.shape == (2, 64) and logits is None
    with pytest.raises(RuntimeError):
        head_forward(emb, heads, with_logits=True)
    heads.set_classes(3, rng=0)
    assert head_forward(emb, heads, with_logits=True)[1].shape == (2, 3)


@pytest.mark.parametrize("kind", ["resnet", "transformer"])
def test_dual_domain_parameter_parity(kind):
    spec = ResNetSpec() if kind == "resnet" else TransformerSpec()
    single = EncoderModel.build(spec, rng=0)
    dual = DualDomainModel.build(spec, rng=0)
    ratio = dual.num_parameters() / single.num_parameters()
    assert abs(ratio - 1.0) < 0.05


def test_dual_domain_concatenates_half_projections():
    dual = DualDomainModel.build(ResNetSpec(widths=(8, 16, 16)), n_classes=3, rng=0)
    x = np.random.default_rng(0).normal(size=(2, 1, 32))
    assert dual.project(x).shape == (2, 64)
    assert dual.logits(x).shape == (2, 3)


def test_magnitude_spectrum_of_constant_is_dc_only():
    spec = magnitude_spectrum(np.full((1, 1, 16), 2.0))
    assert spec.shape == (1, 1, 9)
    assert spec[0, 0, 0] == pytest.approx(32.0)
    np.testing.assert_allclose(spec[0, 0, 1:], 0.0, atol=1e-12)
    assert magnitude_spectrum(np.ones((1, 1, 6))).shape[-1] == 8


def test_fft_round_trip(rng):
    x = rng.normal(size=(3, 2, 31))
    np.testing.assert_allclose(np.fft.irfft(np.fft.rfft(x), n=31), x, atol=1e-9)


@pytest.mark.parametrize("seed", range(2))
def test_resnet_gradients(seed):
    rng = np.random.default_rng(seed)
    net = ResNet(ResNetSpec(widths=(2, 3, 3)), rng=seed)
    x = rng.normal(size=(2, 1, 8))
    target = rng.normal(size=(2, 3))
    assert gradcheck(lambda xt: (net(xt) * target).sum(), x) < 1e-4
    assert param_gradcheck(net, lambda: (net(x) * target).sum()) < 1e-4


@pytest.mark.parametrize("seed", range(2))
def test_transformer_gradients(seed):
    rng = np.random.default_rng(seed)
    net = Transformer(TransformerSpec(width=8, n_heads=2, n_layers=1), rng=seed)
    x = rng.normal(size=(2, 1, 5))
    target = rng.normal(size=(2, 8))
    assert param_gradcheck(net, lambda: (net(x) * target).sum(), max_entries=12) < 1e-4


@pytest.mark.parametrize("model", ["encoder", "dual", "ts2vec"])
def test_checkpoint_round_trip_bit_exact(tmp_path, model):
    spec = ResNetSpec(widths=(4, 8, 8))
    if model == "dual":
        net = DualDomainModel.build(spec, n_classes=2, rng=1)
    elif model == "ts2vec":
        net = EncoderModel.build(spec.for_ts2vec(), rng=1).set_per_timestep(False).set_classes(2, rng=1)
    else:
        net = EncoderModel.build(spec, n_classes=2, rng=1)
    save_checkpoint(tmp_path / "m.npz", net, {"note": "x"})
    loaded, meta = load_model(tmp_path / "m.npz")
    assert meta == {"note": "x"}
    for (n1, p1), (n2, p2) in zip(net.named_parameters(), loaded.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
    x = np.random.default_rng(0).normal(size=(2, 1, 16))
    with no_grad():
        assert np.array_equal(net.logits(x).data, loaded.logits(x).data)
