"""U-Net assembly: shapes, parameter audit, skip wiring, gradients."""

from __future__ import annotations

import numpy as np
import pytest

from rtfrecon.cvnn import engine
from rtfrecon.cvnn.unet import UNet, UNetSpec
from helpers import check_gradients


def audit_param_count(k, enc):
    """Independent real-parameter count from the architecture rules.

    Convs carry 2*(kh*kw*cin*cout + cout) reals; activated stages add a
    CPReLU (2*c reals) and a batch norm (4 Gamma + 2 beta reals per
    channel). Skips concatenate the input of the mirrored encoder stage.
    """
    total = 0
    widths = [2 * k] + list(enc)
    for i in range(len(enc)):
        cin, cout = widths[i], widths[i + 1]
        total += 2 * (9 * cin * cout + cout)
        if i > 0:
            total += 2 * cout + 6 * cout
    dec = list(reversed(enc[:-1])) + [2 * k]
    cin = enc[-1]
    for j, cout in enumerate(dec):
        skip = widths[len(enc) - 1 - j]
        total += 2 * (9 * (cin + skip) * cout + cout)
        if j < len(dec) - 1:
            total += 2 * cout + 6 * cout
        cin = cout
    total += 2 * (1 * cin * 2 * k + 2 * k)  # 1x1 head
    return total


def test_spec_decoder_mirrors_encoder():
    spec = UNetSpec(k_freqs=40)
    assert spec.encoder_filters == (128, 256, 512, 1024)
    assert spec.decoder_filters == (512, 256, 128, 80)
    assert spec.in_channels == 80
    spec2 = UNetSpec(k_freqs=8, encoder_filters=(32, 64))
    assert spec2.decoder_filters == (32, 16)


def test_spec_validation():
    with pytest.raises(ValueError):
        UNetSpec(k_freqs=0)
    with pytest.raises(ValueError):
        UNetSpec(k_freqs=4, encoder_filters=(64,))


def test_layer_table_wiring():
    spec = UNetSpec(k_freqs=40)
    table = {ls.name: ls for ls in spec.layer_table()}
    assert table["enc0"].cin == 80 and table["enc0"].cout == 128
    assert not table["enc0"].activated and table["enc1"].activated
    assert table["dec0"].cin == 1024 + 512 and table["dec0"].skip_from == "enc3"
    assert table["dec3"].cin == 128 + 80 and table["dec3"].skip_from == "enc0"
    assert not table["dec3"].activated
    assert table["head"].kernel == (1, 1) and not table["head"].activated
    assert table["head"].cin == 80 and table["head"].cout == 80


def test_shape_contract_paper_scale():
    spec = UNetSpec(k_freqs=40)
    model = UNet(spec, seed=0)
    x = np.zeros((1, 32, 32, 80), dtype=np.complex64)
    out = model.forward(x, training=False)
    assert out.values.shape == (1, 32, 32, 40)
    assert out.values.dtype == np.complex64


def test_param_count_matches_independent_audit():
    spec = UNetSpec(k_freqs=40)
    model = UNet(spec, seed=0)
    assert model.param_count() == audit_param_count(40, (128, 256, 512, 1024))
    tiny = UNetSpec(k_freqs=8, encoder_filters=(16, 24))
    assert UNet(tiny, seed=0).param_count() == audit_param_count(8, (16, 24))


def test_param_count_frozen_constant():
    # regression pin for the default architecture; fails on any silent
    # change to widths, kernel sizes, or per-stage parameterisation
    assert UNet(UNetSpec(k_freqs=40), seed=0).param_count() == 31_489_856


def test_rejects_bad_input_shapes():
    model = UNet(UNetSpec(k_freqs=4, encoder_filters=(8, 8)), seed=0)
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 8, 8, 5), dtype=np.complex64))
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 6, 6, 8), dtype=np.complex64))


def test_forward_deterministic_and_seeded():
    spec = UNetSpec(k_freqs=4, encoder_filters=(8, 12))
    rng = np.random.default_rng(0)
    x = (rng.normal(size=(2, 8, 8, 8)) + 1j * rng.normal(size=(2, 8, 8, 8))
         ).astype(np.complex64)
    a = UNet(spec, seed=5).forward(x, training=False).values
    b = UNet(spec, seed=5).forward(x, training=False).values
    c = UNet(spec, seed=6).forward(x, training=False).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_skip_connections_feed_decoder():
    # zeroing the encoder input channels after the first conv's receptive
    # field would be invisible without skips; instead verify directly:
    # the last decoder stage sees the raw input via its concat
    spec = UNetSpec(k_freqs=2, encoder_filters=(4, 4))
    model = UNet(spec, seed=1)
    rng = np.random.default_rng(2)
    x = (rng.normal(size=(1, 4, 4, 4)) + 1j * rng.normal(size=(1, 4, 4, 4))
         ).astype(np.complex64)
    base = model.forward(x, training=False).values
    # kill the weights of every encoder conv: only skip paths remain live
    for name in ("enc0", "enc1"):
        model.convs[name].weight.values[:] = 0
    out = model.forward(x, training=False).values
    assert not np.array_equal(out, base)
    assert np.any(out != 0)  # input still reaches the head through dec1's skip


def test_tiny_unet_end_to_end_gradients():
    # 8x8 grid, 2 encoder + 3 decoder convolutions, complex128
    spec = UNetSpec(k_freqs=2, encoder_filters=(4, 6))
    model = UNet(spec, dtype=np.complex128, seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 8, 8, 4)) + 1j * rng.normal(size=(2, 8, 8, 4))
    y = rng.normal(size=(2, 8, 8, 2)) + 1j * rng.normal(size=(2, 8, 8, 2))
    buffers = {k: v.copy() for k, v in model.buffers().items()}

    def build():
        model.load_buffers(buffers)  # freeze running stats across FD evals
        return engine.l1_loss(model.forward(x, training=True), y)

    worst, checked = check_gradients(build, model.parameters(),
                                     np.random.default_rng(5), n_samples=120)
    assert checked >= 100
    assert worst < 1e-4
