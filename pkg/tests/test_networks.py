import pytest
import torch
import torch.nn as nn

from mbvvc.bottleneck import MbvCode
from mbvvc.errors import ConfigurationError, DivergenceError, ShapeError, SpeakerLookupError
from mbvvc.networks import (AsrEncoder, Discriminator, ModelConfig, TtsDecoder, TtsPatcher, augment,
                            check_finite, pixel_shuffle_freq)


@pytest.fixture(scope="module")
def cfg():
    return ModelConfig()


@pytest.fixture(scope="module")
def small():
    return ModelConfig(n_bins=64, base_bins=4, up_channels=(8, 6, 4, 4, 2), code_dim=8, prenet_dims=(32, 16),
                       bank_size=4, bank_channels=8, hidden=16, highway_layers=2, dec_hidden=16, seg_len=16,
                       disc_channels=(4, 4), disc_fc=8)


def test_config_validates_upsampling_chain():
    with pytest.raises(ShapeError):
        ModelConfig(n_bins=1000)
    with pytest.raises(ConfigurationError):
        ModelConfig(dec_output="tanh")


def test_pixel_shuffle_is_a_permutation():
    x = torch.arange(2 * 3 * 8, dtype=torch.float32).reshape(2, 3, 8)
    y = pixel_shuffle_freq(x, 2)
    assert y.shape == (2, 6, 4)
    # coarse bin f, channel group r -> fine bin 2f + r
    torch.testing.assert_close(y[:, 0], x[:, 0, :4])
    torch.testing.assert_close(y[:, 1], x[:, 0, 4:])
    torch.testing.assert_close(y[:, 5], x[:, 2, 4:])
    assert sorted(y.flatten().tolist()) == sorted(x.flatten().tolist())
    with pytest.raises(ShapeError):
        pixel_shuffle_freq(torch.zeros(1, 2, 3), 2)


# -- encoder -------------------------------------------------------------------------


def test_encoder_shape(cfg):
    enc = AsrEncoder(cfg).eval()
    with torch.no_grad():
        code = enc(torch.rand(1, 128, 1024))
    assert isinstance(code, MbvCode)
    assert code.codes.shape == (1, 128, cfg.code_dim)
    assert torch.all((code.codes == 0) | (code.codes == 1))


def test_encoder_eval_deterministic(small):
    enc = AsrEncoder(small).eval()
    x = torch.rand(2, 30, 64)
    torch.testing.assert_close(enc(x).codes, enc(x).codes, rtol=0, atol=0)


@pytest.mark.parametrize("t", [1, 2, 7, 33])
def test_encoder_one_code_per_frame(small, t):
    assert AsrEncoder(small).eval()(torch.rand(1, t, 64)).codes.shape == (1, t, 8)


def test_encoder_rejects_wrong_bins(small):
    with pytest.raises(ShapeError):
        AsrEncoder(small)(torch.rand(1, 10, 65))


@pytest.mark.parametrize("variant", ["onehot", "continuous"])
def test_encoder_baseline_variants(small, variant):
    from dataclasses import replace
    enc = AsrEncoder(replace(small, bottleneck=variant)).eval()
    assert enc(torch.rand(1, 12, 64)).payload.shape == (1, 12, 8)


# -- decoder and patcher -------------------------------------------------------------------


def test_decoder_shape_and_range(cfg):
    dec = TtsDecoder(cfg, 2)
    z = torch.randint(0, 2, (1, 128, cfg.code_dim)).float()
    out = dec(z, torch.tensor([0]))
    assert out.shape == (1, 128, 1024)
    assert out.min() >= 0 and out.max() <= 1


def test_decoder_sigmoid_option_range(small):
    from dataclasses import replace
    dec = TtsDecoder(replace(small, dec_output="sigmoid"), 2)
    out = dec(torch.randn(2, 5, 8) * 50, torch.tensor([0, 1]))
    assert out.min() >= 0 and out.max() <= 1


def test_decoder_speaker_embeddings_per_layer(small):
    dec = TtsDecoder(small, 3)
    # one table per feature map: input, each residual block, base and every upsampling stage
    assert len(dec.speaker_embeddings) == 1 + small.dec_res_blocks + len(small.up_channels)
    for emb in dec.speaker_embeddings:
        assert emb.num_embeddings == 3
        assert not torch.equal(emb.weight[0], emb.weight[1])
    z = torch.randint(0, 2, (1, 10, 8)).float()
    a, b = dec(z, torch.tensor([0])), dec(z, torch.tensor([1]))
    assert not torch.equal(a, b)


def test_decoder_clamp_passes_gradient(small):
    dec = TtsDecoder(small, 1)
    with torch.no_grad():
        dec.out.bias.fill_(-50.0)  # every output clamped to 0
    z = torch.randint(0, 2, (1, 4, 8)).float()
    out = dec(z, torch.tensor([0]))
    assert torch.all(out == 0)
    out.sum().backward()
    assert dec.out.bias.grad.item() == pytest.approx(4 * 64)


def test_decoder_bad_speaker(small):
    with pytest.raises(SpeakerLookupError):
        TtsDecoder(small, 2)(torch.zeros(1, 3, 8), torch.tensor([2]))


def test_patcher_shape_and_range(cfg):
    pat = TtsPatcher(cfg, 1)
    mask = pat(torch.randint(0, 2, (1, 128, cfg.code_dim)).float(), torch.tensor([0]))
    assert mask.shape == (1, 128, 1024)
    assert mask.min() >= 0 and mask.max() <= 1


def test_patcher_zeroed_final_layer_gives_half(small):
    pat = TtsPatcher(small, 2)
    with torch.no_grad():
        pat.out.weight.zero_()
        pat.out.bias.zero_()
    mask = pat(torch.randint(0, 2, (2, 9, 8)).float(), torch.tensor([0, 1]))
    torch.testing.assert_close(mask, torch.full_like(mask, 0.5), rtol=0, atol=0)


def test_patcher_starts_near_zero_mask(small):
    mask = TtsPatcher(small, 1)(torch.randint(0, 2, (1, 9, 8)).float(), torch.tensor([0]))
    assert mask.mean() < 0.1


def test_augment_identities():
    x = torch.rand(2, 5, 7)
    torch.testing.assert_close(augment(torch.zeros_like(x), x), x, rtol=0, atol=1e-6)
    torch.testing.assert_close(augment(torch.ones_like(x), x), 2 * x, rtol=0, atol=1e-6)


# -- discriminator ----------------------------------------------------------------------


def test_discriminator_shapes(cfg):
    disc = Discriminator(cfg, 3)
    score, logits = disc(torch.rand(128, 1024))
    assert score.shape == () and logits.shape == (3,)
    score, logits = disc(torch.rand(4, 128, 1024))
    assert score.shape == (4,) and logits.shape == (4, 3)


def test_discriminator_rejects_wrong_segment(small):
    with pytest.raises(ShapeError):
        Discriminator(small, 1)(torch.rand(2, 15, 64))


def test_linear_critic_harness(small):
    disc = Discriminator(small, 1)
    disc.trunk = nn.Flatten()
    disc.shared = nn.Identity()
    disc.critic_head = nn.Linear(16 * 64, 1, bias=False)
    disc.class_head = nn.Linear(16 * 64, 1)
    w = torch.randn(16 * 64)
    with torch.no_grad():
        disc.critic_head.weight.copy_(w[None])
    x = torch.rand(3, 16, 64)
    score, _ = disc(x)
    torch.testing.assert_close(score, x.reshape(3, -1) @ w)


def test_discriminator_batch_matches_single(small):
    disc = Discriminator(small, 2)
    x = torch.rand(3, 16, 64)
    batch_scores, batch_logits = disc(x)
    for i in range(3):
        s, l = disc(x[i])
        torch.testing.assert_close(s, batch_scores[i])
        torch.testing.assert_close(l, batch_logits[i])


def test_check_finite():
    check_finite(torch.ones(3), "x")
    with pytest.raises(DivergenceError):
        check_finite(torch.tensor([1.0, float("inf")]), "loss", step=4)
