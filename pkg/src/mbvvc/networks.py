"""ASR-Encoder, TTS-Decoder / TTS-Patcher and the critic.

All modules take and return time-major spectrogram batches ``[B, T, bins]``.
"""

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .bottleneck import Bottleneck
from .errors import ConfigurationError, DivergenceError, ShapeError, SpeakerLookupError


@dataclass
class ModelConfig:
    n_bins: int = 1024
    code_dim: int = 64
    bottleneck: str = "mbv"
    temperature: float = 1.0
    # encoder
    prenet_dims: Tuple[int, ...] = (256, 128)
    bank_size: int = 8
    bank_channels: int = 32
    hidden: int = 256
    highway_layers: int = 4
    dropout: float = 0.5
    # decoder / patcher
    dec_hidden: int = 128
    dec_res_blocks: int = 2
    dec_kernel: int = 3
    base_bins: int = 64
    up_channels: Tuple[int, ...] = (16, 12, 8, 4, 2)
    patcher_bias_init: float = -4.0
    dec_output: str = "clamp"  # "clamp" (straight-through) or "sigmoid"
    # discriminator
    seg_len: int = 128
    disc_channels: Tuple[int, ...] = (8, 16, 32, 32, 64)
    disc_fc: int = 128

    def __post_init__(self):
        self.prenet_dims = tuple(self.prenet_dims)
        self.up_channels = tuple(self.up_channels)
        self.disc_channels = tuple(self.disc_channels)
        if self.dec_output not in ("clamp", "sigmoid"):
            raise ConfigurationError(f"dec_output must be 'clamp' or 'sigmoid', got {self.dec_output!r}")
        n_up = len(self.up_channels) - 1
        if self.base_bins * 2 ** n_up != self.n_bins:
            raise ShapeError(
                f"base_bins * 2**{n_up} = {self.base_bins * 2 ** n_up} must equal n_bins={self.n_bins}")


def pixel_shuffle_freq(x, factor):
    """Sub-pixel upsampling along frequency.

    ``[..., F, C * factor] -> [..., F * factor, C]``: the ``factor`` channel
    groups of each coarse bin become ``factor`` consecutive fine bins.
    """
    *lead, f, c = x.shape
    if c % factor:
        raise ShapeError(f"channel count {c} not divisible by shuffle factor {factor}")
    return x.reshape(*lead, f, factor, c // factor).reshape(*lead, f * factor, c // factor)


# ---------------------------------------------------------------------------
# Encoder


class Highway(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.h = nn.Linear(dim, dim)
        self.t = nn.Linear(dim, dim)
        nn.init.constant_(self.t.bias, -1.0)

    def forward(self, x):
        gate = torch.sigmoid(self.t(x))
        return gate * F.relu(self.h(x)) + (1.0 - gate) * x


class AsrEncoder(nn.Module):
    """CBHG-style feature extractor followed by a discrete bottleneck.

    prenet -> 1-D conv bank (kernels 1..K) -> max-pool -> conv projections
    (+ residual) -> highway stack -> bidirectional GRU -> bottleneck.
    Every layer is stride 1, so one code is emitted per input frame.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dims = (cfg.n_bins,) + cfg.prenet_dims
        self.prenet = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        width = dims[-1]
        self.bank = nn.ModuleList(
            nn.Conv1d(width, cfg.bank_channels, k, padding=k // 2) for k in range(1, cfg.bank_size + 1))
        bank_out = cfg.bank_size * cfg.bank_channels
        self.proj1 = nn.Conv1d(bank_out, width, 3, padding=1)
        self.proj2 = nn.Conv1d(width, width, 3, padding=1)
        self.highways = nn.ModuleList(Highway(width) for _ in range(cfg.highway_layers))
        self.rnn = nn.GRU(width, cfg.hidden // 2, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(cfg.dropout)
        self.bottleneck = Bottleneck(cfg.hidden, cfg.code_dim, cfg.bottleneck, cfg.temperature)

    def features(self, x):
        """Continuous pre-bottleneck features ``[B, T, hidden]``."""
        if x.shape[-1] != self.cfg.n_bins:
            raise ShapeError(f"expected {self.cfg.n_bins} frequency bins, got {x.shape[-1]}")
        for layer in self.prenet:
            x = self.dropout(F.relu(layer(x)))
        res = x
        t = x.shape[1]
        h = x.transpose(1, 2)
        h = torch.cat([F.relu(conv(h))[..., :t] for conv in self.bank], dim=1)
        h = F.max_pool1d(F.pad(h, (1, 0), mode="replicate"), 2, stride=1)
        h = F.relu(self.proj1(h))
        h = self.proj2(h).transpose(1, 2) + res
        for hw in self.highways:
            h = hw(h)
        h, _ = self.rnn(h)
        return self.dropout(h)

    def forward(self, x, noise=None):
        return self.bottleneck(self.features(x), noise=noise)


# ---------------------------------------------------------------------------
# Decoder / Patcher


class ResConv(nn.Module):
    def __init__(self, dim, kernel):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, dim, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(dim, dim, kernel, padding=kernel // 2)

    def forward(self, x):
        # x: [B, T, C]
        h = x.transpose(1, 2)
        h = self.conv2(F.leaky_relu(self.conv1(h), 0.2))
        return x + h.transpose(1, 2)


class UpBlock(nn.Module):
    def __init__(self, c_in, c_out, factor=2):
        super().__init__()
        self.factor = factor
        self.proj = nn.Linear(c_in, c_out * factor)

    def forward(self, x):
        # x: [B, T, F, C]
        return pixel_shuffle_freq(self.proj(x), self.factor)


class SpectrogramDecoder(nn.Module):
    """Codes + speaker -> ``[B, T, n_bins]`` in ``[0, 1]``.

    Time is handled by 1-D residual convolutions; frequency resolution is
    built up from ``base_bins`` by pixel-shuffle blocks that double it.
    Each layer owns its own speaker-embedding table, added to its feature
    map and broadcast over time (and frequency).
    """

    out_kind = None

    def __init__(self, cfg: ModelConfig, num_speakers, out_bias_init=0.0):
        super().__init__()
        self.cfg = cfg
        self.num_speakers = num_speakers
        h = cfg.dec_hidden
        ch = cfg.up_channels
        self.inp = nn.Linear(cfg.code_dim, h)
        self.res = nn.ModuleList(ResConv(h, cfg.dec_kernel) for _ in range(cfg.dec_res_blocks))
        self.base = nn.Linear(h, cfg.base_bins * ch[0])
        self.ups = nn.ModuleList(UpBlock(a, b) for a, b in zip(ch[:-1], ch[1:]))
        self.out = nn.Linear(ch[-1], 1)
        nn.init.constant_(self.out.bias, out_bias_init)
        widths = [h] * (1 + cfg.dec_res_blocks) + list(ch)
        self.speaker_embeddings = nn.ModuleList(nn.Embedding(num_speakers, w) for w in widths)
        for emb in self.speaker_embeddings:
            nn.init.normal_(emb.weight, std=0.1)

    def _check_speakers(self, y):
        if y.numel() and (int(y.min()) < 0 or int(y.max()) >= self.num_speakers):
            raise SpeakerLookupError(
                f"speaker index out of range [0, {self.num_speakers}): {y.tolist()}")

    def forward(self, z, y):
        self._check_speakers(y)
        emb = [e(y) for e in self.speaker_embeddings]
        b, t, _ = z.shape
        h = F.leaky_relu(self.inp(z) + emb[0][:, None], 0.2)
        for i, block in enumerate(self.res, start=1):
            h = F.leaky_relu(block(h) + emb[i][:, None], 0.2)
        k = 1 + len(self.res)
        g = self.base(h).reshape(b, t, self.cfg.base_bins, -1)
        g = F.leaky_relu(g + emb[k][:, None, None], 0.2)
        for j, up in enumerate(self.ups, start=k + 1):
            g = F.leaky_relu(up(g) + emb[j][:, None, None], 0.2)
        return _squash(self.out(g).squeeze(-1), self.out_kind or self.cfg.dec_output)


class _ClampST(torch.autograd.Function):
    """Clamp to ``[0, 1]`` going forward, identity gradient going back."""

    @staticmethod
    def forward(ctx, x):
        return x.clamp(0.0, 1.0)

    @staticmethod
    def backward(ctx, grad):
        return grad


def _squash(x, kind):
    if kind == "sigmoid":
        return torch.sigmoid(x)
    return _ClampST.apply(x)


class TtsDecoder(SpectrogramDecoder):
    def __init__(self, cfg, num_speakers):
        super().__init__(cfg, num_speakers, out_bias_init=0.0)


class TtsPatcher(SpectrogramDecoder):
    """Decoder-shaped network whose output is a spectrum mask in ``[0, 1]``."""

    out_kind = "sigmoid"

    def __init__(self, cfg, num_speakers):
        super().__init__(cfg, num_speakers, out_bias_init=cfg.patcher_bias_init)


def augment(mask, spec):
    """Residual augmentation ``P * X + X`` (unclipped)."""
    return mask * spec + spec


# ---------------------------------------------------------------------------
# Discriminator


class Discriminator(nn.Module):
    """2-D conv critic with a parallel speaker-classifier head.

    ``trunk`` (conv blocks + flatten) -> ``shared`` (FC) -> ``critic_head``
    (scalar, linear) and ``class_head`` (logits over target speakers).
    """

    def __init__(self, cfg: ModelConfig, num_classes):
        super().__init__()
        self.cfg = cfg
        layers, c_in = [], 1
        h, w = cfg.seg_len, cfg.n_bins
        for c in cfg.disc_channels:
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in, h, w = c, (h + 1) // 2, (w + 1) // 2
        layers.append(nn.Flatten())
        self.trunk = nn.Sequential(*layers)
        self.shared = nn.Sequential(nn.Linear(c_in * h * w, cfg.disc_fc), nn.LeakyReLU(0.2))
        self.critic_head = nn.Linear(cfg.disc_fc, 1)
        self.class_head = nn.Linear(cfg.disc_fc, max(num_classes, 1))

    def forward(self, x):
        if x.shape[-2:] != (self.cfg.seg_len, self.cfg.n_bins):
            raise ShapeError(
                f"critic expects segments of shape [{self.cfg.seg_len}, {self.cfg.n_bins}], "
                f"got {list(x.shape[-2:])}")
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        h = self.shared(self.trunk(x[:, None]))
        score = self.critic_head(h).squeeze(-1)
        logits = self.class_head(h)
        if squeeze:
            return score[0], logits[0]
        return score, logits


def check_finite(tensor, what, step=None):
    if not torch.isfinite(tensor).all():
        raise DivergenceError(f"non-finite values in {what}", step=step)
    return tensor
