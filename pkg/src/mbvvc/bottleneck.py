"""Discrete encoding layers: Multilabel-Binary Vectors and the baselines.

An MBV layer projects each frame to ``n`` two-channel logit pairs, samples a
two-way Gumbel-Softmax per pair and keeps channel 0, giving ``n`` independent
binary attributes per frame (``2**n`` possible codes).  The one-hot baseline
runs a single ``n``-way Gumbel-Softmax per frame instead, and the continuous
baseline is a bare linear projection.

Noise and straight-through behaviour:

* training: ``softmax((logits + g) / tau)`` with ``g ~ Gumbel(0, 1)``;
  downstream layers see the exact one-hot argmax, gradients flow through
  the soft sample.
* eval: no noise, deterministic argmax of the logits.
"""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericInputError, ShapeError

_EPS = 1e-20


@dataclass(frozen=True)
class GumbelConfig:
    temperature: float = 1.0
    hard_forward: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise NumericInputError(f"temperature must be > 0, got {self.temperature}")


class _StraightThrough(torch.autograd.Function):
    """Forward returns ``hard`` bit-exactly, backward routes the gradient to ``soft``."""

    @staticmethod
    def forward(ctx, hard, soft):
        return hard.clone()

    @staticmethod
    def backward(ctx, grad):
        return None, grad


def straight_through(hard, soft):
    return _StraightThrough.apply(hard.detach(), soft)


def sample_gumbel(shape, generator=None, dtype=torch.float32, device=None):
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    return -torch.log(-torch.log(u + _EPS) + _EPS)


def _check_finite(logits):
    if not torch.isfinite(logits).all():
        raise NumericInputError("logits contain non-finite values")


def gumbel_softmax(logits, cfg=GumbelConfig(), noise=None, generator=None, sample=True):
    """Gumbel-Softmax over the last axis.

    Returns ``(hard, soft)``.  ``noise`` overrides the sampled Gumbel noise
    (same shape as ``logits``); ``sample=False`` disables noise entirely.
    When ``cfg.hard_forward`` is set, ``hard`` carries exact one-hot values
    with the straight-through gradient of ``soft``; otherwise ``hard`` is a
    detached one-hot.
    """
    _check_finite(logits)
    if sample:
        if noise is None:
            noise = sample_gumbel(logits.shape, generator, logits.dtype, logits.device)
        perturbed = logits + noise
    else:
        perturbed = logits
    soft = F.softmax(perturbed / cfg.temperature, dim=-1)
    index = perturbed.argmax(dim=-1, keepdim=True)
    hard = torch.zeros_like(soft).scatter_(-1, index, 1.0)
    if cfg.hard_forward:
        hard = straight_through(hard, soft)
    return hard, soft


def gumbel_softmax_2way(logit_pairs, cfg=GumbelConfig(), noise=None, generator=None, sample=True):
    """Two-channel Gumbel-Softmax; ``logit_pairs`` has a trailing axis of size 2."""
    if logit_pairs.shape[-1] != 2:
        raise ShapeError(f"expected trailing axis of 2 channels, got shape {tuple(logit_pairs.shape)}")
    return gumbel_softmax(logit_pairs, cfg, noise=noise, generator=generator, sample=sample)


@dataclass
class MbvCode:
    """``codes``: exact {0,1} values ``[..., T, n]`` (straight-through when in a graph).

    ``soft_codes`` is the relaxed channel-0 probability of the same shape.
    """

    codes: torch.Tensor
    soft_codes: torch.Tensor
    variant = "mbv"

    @property
    def n(self):
        return self.codes.shape[-1]

    @property
    def payload(self):
        return self.codes

    def bits(self):
        """Detached uint8 copy of the codes."""
        return self.codes.detach().to(torch.uint8)


@dataclass
class EncoderOutput:
    variant: str
    payload: torch.Tensor
    soft_payload: Optional[torch.Tensor] = None

    @property
    def n(self):
        return self.payload.shape[-1]


def _project(features, weight, bias):
    if features.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"feature width {features.shape[-1]} does not match projection input {weight.shape[0]}")
    out = features @ weight
    if bias is not None:
        out = out + bias
    return out


def mbv_encode(features, weight, bias=None, cfg=GumbelConfig(), noise=None, generator=None, sample=True):
    """Project ``[..., T, d]`` features with ``weight [d, 2n]`` and binarize.

    Output column pairs ``(2i, 2i+1)`` are the two channels of bit ``i``.
    """
    if weight.ndim != 2 or weight.shape[1] % 2:
        raise ShapeError(f"MBV projection must be [d, 2n], got {tuple(weight.shape)}")
    logits = _project(features, weight, bias)
    pairs = logits.unflatten(-1, (weight.shape[1] // 2, 2))
    hard, soft = gumbel_softmax_2way(pairs, cfg, noise=noise, generator=generator, sample=sample)
    return MbvCode(hard[..., 0], soft[..., 0])


def onehot_encode(features, weight, bias=None, cfg=GumbelConfig(), noise=None, generator=None, sample=True):
    """``weight [d, n]``; one ``n``-way Gumbel-Softmax per frame."""
    logits = _project(features, weight, bias)
    hard, soft = gumbel_softmax(logits, cfg, noise=noise, generator=generator, sample=sample)
    return EncoderOutput("onehot", hard, soft)


def continuous_encode(features, weight, bias=None):
    return EncoderOutput("continuous", _project(features, weight, bias))


VARIANTS = ("mbv", "onehot", "continuous")


class Bottleneck(nn.Module):
    """Learned projection + discretization, selectable by ``variant``."""

    def __init__(self, in_dim, n, variant="mbv", temperature=1.0):
        super().__init__()
        if variant not in VARIANTS:
            raise ShapeError(f"unknown bottleneck variant {variant!r}; expected one of {VARIANTS}")
        if n < 1:
            raise ShapeError(f"encoding dimension must be >= 1, got {n}")
        self.variant = variant
        self.n = n
        self.temperature = temperature
        out = 2 * n if variant == "mbv" else n
        self.weight = nn.Parameter(torch.empty(in_dim, out))
        self.bias = nn.Parameter(torch.zeros(out))
        nn.init.xavier_uniform_(self.weight)
        self.generator = None

    def forward(self, features, noise=None):
        cfg = GumbelConfig(self.temperature)
        sample = self.training
        if self.variant == "mbv":
            return mbv_encode(features, self.weight, self.bias, cfg, noise, self.generator, sample)
        if self.variant == "onehot":
            return onehot_encode(features, self.weight, self.bias, cfg, noise, self.generator, sample)
        return continuous_encode(features, self.weight, self.bias)
