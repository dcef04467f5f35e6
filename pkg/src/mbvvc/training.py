"""Stage-1 autoencoder training and stage-2 target-guided adversarial training.

Stage 1 minimises the L1 reconstruction error of ``TTS(ASR(x), y)`` over
uniformly sampled ``(segment, speaker)`` pairs, updating encoder and decoder
jointly.

Stage 2 freezes encoder and decoder and trains the patcher ``P`` whose mask
augments the decoder output, ``X' = P * X + X``.  Each cycle runs
``critic_iters`` WGAN-GP critic updates, ``gen_iters`` patcher updates
against the critic, then one target-guided reconstruction update of the
patcher on target-speaker speech.
"""

import csv
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .data import batch_source, sample_batch
from .errors import ConfigurationError, DivergenceError
from .networks import augment

log = logging.getLogger(__name__)


@dataclass
class StageConfig:
    batch_size: int = 16
    stage1_steps: int = 200000
    stage2_steps: int = 50000
    critic_iters: int = 5
    gen_iters: int = 1
    gp_weight: float = 10.0
    cls_weight: float = 1.0
    gen_cls: bool = False
    lr_ae: float = 5e-4
    betas_ae: Tuple[float, float] = (0.9, 0.999)
    lr_critic: float = 1e-4
    lr_patcher: float = 1e-4
    betas_adv: Tuple[float, float] = (0.5, 0.9)
    checkpoint_every: int = 5000
    keep_last: int = 3
    prefetch: int = 0

    def __post_init__(self):
        self.betas_ae = tuple(self.betas_ae)
        self.betas_adv = tuple(self.betas_adv)
        for name in ("batch_size", "critic_iters", "gen_iters", "checkpoint_every", "keep_last"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("stage1_steps", "stage2_steps", "prefetch"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.gp_weight < 0 or self.cls_weight < 0:
            raise ConfigurationError("loss weights must be >= 0")


def mae(x, y):
    return (x - y).abs().mean()


def _finite(loss, what, state, **snapshot):
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite {what}", step=state.step + state.adv_step,
                              snapshot={k: float(v) for k, v in snapshot.items()})
    return loss


# ---------------------------------------------------------------------------
# Stage 1


def reconstruction_step(batch, state):
    state.asr.train()
    state.tts.train()
    code = state.asr(batch.x)
    out = state.tts(code.payload, batch.y)
    loss = _finite(mae(batch.x, out), "reconstruction loss", state)
    state.opt_ae.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_ae.step()
    state.step += 1
    return loss.item()


# ---------------------------------------------------------------------------
# Stage 2


def gradient_penalty(critic, real, fake, weight=10.0, alpha=None, generator=None):
    """``weight * mean((||grad critic(x_hat)||_2 - 1)**2)`` over interpolates.

    ``x_hat = alpha * real + (1 - alpha) * fake`` with one ``alpha`` per
    sample.  The graph is kept so the penalty can be differentiated.
    """
    if alpha is None:
        alpha = torch.rand((real.shape[0],) + (1,) * (real.ndim - 1), generator=generator,
                           dtype=real.dtype, device=real.device)
    x_hat = (alpha * real.detach() + (1 - alpha) * fake.detach()).requires_grad_(True)
    score = critic(x_hat)
    grad, = torch.autograd.grad(score.sum(), x_hat, create_graph=True)
    norm = grad.flatten(1).norm(2, dim=1)
    if not torch.isfinite(norm).all():
        raise DivergenceError("non-finite critic gradient norm")
    return weight * ((norm - 1.0) ** 2).mean()


def frozen_conversion(state, x, y):
    """``X(x, y)`` and the codes from the frozen encoder/decoder (no gradient)."""
    state.asr.eval()
    state.tts.eval()
    with torch.no_grad():
        code = state.asr(x)
        return code.payload, state.tts(code.payload, y)


def patched(state, x, y, codes=None, base=None):
    """``X'(x, y) = P * X + X`` with gradient flowing into the patcher only."""
    if codes is None or base is None:
        codes, base = frozen_conversion(state, x, y)
    state.patcher.train()
    return augment(state.patcher(codes, y), base)


def discriminator_step(real, fake, state):
    """One critic update.  Returns ``(wgan_loss, gp_value, cls_loss)``.

    ``real`` is a target-speaker :class:`~mbvvc.data.Batch`; ``fake`` a
    tensor of augmented conversions.
    """
    tc = state.train_cfg
    disc = state.disc
    disc.train()
    fake = fake.detach()
    d_real, logits = disc(real.x)
    d_fake, _ = disc(fake)
    wgan = d_fake.mean() - d_real.mean()
    gp = gradient_penalty(lambda v: disc(v)[0], real.x, fake, tc.gp_weight)
    labels = torch.tensor(state.speakers.target_index(real.y.tolist()), dtype=torch.long)
    cls = F.cross_entropy(logits, labels)
    loss = _finite(wgan + gp + tc.cls_weight * cls, "critic loss", state,
                   wgan=wgan.item(), gp=gp.item(), cls=cls.item())
    state.opt_disc.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_disc.step()
    return wgan.item(), gp.item(), cls.item()


def generator_step(source, target_speakers, state):
    """Patcher update maximizing the critic score of ``X'(x_s, y_t)``."""
    tc = state.train_cfg
    disc = state.disc
    disc.eval()
    disc.requires_grad_(False)
    try:
        fake = patched(state, source.x, target_speakers)
        score, logits = disc(fake)
        loss = -score.mean()
        if tc.gen_cls:
            labels = torch.tensor(state.speakers.target_index(target_speakers.tolist()), dtype=torch.long)
            loss = loss + tc.cls_weight * F.cross_entropy(logits, labels)
        _finite(loss, "generator loss", state)
        state.opt_patcher.zero_grad(set_to_none=True)
        loss.backward()
        state.opt_patcher.step()
    finally:
        disc.requires_grad_(True)
    return loss.item()


def target_guided_step(target, state):
    """Patcher update on ``|x_t - X'(x_t, y_t)|``."""
    out = patched(state, target.x, target.y)
    loss = _finite(mae(target.x, out), "target-guided loss", state)
    state.opt_patcher.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_patcher.step()
    return loss.item()


# ---------------------------------------------------------------------------
# Loops and bookkeeping


class LossLog:
    """Append-only ``step,loss_name,value`` CSV (plus an in-memory copy)."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not self.path.exists():
                with open(self.path, "w", newline="") as fh:
                    csv.writer(fh).writerow(["step", "loss_name", "value"])

    def add(self, step, name, value):
        self.rows.append((step, name, float(value)))
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([step, name, repr(float(value))])

    def values(self, name):
        return [v for _, n, v in self.rows if n == name]


class CheckpointKeeper:
    """Periodic checkpoints: keep the newest ``keep_last`` plus the best-loss one."""

    def __init__(self, directory, prefix, keep_last=3):
        self.dir = Path(directory)
        self.prefix = prefix
        self.keep_last = keep_last
        self.best = float("inf")
        self.saved = []

    def save(self, state, step, loss):
        path = state.save(self.dir / f"{self.prefix}_step{step:08d}.npz")
        self.saved.append(path)
        if loss < self.best:
            self.best = loss
            shutil.copyfile(path, self.dir / f"{self.prefix}_best.npz")
        while len(self.saved) > self.keep_last:
            self.saved.pop(0).unlink(missing_ok=True)
        return path


def _rng(seed):
    return np.random.default_rng(seed)


def train_stage1(corpus, cfg, state, steps=None, loss_log=None, checkpoint_dir=None, seed=None):
    """Run ``steps`` (default ``cfg.stage1_steps``) reconstruction updates."""
    steps = cfg.stage1_steps if steps is None else steps
    if steps == 0:
        return state
    seed = state.seed if seed is None else seed
    rng = _rng([seed, 1, state.step])
    torch.manual_seed(seed * 1000003 + state.step)
    loss_log = loss_log if loss_log is not None else LossLog()
    keeper = CheckpointKeeper(checkpoint_dir, "ae", cfg.keep_last) if checkpoint_dir else None
    seg = state.model_cfg.seg_len
    source = batch_source(lambda: sample_batch(corpus, rng, cfg.batch_size, seg), cfg.prefetch)
    recent = []
    try:
        for _ in range(steps):
            loss = reconstruction_step(source(), state)
            loss_log.add(state.step, "rec", loss)
            recent = (recent + [loss])[-100:]
            if keeper and state.step % cfg.checkpoint_every == 0:
                keeper.save(state, state.step, float(np.mean(recent)))
            if state.step % 100 == 0:
                log.info("stage1 step %d rec %.4f", state.step, float(np.mean(recent)))
    finally:
        if hasattr(source, "close"):
            source.close()
    return state


def train_stage2(source_corpus, target_corpus, cfg, state, steps=None, loss_log=None,
                 checkpoint_dir=None, seed=None):
    """Run ``steps`` (default ``cfg.stage2_steps``) adversarial + target-guided cycles."""
    state.require_stage1()
    state.init_adversarial()
    steps = cfg.stage2_steps if steps is None else steps
    if steps == 0:
        return state
    if not target_corpus.utterances or not source_corpus.utterances:
        raise ConfigurationError("stage 2 needs non-empty source and target corpora")
    seed = state.seed if seed is None else seed
    rng = _rng([seed, 2, state.adv_step])
    torch.manual_seed(seed * 1000003 + 7 + state.adv_step)
    loss_log = loss_log if loss_log is not None else LossLog()
    keeper = CheckpointKeeper(checkpoint_dir, "adv", cfg.keep_last) if checkpoint_dir else None
    seg = state.model_cfg.seg_len
    targets = np.asarray(state.speakers.target_ids)
    bs = cfg.batch_size

    def make():
        crit = []
        for _ in range(cfg.critic_iters):
            real = sample_batch(target_corpus, rng, bs, seg)
            src = sample_batch(source_corpus, rng, bs, seg)
            crit.append((real, src, torch.from_numpy(rng.choice(targets, bs)).long()))
        gens = [(sample_batch(source_corpus, rng, bs, seg), torch.from_numpy(rng.choice(targets, bs)).long())
                for _ in range(cfg.gen_iters)]
        return crit, gens, sample_batch(target_corpus, rng, bs, seg)

    source = batch_source(make, cfg.prefetch)
    recent = []
    try:
        for _ in range(steps):
            crit, gens, tgt = source()
            for real, src, y_t in crit:
                codes, base = frozen_conversion(state, src.x, y_t)
                with torch.no_grad():
                    state.patcher.eval()
                    fake = augment(state.patcher(codes, y_t), base)
                w, gp, cls = discriminator_step(real, fake, state)
            for src, y_t in gens:
                g = generator_step(src, y_t, state)
            rec = target_guided_step(tgt, state)
            state.adv_step += 1
            for name, v in (("wgan", w), ("gp", gp), ("cls", cls), ("gen", g), ("patch_rec", rec)):
                loss_log.add(state.adv_step, name, v)
            recent = (recent + [rec])[-100:]
            if keeper and state.adv_step % cfg.checkpoint_every == 0:
                keeper.save(state, state.adv_step, float(np.mean(recent)))
            if state.adv_step % 10 == 0:
                log.info("stage2 cycle %d wgan %.4f gp %.4f gen %.4f rec %.4f", state.adv_step, w, gp, g, rec)
    finally:
        if hasattr(source, "close"):
            source.close()
    return state
