"""Objective metrics: bitrate, distinct units and the speaker-probe accuracy.

Bitrate follows the unit-discovery definition: symbol rate times empirical
symbol entropy,

    B = (M / D) * H,   H = -sum_s p(s) log2 p(s)

with ``M`` symbols observed over ``D`` seconds of audio.  A symbol is one
frame-level code unless ``collapse_repeats`` merges runs of identical
consecutive codes first.
"""

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, IngestionError, NumericInputError
from .units import read_unit_file


@dataclass
class UnitSequenceCorpus:
    sequences: Dict[str, List[str]]
    durations: Dict[str, float]

    def __post_init__(self):
        missing = sorted(set(self.sequences) - set(self.durations))
        if missing:
            raise IngestionError(f"no duration for utterances: {', '.join(missing[:5])}")
        for k, d in self.durations.items():
            if not d > 0:
                raise NumericInputError(f"duration of {k!r} must be positive, got {d}")

    @property
    def total_duration(self):
        return float(sum(self.durations[k] for k in self.sequences))

    def symbols(self, collapse_repeats=False):
        for key in sorted(self.sequences):
            prev = None
            for s in self.sequences[key]:
                if collapse_repeats and s == prev:
                    continue
                prev = s
                yield s


def load_unit_corpus(units_dir, durations):
    """Read every ``*.txt`` unit file under ``units_dir``.

    ``durations`` maps utterance name (file stem) to seconds, or is a path
    to a JSON file with that mapping.
    """
    if not isinstance(durations, dict):
        durations = json.loads(Path(durations).read_text())
    seqs = {p.stem: read_unit_file(p) for p in sorted(Path(units_dir).glob("*.txt"))}
    if not seqs:
        raise IngestionError(f"no unit files in {units_dir}")
    return UnitSequenceCorpus(seqs, {k: float(durations[k]) for k in seqs if k in durations})


def symbol_entropy(symbols):
    counts = np.array(list(Counter(symbols).values()), dtype=np.float64)
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(max(0.0, -np.sum(p * np.log2(p))))


def bitrate(corpus, collapse_repeats=False):
    """Bits per second carried by the unit sequences."""
    duration = corpus.total_duration
    if not duration > 0:
        raise NumericInputError("corpus duration must be positive")
    symbols = list(corpus.symbols(collapse_repeats))
    if not symbols:
        raise NumericInputError("corpus contains no symbols")
    return len(symbols) / duration * symbol_entropy(symbols)


def distinct_units(corpus, collapse_repeats=False):
    return len(set(corpus.symbols(collapse_repeats)))


def metrics_report(corpus, collapse_repeats=False, probe_accuracy=None):
    symbols = list(corpus.symbols(collapse_repeats))
    return {
        "bitrate": bitrate(corpus, collapse_repeats),
        "distinct": len(set(symbols)),
        "symbol_count": len(symbols),
        "duration_s": corpus.total_duration,
        "probe_accuracy": probe_accuracy,
    }


# ---------------------------------------------------------------------------
# Speaker probe


@dataclass
class ProbeConfig:
    seg_len: int = 128
    channels: int = 64
    steps: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    heldout_fraction: float = 0.25
    seed: int = 0


@dataclass
class LabeledUtterance:
    key: str
    frames: np.ndarray  # [T, n_mels]
    label: int


class ProbeNet(nn.Module):
    """Three conv blocks over time, global average pooling, linear head."""

    def __init__(self, n_mels, n_classes, channels=64):
        super().__init__()
        blocks, c_in = [], n_mels
        for _ in range(3):
            blocks += [nn.Conv1d(c_in, channels, 5, padding=2), nn.ReLU(), nn.MaxPool1d(2, ceil_mode=True)]
            c_in = channels
        self.convs = nn.Sequential(*blocks)
        self.head = nn.Linear(channels, n_classes)

    def forward(self, x):
        # x: [B, T, n_mels]
        return self.head(self.convs(x.transpose(1, 2)).mean(dim=-1))


@dataclass
class ProbeClassifier:
    net: ProbeNet
    labels: List[str]
    cfg: ProbeConfig
    heldout: List[LabeledUtterance] = field(default_factory=list)
    heldout_accuracy: Optional[float] = None
    trained: bool = False

    def predict(self, frames):
        self.net.eval()
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))[None]
            return int(self.net(x).argmax(dim=-1))


def chunk_segments(items, seg_len, min_len=16):
    """Split utterances into consecutive ``seg_len`` pieces (tails shorter than ``min_len`` dropped)."""
    out = []
    for u in items:
        for s in range(0, u.frames.shape[0], seg_len):
            piece = u.frames[s:s + seg_len]
            if piece.shape[0] >= min_len:
                out.append(LabeledUtterance(u.key, piece, u.label))
    return out


def _split_by_utterance(items, fraction, rng):
    by_label = {}
    for key in sorted({u.key for u in items}):
        label = next(u.label for u in items if u.key == key)
        by_label.setdefault(label, []).append(key)
    held = set()
    for label, keys in sorted(by_label.items()):
        keys = list(keys)
        rng.shuffle(keys)
        k = max(1, int(round(fraction * len(keys)))) if len(keys) > 1 else 0
        held.update(keys[:k])
    return [u for u in items if u.key not in held], [u for u in items if u.key in held]


def train_probe(utterances: Sequence[LabeledUtterance], labels, cfg=ProbeConfig()):
    """Train a speaker classifier on real features; held-out split is disjoint by utterance."""
    present = sorted({u.label for u in utterances})
    if len(present) < 2:
        raise ConfigurationError("probe training needs at least two speakers")
    rng = np.random.default_rng(cfg.seed)
    train, held = _split_by_utterance(list(utterances), cfg.heldout_fraction, rng)
    torch.manual_seed(cfg.seed)
    n_mels = utterances[0].frames.shape[1]
    net = ProbeNet(n_mels, len(labels), cfg.channels)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    for _ in range(cfg.steps):
        xs, ys = [], []
        for i in rng.integers(len(train), size=cfg.batch_size):
            u = train[i]
            t = u.frames.shape[0]
            if t <= cfg.seg_len:
                seg = np.zeros((cfg.seg_len, n_mels), dtype=np.float32)
                seg[:t] = u.frames
            else:
                s = rng.integers(t - cfg.seg_len + 1)
                seg = u.frames[s:s + cfg.seg_len]
            xs.append(seg)
            ys.append(u.label)
        net.train()
        loss = F.cross_entropy(net(torch.from_numpy(np.stack(xs).astype(np.float32))), torch.tensor(ys))
        opt.zero_grad()
        loss.backward()
        opt.step()
    probe = ProbeClassifier(net, list(labels), cfg, chunk_segments(held, cfg.seg_len), trained=True)
    probe.heldout_accuracy = probe_accuracy(probe, probe.heldout) if probe.heldout else None
    return probe


def probe_accuracy(probe, converted):
    """Fraction of ``(frames, intended_label)`` items the probe assigns to their label.

    ``converted`` may hold :class:`LabeledUtterance` objects or plain pairs.
    """
    items = [(u.frames, u.label) if isinstance(u, LabeledUtterance) else u for u in converted]
    if not items:
        raise NumericInputError("no converted segments to score")
    hits = sum(probe.predict(frames) == label for frames, label in items)
    return hits / len(items)
