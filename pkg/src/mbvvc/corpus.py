"""Corpus manifests, feature caching and the synthetic toy corpus.

Layout on disk follows the speaker-keyed convention::

    <root>/<speaker>/<utterance>.wav

A source root and a target root are scanned separately and tagged.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from .archive import load_arrays, save_arrays
from .audio import (DEFAULT_AUDIO, AudioWaveform, load_waveform, save_waveform,
                    waveform_to_spectrogram)
from .data import SOURCE, TARGET, Corpus, SpeakerTable, Utterance
from .errors import ConfigurationError, IngestionError, MbvError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
FEATURE_VERSION = 1


@dataclass
class ManifestEntry:
    speaker: str
    path: str  # relative to the set root
    duration: float


@dataclass
class CorpusManifest:
    roots: Dict[str, str] = field(default_factory=dict)
    speakers: Dict[str, str] = field(default_factory=dict)  # name -> set tag
    entries: Dict[str, List[ManifestEntry]] = field(default_factory=dict)  # tag -> entries
    rejects: List[Dict[str, str]] = field(default_factory=list)

    def __len__(self):
        return sum(len(v) for v in self.entries.values())

    def speaker_table(self):
        names = sorted(self.speakers)
        return SpeakerTable(names, [self.speakers[n] for n in names])

    def merge(self, other):
        for name, tag in other.speakers.items():
            if self.speakers.get(name, tag) != tag:
                raise ConfigurationError(f"speaker {name!r} appears in both source and target sets")
        out = CorpusManifest(dict(self.roots), dict(self.speakers), {k: list(v) for k, v in self.entries.items()},
                             list(self.rejects))
        out.roots.update(other.roots)
        out.speakers.update(other.speakers)
        for tag, entries in other.entries.items():
            out.entries.setdefault(tag, []).extend(entries)
        out.rejects.extend(other.rejects)
        return out

    def files(self):
        """Yield ``(tag, entry, absolute_path)`` in manifest order."""
        for tag in sorted(self.entries):
            root = Path(self.roots[tag])
            for e in self.entries[tag]:
                yield tag, e, root / e.path

    def to_dict(self):
        return {
            "version": MANIFEST_VERSION,
            "roots": self.roots,
            "speakers": dict(sorted(self.speakers.items())),
            "entries": {t: [asdict(e) for e in es] for t, es in sorted(self.entries.items())},
            "rejects": self.rejects,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MANIFEST_VERSION:
            raise ConfigurationError(f"unsupported manifest version {d.get('version')}")
        return cls(d["roots"], d["speakers"],
                   {t: [ManifestEntry(**e) for e in es] for t, es in d["entries"].items()}, d.get("rejects", []))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def scan_corpus(root, layout):
    """Scan ``root/<speaker>/*.wav`` and tag every speaker with ``layout``.

    Unreadable files are recorded in ``rejects`` and skipped.
    """
    if layout not in (SOURCE, TARGET):
        raise ConfigurationError(f"layout must be {SOURCE!r} or {TARGET!r}, got {layout!r}")
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"corpus root {root} is not a directory")
    manifest = CorpusManifest(roots={layout: str(root.resolve())}, entries={layout: []})
    for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for wav_path in sorted(spk_dir.glob("*.wav")):
            rel = wav_path.relative_to(root).as_posix()
            try:
                wav = load_waveform(wav_path)
            except MbvError as exc:
                manifest.rejects.append({"path": rel, "reason": str(exc)})
                continue
            manifest.speakers[spk_dir.name] = layout
            manifest.entries[layout].append(ManifestEntry(spk_dir.name, rel, round(wav.duration, 6)))
    if not manifest.entries[layout]:
        raise IngestionError(f"no readable WAV files under {root}")
    return manifest


# ---------------------------------------------------------------------------
# Feature cache


def feature_key(path, audio_cfg=DEFAULT_AUDIO):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    h.update(json.dumps(asdict(audio_cfg), sort_keys=True).encode())
    h.update(str(FEATURE_VERSION).encode())
    return h.hexdigest()[:24]


def cached_spectrogram(path, cache_dir, audio_cfg=DEFAULT_AUDIO):
    """Spectrogram frames for ``path``, computed once per (file content, feature config)."""
    key = feature_key(path, audio_cfg)
    cache = Path(cache_dir) / f"{key}.npz"
    if cache.exists():
        arrays, meta = load_arrays(cache)
        if meta and meta.get("format_version") == FEATURE_VERSION:
            return arrays["frames"]
    frames = waveform_to_spectrogram(load_waveform(path, audio_cfg.sample_rate), audio_cfg).frames
    save_arrays(cache, {"frames": frames},
                {"format_version": FEATURE_VERSION, "shape": list(frames.shape), "dtype": str(frames.dtype),
                 "source": str(path)})
    return frames


def load_corpus(manifest, cache_dir, audio_cfg=DEFAULT_AUDIO, speakers=None):
    """Materialize spectrograms for every manifest entry (cached)."""
    speakers = speakers or manifest.speaker_table()
    corpus = Corpus(speakers)
    for tag, entry, path in manifest.files():
        frames = cached_spectrogram(path, cache_dir, audio_cfg)
        corpus.utterances.append(Utterance(f"{tag}/{entry.path}", speakers.lookup(entry.speaker).id, frames))
    return corpus


# ---------------------------------------------------------------------------
# Toy corpus

TOY_PHONES = 8
TOY_PARTIALS = 6
TOY_PHONES_PER_CONTENT = 8


def toy_speaker_params(n_speakers):
    """Per-speaker (spectral tilt in dB/octave, frequency-scale factor)."""
    tilts = np.linspace(-9.0, 0.0, n_speakers)
    shifts = np.linspace(0.85, 1.2, n_speakers)
    return [(float(t), float(s)) for t, s in zip(tilts, shifts)]


def toy_speaker_names(n_speakers):
    n_src = (n_speakers + 1) // 2
    return ([(f"S{i + 1:03d}", SOURCE) for i in range(n_src)]
            + [(f"V{i + 1:03d}", TARGET) for i in range(n_speakers - n_src)])


def _burst(freqs, amps, duration, sr, rng, ramp=0.01):
    t = np.arange(int(round(duration * sr))) / sr
    phases = rng.uniform(0, 2 * np.pi, len(freqs))
    x = np.sum(amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]), axis=0)
    n_ramp = int(ramp * sr)
    env = np.ones_like(t)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_ramp) / n_ramp)
    env[:n_ramp] = fade
    env[-n_ramp:] = fade[::-1]
    return x * env


def synthesize_toy_utterance(phone_seq, inventory, tilt, shift, rng, sr=16000):
    """Concatenate sinusoid bursts for ``phone_seq`` as spoken by a (tilt, shift) speaker."""
    pieces = [np.zeros(int(0.1 * sr))]
    for p in phone_seq:
        base_f, base_a = inventory[p]
        freqs = base_f * shift
        amps = base_a * (freqs / 1000.0) ** (tilt / (20 * np.log10(2)))
        dur = 0.2 * rng.uniform(0.8, 1.2)
        pieces.append(_burst(freqs, amps, dur, sr, rng))
        pieces.append(np.zeros(int(rng.uniform(0.03, 0.06) * sr)))
    pieces.append(np.zeros(int(0.1 * sr)))
    x = np.concatenate(pieces)
    return x * (0.9 / np.max(np.abs(x)))


def make_toy_corpus(out_dir, n_speakers=2, n_contents=4, utt_per_pair=5, seed=0):
    """Write a synthetic corpus where content and speaker are known by construction.

    A content is a fixed sequence of "phones", each a burst of sinusoids.  A
    speaker scales every frequency by a fixed factor and applies a fixed
    spectral tilt.  Speakers are split into ``source/`` and ``target/`` roots;
    ``labels.json`` records the ground truth for every file.
    """
    if n_speakers < 2 or n_contents < 2:
        raise ConfigurationError("toy corpus needs at least 2 speakers and 2 contents")
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    inventory = []
    for _ in range(TOY_PHONES):
        freqs = np.sort(np.exp(rng.uniform(np.log(200.0), np.log(5000.0), TOY_PARTIALS)))
        inventory.append((freqs, rng.uniform(0.3, 1.0, TOY_PARTIALS)))
    contents = [rng.integers(TOY_PHONES, size=TOY_PHONES_PER_CONTENT).tolist() for _ in range(n_contents)]
    params = toy_speaker_params(n_speakers)
    labels = {}
    for (name, tag), (tilt, shift) in zip(toy_speaker_names(n_speakers), params):
        for c, phones in enumerate(contents):
            for u in range(utt_per_pair):
                x = synthesize_toy_utterance(phones, inventory, tilt, shift, rng)
                rel = f"{name}/{name}_c{c:02d}_u{u:02d}.wav"
                save_waveform(out / tag / rel, AudioWaveform(x))
                labels[f"{tag}/{rel}"] = {"speaker": name, "set": tag, "content": c, "phones": phones,
                                          "tilt_db_per_octave": tilt, "freq_scale": shift}
    (out / "labels.json").write_text(json.dumps(labels, indent=1, sort_keys=True) + "\n")
    return out
