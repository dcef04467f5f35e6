"""In-memory corpora, speaker tables and uniform segment sampling."""

import queue
import threading
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch

from .errors import ConfigurationError, SpeakerLookupError

SOURCE, TARGET = "source", "target"


@dataclass(frozen=True)
class SpeakerId:
    id: int
    set_tag: str


class SpeakerTable:
    """Fixed speaker index shared by the decoder embeddings and the critic.

    Global ids follow lexicographic name order.  Target speakers also get a
    dense index used by the critic's classifier head.
    """

    def __init__(self, names, tags):
        pairs = sorted(zip(names, tags))
        self.names = [n for n, _ in pairs]
        self.tags = [t for _, t in pairs]
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError("duplicate speaker names in speaker table")
        for t in self.tags:
            if t not in (SOURCE, TARGET):
                raise ConfigurationError(f"bad speaker set tag {t!r}")
        self._index = {n: i for i, n in enumerate(self.names)}
        self.target_ids = [i for i, t in enumerate(self.tags) if t == TARGET]
        self.source_ids = [i for i, t in enumerate(self.tags) if t == SOURCE]
        self._target_pos = {g: k for k, g in enumerate(self.target_ids)}

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, SpeakerTable) and self.to_dict() == other.to_dict()

    def lookup(self, name):
        try:
            i = self._index[name]
        except KeyError:
            raise SpeakerLookupError(f"unknown speaker {name!r}") from None
        return SpeakerId(i, self.tags[i])

    def target_index(self, global_ids):
        """Map global ids of target speakers to classifier-head indices."""
        try:
            return [self._target_pos[int(g)] for g in global_ids]
        except KeyError as exc:
            raise SpeakerLookupError(f"speaker {exc.args[0]} is not a target speaker") from None

    def to_dict(self):
        return {"names": list(self.names), "tags": list(self.tags)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["tags"])


@dataclass
class Utterance:
    key: str
    speaker: int
    frames: np.ndarray  # [T, bins] normalized


@dataclass
class TrainingPair:
    segment: np.ndarray
    speaker: SpeakerId
    corpus_tag: str


@dataclass
class Batch:
    x: torch.Tensor  # [B, r, bins]
    y: torch.Tensor  # [B] global speaker ids


@dataclass
class Corpus:
    speakers: SpeakerTable
    utterances: List[Utterance] = field(default_factory=list)

    def subset(self, tag):
        return Corpus(self.speakers, [u for u in self.utterances if self.speakers.tags[u.speaker] == tag])

    def __len__(self):
        return len(self.utterances)


def pad_frames(frames, length, value=0.0):
    """Pad ``[T, bins]`` up to ``length`` frames with the floor value."""
    t = frames.shape[0]
    if t >= length:
        return frames
    pad = np.full((length - t, frames.shape[1]), value, dtype=frames.dtype)
    return np.concatenate([frames, pad], axis=0)


def sample_training_pair(corpus, rng, seg_len=128):
    """Uniform utterance, then uniform start offset within it."""
    if not corpus.utterances:
        raise ConfigurationError("cannot sample from an empty corpus")
    utt = corpus.utterances[rng.integers(len(corpus.utterances))]
    frames = pad_frames(utt.frames, seg_len)
    start = rng.integers(frames.shape[0] - seg_len + 1)
    spk = utt.speaker
    return TrainingPair(frames[start:start + seg_len], SpeakerId(spk, corpus.speakers.tags[spk]),
                        corpus.speakers.tags[spk])


def collate(pairs):
    x = torch.from_numpy(np.stack([p.segment for p in pairs]).astype(np.float32))
    y = torch.tensor([p.speaker.id for p in pairs], dtype=torch.long)
    return Batch(x, y)


def sample_batch(corpus, rng, batch_size=16, seg_len=128):
    return collate([sample_training_pair(corpus, rng, seg_len) for _ in range(batch_size)])


class Prefetcher:
    """Produce batches from ``make_batch()`` in a background thread, in order.

    The producer is the only consumer of the random stream, so output order
    (and content) matches calling ``make_batch`` inline.
    """

    def __init__(self, make_batch, depth):
        self._make = make_batch
        self._queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        while not self._stop.is_set():
            try:
                item = self._make()
            except Exception as exc:  # handed to the consumer
                item = exc
            while not self._stop.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def __call__(self):
        item = self._queue.get()
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=5)


def batch_source(make_batch, prefetch=0):
    if prefetch and prefetch > 0:
        return Prefetcher(make_batch, prefetch)
    return make_batch
