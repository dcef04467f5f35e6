"""Waveform <-> log-magnitude spectrogram front end, with Griffin-Lim inversion.

Feature space: 16 kHz audio, 0.97 pre-emphasis, 800-sample (50 ms) Hann
frames every 200 samples (12.5 ms), zero-padded to a 2046-point FFT so that
``nfft // 2 + 1 == 1024`` bins.  Magnitudes are scaled so a unit-amplitude
sinusoid peaks at 0 dB, floored at ``min_db`` and mapped linearly from
``[min_db, max_db]`` onto ``[0, 1]``.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import EmptyInputError, IngestionError, NumericInputError

SAMPLE_RATE = 16000
PEAK = 0.99


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = SAMPLE_RATE
    preemphasis: float = 0.97
    frame_length: int = 800
    frame_shift: int = 200
    n_fft: int = 2046
    n_mels: int = 80
    min_db: float = -100.0
    max_db: float = 20.0
    griffin_lim_iters: int = 100

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    @property
    def frame_length_s(self):
        return self.frame_length / self.sample_rate

    @property
    def frame_shift_s(self):
        return self.frame_shift / self.sample_rate

    def num_frames(self, n_samples):
        if n_samples < self.frame_length:
            return 0
        return (n_samples - self.frame_length) // self.frame_shift + 1


DEFAULT_AUDIO = AudioConfig()


@dataclass
class AudioWaveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise NumericInputError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise NumericInputError("waveform contains non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass
class Spectrogram:
    """Normalized log-magnitude frames, time-major ``[T, n_bins]``."""

    frames: np.ndarray
    frame_shift_s: float = DEFAULT_AUDIO.frame_shift_s
    frame_length_s: float = DEFAULT_AUDIO.frame_length_s

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise EmptyInputError(f"spectrogram needs shape [T>=1, bins], got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise NumericInputError("spectrogram contains non-finite values")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def duration(self):
        return self.num_frames * self.frame_shift_s


@dataclass
class MelSpectrogram:
    frames: np.ndarray

    @property
    def num_frames(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# I/O


def _to_float(data):
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    return data.astype(np.float64)


def resample(samples, orig_rate, target_rate=SAMPLE_RATE):
    """Band-limited (windowed-sinc polyphase) resampling."""
    if orig_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(target_rate, orig_rate)
    return signal.resample_poly(samples, ratio.numerator, ratio.denominator)


def load_waveform(path, sample_rate=SAMPLE_RATE):
    """Read a WAV file as mono, resample to ``sample_rate``, peak-normalize to 0.99."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:  # scipy raises several unrelated types
        raise IngestionError(f"cannot read audio file {path}: {exc}") from exc
    data = _to_float(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.size == 0:
        raise EmptyInputError(f"audio file {path} contains no samples")
    if not np.all(np.isfinite(data)):
        raise IngestionError(f"audio file {path} contains non-finite samples")
    data = resample(data, rate, sample_rate)
    peak = np.max(np.abs(data))
    if peak > 0:
        data = data * (PEAK / peak)
    return AudioWaveform(data, sample_rate)


def save_waveform(path, wav):
    """Write 16-bit PCM WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(wav.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, wav.sample_rate, pcm)
    return path


# ---------------------------------------------------------------------------
# Filters


def preemphasize(wav, coeff=0.97):
    if not 0.0 <= coeff < 1.0:
        raise NumericInputError(f"pre-emphasis coefficient must be in [0, 1), got {coeff}")
    return AudioWaveform(signal.lfilter([1.0, -coeff], [1.0], wav.samples), wav.sample_rate)


def deemphasize(wav, coeff=0.97):
    if not 0.0 <= coeff < 1.0:
        raise NumericInputError(f"pre-emphasis coefficient must be in [0, 1), got {coeff}")
    return AudioWaveform(signal.lfilter([1.0], [1.0, -coeff], wav.samples), wav.sample_rate)


# ---------------------------------------------------------------------------
# STFT


@lru_cache(maxsize=8)
def _window(frame_length):
    win = signal.get_window("hann", frame_length, fftbins=True)
    win.setflags(write=False)
    return win


def _mag_scale(cfg):
    # unit-amplitude sinusoid -> peak magnitude 1.0
    return 2.0 / _window(cfg.frame_length).sum()


def stft(samples, cfg=DEFAULT_AUDIO):
    """Complex STFT ``[T, n_bins]`` with no centre padding."""
    n = cfg.num_frames(len(samples))
    if n == 0:
        raise EmptyInputError(
            f"need at least {cfg.frame_length} samples for one frame, got {len(samples)}")
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.frame_length)[::cfg.frame_shift][:n]
    return np.fft.rfft(frames * _window(cfg.frame_length), n=cfg.n_fft, axis=1)


def istft(spec, cfg=DEFAULT_AUDIO):
    """Least-squares inverse of :func:`stft` (windowed overlap-add)."""
    win = _window(cfg.frame_length)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, :cfg.frame_length] * win
    n = spec.shape[0]
    length = (n - 1) * cfg.frame_shift + cfg.frame_length
    out = np.zeros(length)
    norm = np.zeros(length)
    for i in range(n):
        s = i * cfg.frame_shift
        out[s:s + cfg.frame_length] += frames[i]
        norm[s:s + cfg.frame_length] += win ** 2
    return out / np.maximum(norm, 1e-8)


def amp_to_db(mag, cfg=DEFAULT_AUDIO):
    floor = 10.0 ** (cfg.min_db / 20.0)
    return 20.0 * np.log10(np.maximum(mag, floor))


def db_to_amp(db):
    return 10.0 ** (np.asarray(db) / 20.0)


def normalize(db, cfg=DEFAULT_AUDIO):
    return np.clip((db - cfg.min_db) / (cfg.max_db - cfg.min_db), 0.0, 1.0)


def denormalize(values, cfg=DEFAULT_AUDIO):
    return np.asarray(values, dtype=np.float64) * (cfg.max_db - cfg.min_db) + cfg.min_db


def magnitude_to_normalized(mag, cfg=DEFAULT_AUDIO):
    return normalize(amp_to_db(mag, cfg), cfg)


def normalized_to_magnitude(values, cfg=DEFAULT_AUDIO):
    """Invert the normalization; bins at the floor (0.0) come back as exactly zero."""
    values = np.asarray(values, dtype=np.float64)
    mag = db_to_amp(denormalize(values, cfg))
    mag[values <= 0.0] = 0.0
    return mag


def waveform_to_spectrogram(wav, cfg=DEFAULT_AUDIO):
    if wav.sample_rate != cfg.sample_rate:
        raise NumericInputError(f"expected {cfg.sample_rate} Hz audio, got {wav.sample_rate} Hz")
    emph = preemphasize(wav, cfg.preemphasis).samples
    mag = np.abs(stft(emph, cfg)) * _mag_scale(cfg)
    frames = magnitude_to_normalized(mag, cfg).astype(np.float32)
    return Spectrogram(frames, cfg.frame_shift_s, cfg.frame_length_s)


# ---------------------------------------------------------------------------
# Mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg=DEFAULT_AUDIO):
    """Triangular HTK-mel filters ``[n_mels, n_bins]``, each row summing to one.

    Unit row sums make every mel band a weighted average of linear
    magnitudes, so the dB floor maps to the same floor in mel space.
    """
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb /= fb.sum(axis=1, keepdims=True)
    fb.setflags(write=False)
    return fb


def spectrogram_to_mel(spec, cfg=DEFAULT_AUDIO):
    mag = db_to_amp(denormalize(spec.frames, cfg))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(magnitude_to_normalized(mel, cfg).astype(np.float32))


# ---------------------------------------------------------------------------
# Griffin-Lim


def griffin_lim(spec, iterations=None, cfg=DEFAULT_AUDIO, seed=0, callback=None):
    """Estimate a waveform whose STFT magnitude matches ``spec``.

    Runs on the pre-emphasized signal and de-emphasizes the result.  The
    output is trimmed symmetrically to ``T * frame_shift`` samples.
    ``callback(i, magnitude_error)`` is invoked after every iteration.
    """
    iterations = cfg.griffin_lim_iters if iterations is None else int(iterations)
    if iterations < 1:
        raise NumericInputError(f"iterations must be >= 1, got {iterations}")
    target = normalized_to_magnitude(spec.frames, cfg) / _mag_scale(cfg)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target.shape))
    y = istft(target * phase, cfg)
    for i in range(iterations):
        est = stft(y, cfg)
        if callback is not None:
            callback(i, float(np.sum((np.abs(est) - target) ** 2)))
        y = istft(target * np.exp(1j * np.angle(est)), cfg)
    y = deemphasize(AudioWaveform(y, cfg.sample_rate), cfg.preemphasis).samples
    trim = (cfg.frame_length - cfg.frame_shift) // 2
    y = y[trim:trim + spec.num_frames * cfg.frame_shift]
    return AudioWaveform(y, cfg.sample_rate)
