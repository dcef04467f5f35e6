"""Inference-time voice conversion.

Long inputs are processed as consecutive, non-overlapping ``r``-frame
segments (the tail zero-padded) and the outputs concatenated on time.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import (DEFAULT_AUDIO, Spectrogram, griffin_lim, load_waveform, save_waveform,
                    waveform_to_spectrogram)
from .data import SpeakerId, TARGET
from .errors import IngestionError, PreconditionError
from .networks import augment
from .units import write_unit_file


@dataclass
class ConversionRequest:
    source_audio: Path
    target_speaker: SpeakerId
    use_patcher: bool = False
    output_path: Path = Path("converted.wav")
    units_path: Path = None

    def __post_init__(self):
        if self.use_patcher and self.target_speaker.set_tag != TARGET:
            raise PreconditionError(
                f"speaker {self.target_speaker.id} is not a target speaker; the patcher only covers targets")


def segment_and_stitch(x, f, r=128):
    """Apply ``f`` to each ``r``-frame segment of ``x`` and re-assemble ``T`` frames."""
    x = np.asarray(x)
    t = x.shape[0]
    if t < 1:
        raise ValueError("need at least one frame")
    n_seg = -(-t // r)
    padded = np.zeros((n_seg * r,) + x.shape[1:], dtype=x.dtype)
    padded[:t] = x
    outs = [np.asarray(f(padded[i * r:(i + 1) * r])) for i in range(n_seg)]
    return np.concatenate(outs, axis=0)[:t]


def _speaker_index(y):
    return y.id if isinstance(y, SpeakerId) else int(y)


def _segment_tensor(seg):
    return torch.from_numpy(np.ascontiguousarray(seg, dtype=np.float32))[None]


def encode_spectrogram(spec, state):
    """Binary codes ``[T, n]`` (uint8) for a spectrogram; independent of any target speaker."""
    state.asr.eval()
    r = state.model_cfg.seg_len

    def f(seg):
        with torch.no_grad():
            return state.asr(_segment_tensor(seg)).payload[0].numpy()

    codes = segment_and_stitch(spec.frames, f, r)
    if state.model_cfg.bottleneck == "continuous":
        return codes
    return codes.astype(np.uint8)


def convert_spectrogram(spec, y_t, state, use_patcher=False):
    """``TTS(ASR(x_s), y_t)``, optionally patched and clipped to ``[0, 1]``."""
    if use_patcher and state.patcher is None:
        raise PreconditionError("use_patcher requested but the state has no stage-2 parameters")
    state.eval()
    r = state.model_cfg.seg_len
    y = torch.tensor([_speaker_index(y_t)], dtype=torch.long)

    def f(seg):
        with torch.no_grad():
            codes = state.asr(_segment_tensor(seg)).payload
            out = state.tts(codes, y)
            if use_patcher:
                out = augment(state.patcher(codes, y), out).clamp(0.0, 1.0)
            return out[0].numpy()

    frames = segment_and_stitch(spec.frames, f, r)
    return Spectrogram(frames, spec.frame_shift_s, spec.frame_length_s)


def convert_file(req, state, audio_cfg=DEFAULT_AUDIO, gl_iters=None):
    """Source WAV -> converted 16 kHz WAV, plus the unit file of the source codes."""
    src = Path(req.source_audio)
    wav = load_waveform(src, audio_cfg.sample_rate)
    spec = waveform_to_spectrogram(wav, audio_cfg)
    out_spec = convert_spectrogram(spec, req.target_speaker, state, req.use_patcher)
    out_wav = griffin_lim(out_spec, gl_iters, audio_cfg)
    out_path = Path(req.output_path)
    units_path = Path(req.units_path) if req.units_path else out_path.with_suffix(".txt")
    try:
        save_waveform(out_path, out_wav)
        if state.model_cfg.bottleneck != "continuous":
            write_unit_file(units_path, encode_spectrogram(spec, state))
    except OSError as exc:
        raise IngestionError(f"cannot write conversion output for {src}: {exc}") from exc
    return out_path
