import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from mbvvc.audio import (DEFAULT_AUDIO, AudioWaveform, Spectrogram, deemphasize, denormalize,
                         griffin_lim, load_waveform, mel_filterbank, normalize, preemphasize,
                         save_waveform, spectrogram_to_mel, waveform_to_spectrogram)
from mbvvc.errors import EmptyInputError, IngestionError, NumericInputError

SR = 16000


def tone(freq, seconds, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


# -- load_waveform ---------------------------------------------------------


def test_load_silence(tmp_path):
    wavfile.write(tmp_path / "s.wav", SR, np.zeros(SR, dtype=np.int16))
    wav = load_waveform(tmp_path / "s.wav")
    assert wav.sample_rate == SR
    assert len(wav) == 16000
    assert not wav.samples.any()


def test_load_resamples_48k(tmp_path):
    wavfile.write(tmp_path / "a.wav", 48000, tone(440, 1.0, sr=48000).astype(np.float32))
    wav = load_waveform(tmp_path / "a.wav")
    assert len(wav) == 16000
    assert wav.duration == pytest.approx(1.0)


def test_load_peak_normalizes(tmp_path):
    x = tone(440, 0.5)  # peak 0.5 (sample 9 of a 440 Hz sine at 16 kHz is near the crest)
    wavfile.write(tmp_path / "a.wav", SR, x.astype(np.float32))
    wav = load_waveform(tmp_path / "a.wav")
    peak_in = np.max(np.abs(x.astype(np.float32)))
    assert np.max(np.abs(wav.samples)) == pytest.approx(0.99, abs=1e-12)
    # every sample scaled by the same factor 0.99 / peak_in
    np.testing.assert_allclose(wav.samples, x.astype(np.float32) * (0.99 / peak_in), atol=1e-12)


def test_load_int16_stereo_downmix(tmp_path):
    left = (tone(300, 0.2) * 32767).astype(np.int16)
    data = np.stack([left, np.zeros_like(left)], axis=1)
    wavfile.write(tmp_path / "st.wav", SR, data)
    wav = load_waveform(tmp_path / "st.wav")
    assert wav.samples.ndim == 1 and len(wav) == len(left)


def test_load_errors(tmp_path):
    with pytest.raises(IngestionError, match="nope.wav"):
        load_waveform(tmp_path / "nope.wav")
    (tmp_path / "bad.wav").write_bytes(b"RIFF0000garbage")
    with pytest.raises(IngestionError, match="bad.wav"):
        load_waveform(tmp_path / "bad.wav")
    wavfile.write(tmp_path / "empty.wav", SR, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyInputError):
        load_waveform(tmp_path / "empty.wav")


def test_save_roundtrip(tmp_path):
    wav = AudioWaveform(tone(500, 0.1))
    save_waveform(tmp_path / "o.wav", wav)
    rate, data = wavfile.read(tmp_path / "o.wav")
    assert rate == SR and data.dtype == np.int16
    np.testing.assert_allclose(data / 32767.0, wav.samples, atol=1 / 32767)


def test_waveform_rejects_nonfinite():
    with pytest.raises(NumericInputError):
        AudioWaveform(np.array([0.0, np.nan]))


# -- pre-emphasis ------------------------------------------------------------


def test_preemphasis_identity_and_constant():
    x = np.random.default_rng(0).standard_normal(50)
    np.testing.assert_array_equal(preemphasize(AudioWaveform(x), 0.0).samples, x)
    y = preemphasize(AudioWaveform(np.full(10, 2.0)), 0.97).samples
    assert y[0] == 2.0
    np.testing.assert_allclose(y[1:], 0.03 * 2.0, rtol=1e-12)


def test_preemphasis_roundtrip():
    x = AudioWaveform(np.random.default_rng(1).standard_normal(100))
    back = deemphasize(preemphasize(x, 0.97), 0.97)
    np.testing.assert_allclose(back.samples, x.samples, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=300), st.floats(0.0, 0.99))
def test_preemphasis_inverse_property(values, coeff):
    x = AudioWaveform(np.array(values))
    np.testing.assert_allclose(deemphasize(preemphasize(x, coeff), coeff).samples, x.samples, atol=1e-9)


def test_preemphasis_bad_coeff():
    with pytest.raises(NumericInputError):
        preemphasize(AudioWaveform(np.zeros(3)), 1.0)


# -- spectrogram ---------------------------------------------------------------


def test_silence_is_floor():
    spec = waveform_to_spectrogram(AudioWaveform(np.zeros(SR)))
    assert spec.frames.shape[1] == 1024
    assert not spec.frames.any()


def test_two_seconds_frame_count():
    # floor((2.0 - 0.050) / 0.0125) + 1 = floor(156) + 1 = 157
    spec = waveform_to_spectrogram(AudioWaveform(tone(300, 2.0)))
    assert spec.frames.shape == (157, 1024)
    assert spec.frame_shift_s == 0.0125 and spec.frame_length_s == 0.050


@settings(max_examples=30, deadline=None)
@given(st.integers(800, 6000))
def test_frame_count_formula(n):
    spec = waveform_to_spectrogram(AudioWaveform(np.random.default_rng(n).uniform(-0.5, 0.5, n)))
    assert spec.num_frames == (n - 800) // 200 + 1
    assert spec.frames.min() >= 0.0 and spec.frames.max() <= 1.0


def test_too_short():
    with pytest.raises(EmptyInputError):
        waveform_to_spectrogram(AudioWaveform(np.zeros(799)))


def test_tone_peak_bin():
    # bin spacing 16000 / 2046 Hz; 1000 Hz / spacing = 127.875 -> nearest bin 128
    spec = waveform_to_spectrogram(AudioWaveform(tone(1000, 0.5)))
    assert set(np.argmax(spec.frames, axis=1)) == {128}


def test_deterministic():
    x = AudioWaveform(np.random.default_rng(3).standard_normal(4000) * 0.1)
    np.testing.assert_array_equal(waveform_to_spectrogram(x).frames, waveform_to_spectrogram(x).frames)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100.0, 20.0))
def test_normalize_roundtrip(db):
    v = normalize(np.array([db]))
    assert 0.0 <= v[0] <= 1.0
    assert denormalize(v)[0] == pytest.approx(db, abs=1e-6)


def test_full_scale_sine_level():
    # unit-amplitude sinusoid peaks at 0 dB -> (0 + 100) / 120 after normalization;
    # pre-emphasis multiplies a 1 kHz tone by |1 - 0.97 e^{-j w}|, w = 2 pi 1000 / 16000
    w = 2 * np.pi * 1000 / SR
    gain_db = 20 * np.log10(abs(1 - 0.97 * np.exp(-1j * w)))
    spec = waveform_to_spectrogram(AudioWaveform(tone(1000, 0.5, amp=1.0)))
    expected = (gain_db + 100) / 120
    # 1000 Hz sits 0.125 bins off bin 128, costing a little Hann main-lobe gain
    assert spec.frames[2:-2, 128].mean() == pytest.approx(expected, abs=0.01)


# -- mel ---------------------------------------------------------------------------


def test_mel_floor_and_shape():
    spec = Spectrogram(np.zeros((157, 1024), dtype=np.float32))
    mel = spectrogram_to_mel(spec)
    assert mel.frames.shape == (157, 80)
    np.testing.assert_allclose(mel.frames, 0.0, atol=1e-6)


def test_mel_tone_lands_in_overlapping_filters():
    spec = waveform_to_spectrogram(AudioWaveform(tone(1000, 0.5)))
    mel = spectrogram_to_mel(spec).frames
    # independent filter geometry: 82 equally spaced HTK-mel edges from 0 to 8 kHz
    mel_max = 2595 * np.log10(1 + 8000 / 700)
    edges = 700 * (10 ** (np.linspace(0, mel_max, 82) / 2595) - 1)
    overlapping = {k for k in range(80) if edges[k] < 1000 < edges[k + 2]}
    assert 1 <= len(overlapping) <= 2
    assert set(np.argmax(mel, axis=1)) <= overlapping


def test_mel_filterbank_rows_sum_to_one():
    np.testing.assert_allclose(mel_filterbank(DEFAULT_AUDIO).sum(axis=1), 1.0)


# -- Griffin-Lim ---------------------------------------------------------------------


def dominant_frequency(x, sr=SR):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=8 * len(x)))
    return np.argmax(spec) * sr / (8 * len(x))


def test_griffin_lim_tone():
    spec = waveform_to_spectrogram(AudioWaveform(tone(440, 1.0)))
    out = griffin_lim(spec, 100)
    assert abs(dominant_frequency(out.samples) - 440) <= SR / 2046


def test_griffin_lim_silence():
    out = griffin_lim(Spectrogram(np.zeros((40, 1024), dtype=np.float32)), 10)
    assert np.sqrt(np.mean(out.samples ** 2)) < 1e-3


def test_griffin_lim_length():
    spec = waveform_to_spectrogram(AudioWaveform(tone(440, 1.0)))
    out = griffin_lim(spec, 2)
    assert abs(len(out) - spec.num_frames * 200) <= 200


def test_griffin_lim_error_non_increasing():
    spec = waveform_to_spectrogram(AudioWaveform(tone(440, 0.5) + tone(1250, 0.5, 0.2)))
    errors = []
    griffin_lim(spec, 10, callback=lambda i, e: errors.append(e))
    assert len(errors) == 10
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errors, errors[1:]))


def speechlike(seconds=1.0, seed=0):
    """Harmonic source with a slow pitch glide through a moving two-resonance envelope."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * SR)) / SR
    f0 = 120 + 30 * np.sin(2 * np.pi * 1.5 * t)
    phase = 2 * np.pi * np.cumsum(f0) / SR
    x = np.zeros_like(t)
    for k in range(1, 30):
        fk = k * f0
        env = np.exp(-((fk - 700) / 300) ** 2) + 0.5 * np.exp(-((fk - 1800) / 400) ** 2) + 0.02
        x += env * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    return 0.5 * x / np.max(np.abs(x)) * (0.6 + 0.4 * np.sin(2 * np.pi * 2 * t) ** 2)


def test_griffin_lim_self_consistency():
    spec = waveform_to_spectrogram(AudioWaveform(speechlike()))
    out = griffin_lim(spec, 100).samples
    # undo the symmetric 300-sample trim so analysis frames line up again
    again = waveform_to_spectrogram(AudioWaveform(np.concatenate([np.zeros(300), out, np.zeros(300)])))
    assert again.num_frames == spec.num_frames
    r = np.corrcoef(spec.frames[2:-2].ravel(), again.frames[2:-2].ravel())[0, 1]
    assert r > 0.9


def test_griffin_lim_bad_iterations():
    with pytest.raises(NumericInputError):
        griffin_lim(Spectrogram(np.zeros((4, 1024))), 0)
