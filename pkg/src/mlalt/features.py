"""Audio I/O and the 80-band log-Mel front end.

Frames use a periodic Hann window of 400 samples with reflect padding of 200
samples on both sides, a 160-sample hop (10 ms at 16 kHz) and a Slaney-style,
area-normalized Mel filterbank spanning 0-8000 Hz.  Energies are floored at
1e-10 before the natural log, so T = 1 + len(samples) // 160.

Audio formats
-------------
* ``.wav``: 16-bit PCM, any channel count (channels are averaged).
* ``.f32``: raw IEEE float32, little-endian, mono, no header.  The sample rate
  is stored as a decimal integer in a sidecar file ``<name>.f32.rate``.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import InputError

SAMPLE_RATE = 16000
N_FFT = 400
HOP = 160
N_MELS = 80
F_MAX = 8000.0
LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 2:
            # channels-last stereo: average to mono
            s = s.mean(axis=1)
        if s.ndim != 1 or s.size == 0:
            raise InputError("audio must contain at least one sample")
        if int(self.sample_rate) <= 0:
            raise InputError(f"invalid sample rate {self.sample_rate}")
        self.samples = s
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # T x 80 log energies
    hop_seconds: float = HOP / SAMPLE_RATE
    n_fft: int = N_FFT
    sample_rate: int = SAMPLE_RATE

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def resample(audio: AudioClip, target_rate: int = SAMPLE_RATE) -> AudioClip:
    if target_rate <= 0:
        raise InputError(f"target rate must be positive, got {target_rate}")
    if audio.sample_rate == target_rate:
        return AudioClip(audio.samples.copy(), target_rate)
    ratio = Fraction(target_rate, audio.sample_rate)
    out = resample_poly(audio.samples, ratio.numerator, ratio.denominator)
    return AudioClip(out, target_rate)


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(hz >= min_log_hz,
                    min_log_mel + np.log(np.maximum(hz, 1e-12) / min_log_hz) / logstep,
                    hz / f_sp)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(mel >= min_log_mel, min_log_hz * np.exp(logstep * (mel - min_log_mel)), f_sp * mel)


def mel_band_edges(n_mels: int = N_MELS, f_max: float = F_MAX) -> np.ndarray:
    """The ``n_mels + 2`` edge/center frequencies (Hz), equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(f_max), n_mels + 2))


def mel_center_frequencies(n_mels: int = N_MELS, f_max: float = F_MAX) -> np.ndarray:
    return mel_band_edges(n_mels, f_max)[1:-1]


def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
                   n_mels: int = N_MELS, f_max: float = F_MAX) -> np.ndarray:
    """``n_mels x (n_fft//2 + 1)`` triangular filters, each scaled to unit area in Hz/2."""
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_band_edges(n_mels, f_max)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


_FILTERBANK = mel_filterbank()
_WINDOW = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(N_FFT) / N_FFT)


def num_frames(n_samples: int) -> int:
    return 1 + n_samples // HOP


def power_spectrogram(samples: np.ndarray) -> np.ndarray:
    padded = np.pad(samples, N_FFT // 2, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP]
    spec = np.fft.rfft(frames * _WINDOW, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def compute_mel(audio: AudioClip) -> MelSpectrogram:
    if audio.sample_rate != SAMPLE_RATE:
        raise InputError(f"compute_mel expects {SAMPLE_RATE} Hz audio, got {audio.sample_rate}; resample first")
    energy = power_spectrogram(audio.samples) @ _FILTERBANK.T
    return MelSpectrogram(np.log(np.maximum(energy, LOG_FLOOR)))


# -- file I/O -------------------------------------------------------------------------------

def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise InputError(f"{path}: only 16-bit PCM WAV is supported")
        n_ch = fh.getnchannels()
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if data.size == 0:
        raise InputError(f"{path}: no audio samples")
    return AudioClip(data.reshape(-1, n_ch), rate)


def write_wav(path, audio: AudioClip) -> None:
    pcm = np.clip(np.round(audio.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(audio.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_raw_f32(path) -> AudioClip:
    path = Path(path)
    rate_file = Path(str(path) + ".rate")
    if not rate_file.exists():
        raise InputError(f"{path}: missing sample-rate sidecar {rate_file.name}")
    rate = int(rate_file.read_text().strip())
    data = np.fromfile(path, dtype="<f4").astype(np.float64)
    return AudioClip(data, rate)


def write_raw_f32(path, audio: AudioClip) -> None:
    path = Path(path)
    audio.samples.astype("<f4").tofile(path)
    Path(str(path) + ".rate").write_text(f"{audio.sample_rate}\n")


def load_audio(path) -> AudioClip:
    suffix = Path(path).suffix.lower()
    if suffix == ".wav":
        return read_wav(path)
    if suffix == ".f32":
        return read_raw_f32(path)
    raise InputError(f"{path}: unsupported audio format {suffix!r} (use .wav or .f32)")


def mel_from_file(path) -> MelSpectrogram:
    return compute_mel(resample(load_audio(path), SAMPLE_RATE))
