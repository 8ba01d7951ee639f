"""Waveform -> 3-channel log-mel features (plain / harmonic / percussive).

The STFT uses a 4096-point Hann window with hop 2048 and centered frames
(reflect padding), so a clip of n samples yields 1 + n // 2048 frames.
Mel projection runs on the power spectrogram; the harmonic/percussive
split runs on the magnitude spectrogram with 31-tap median filters and
power-2 soft masks at margin 1, which makes the two parts sum back to the
input exactly (up to rounding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal
from scipy.io import wavfile

from .config import FeatureParams
from .errors import DataError, IngestError

TARGET_SAMPLE_RATE = 22050


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int = TARGET_SAMPLE_RATE


def read_wav(path: str | Path, target_rate: int = TARGET_SAMPLE_RATE) -> Waveform:
    """Load a PCM/float WAV, downmix to mono, resample to the target rate."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise IngestError(f"audio file not found: {path}")
    except ValueError as exc:
        raise IngestError(f"cannot read {path}: {exc}")
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:  # scipy returns 24-bit PCM widened to int32
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if rate != target_rate:
        g = math.gcd(int(rate), target_rate)
        samples = signal.resample_poly(samples, target_rate // g, rate // g)
    return Waveform(samples, target_rate)


def write_wav(path: str | Path, samples: np.ndarray, rate: int = TARGET_SAMPLE_RATE) -> None:
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(str(path), rate, (pcm * 32767.0).astype(np.int16))


def hann_window(n_fft: int) -> np.ndarray:
    return signal.get_window("hann", n_fft, fftbins=True)


def stft_magnitude(wave: Waveform, params: FeatureParams) -> np.ndarray:
    """|STFT| of shape (n_fft//2 + 1, 1 + n_samples // hop)."""
    x = np.asarray(wave.samples, dtype=np.float64)
    if x.size == 0:
        raise DataError("empty waveform")
    pad = params.n_fft // 2
    x = np.pad(x, pad, mode="reflect") if x.size > 1 else np.pad(x, pad)
    n_frames = 1 + (x.size - params.n_fft) // params.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, params.n_fft)[:: params.hop]
    frames = frames[:n_frames] * hann_window(params.n_fft)
    return np.abs(np.fft.rfft(frames, axis=1)).T


def mel_frequencies(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Slaney-scale band edges: linear to 1 kHz, logarithmic above."""
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = math.log(6.4) / 27

    def to_mel(f):
        f = np.asarray(f, dtype=np.float64)
        mel = f / f_sp
        above = f >= min_log_hz
        return np.where(above, min_log_hz / f_sp + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep, mel)

    def to_hz(m):
        m = np.asarray(m, dtype=np.float64)
        min_log_mel = min_log_hz / f_sp
        hz = m * f_sp
        above = m >= min_log_mel
        return np.where(above, min_log_hz * np.exp(logstep * (m - min_log_mel)), hz)

    mels = np.linspace(to_mel(f_min), to_mel(f_max), n_mels + 2)
    return to_hz(mels)


def mel_filterbank(params: FeatureParams) -> np.ndarray:
    """Area-normalized triangular filters, (n_mels, n_fft//2 + 1)."""
    fft_freqs = np.linspace(0, params.sample_rate / 2, params.n_fft // 2 + 1)
    edges = mel_frequencies(params.n_mels, params.f_min, params.f_max)
    fdiff = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    enorm = 2.0 / (edges[2:] - edges[:-2])
    return weights * enorm[:, None]


def logmel(wave: Waveform, params: FeatureParams = FeatureParams(),
           fbank: np.ndarray | None = None) -> np.ndarray:
    """ln(mel power + eps) of shape (n_mels, 1 + n_samples // hop)."""
    mag = stft_magnitude(wave, params)
    if fbank is None:
        fbank = mel_filterbank(params)
    return np.log(fbank @ (mag ** 2) + params.log_eps)


def hpss(spec: np.ndarray, params: FeatureParams = FeatureParams()) -> tuple[np.ndarray, np.ndarray]:
    """Split a magnitude spectrogram into (harmonic, percussive) parts.

    Median filtering along time smooths out transients (harmonic part),
    along frequency it smooths out tones (percussive part); soft masks
    with exponent 2 and margin 1 sum to one, so H + P == spec.
    """
    spec = np.asarray(spec, dtype=np.float64)
    if np.any(spec < 0):
        raise DataError("hpss expects non-negative magnitudes")
    k = params.hpss_kernel
    harm = ndimage.median_filter(spec, size=(1, k), mode="reflect")
    perc = ndimage.median_filter(spec, size=(k, 1), mode="reflect")
    hp = harm ** params.hpss_power
    pp = perc ** params.hpss_power
    denom = hp + pp
    tie = denom < np.finfo(np.float64).tiny
    denom[tie] = 1.0
    mask_h = np.where(tie, 0.5, hp / denom)
    mask_p = np.where(tie, 0.5, pp / denom)
    return spec * mask_h, spec * mask_p


def featurize(wave: Waveform, params: FeatureParams = FeatureParams(),
              fbank: np.ndarray | None = None) -> np.ndarray:
    """3 x n_mels x T_s float32 feature stack, channels (S, H, P).

    With ``params.single`` the separation is skipped and all three
    channels carry the plain log-mel, keeping the tensor shape fixed.
    """
    if fbank is None:
        fbank = mel_filterbank(params)
    mag = stft_magnitude(wave, params)
    s = np.log(fbank @ (mag ** 2) + params.log_eps)
    if params.single:
        stack = np.stack([s, s, s])
    else:
        h, p = hpss(mag, params)
        stack = np.stack([
            s,
            np.log(fbank @ (h ** 2) + params.log_eps),
            np.log(fbank @ (p ** 2) + params.log_eps),
        ])
    return stack.astype(np.float32)


def apply_single(x: np.ndarray) -> np.ndarray:
    """Replace the separated channels with copies of the plain log-mel."""
    out = np.array(x)
    out[1] = out[0]
    out[2] = out[0]
    return out


def crop_or_pad(x: np.ndarray, frames: int, rng: np.random.Generator) -> np.ndarray:
    """Random contiguous crop to ``frames``, or zero-pad at the end."""
    if frames < 1:
        raise DataError("target frame count must be >= 1")
    t = x.shape[-1]
    if t > frames:
        start = int(rng.integers(0, t - frames + 1))
        return x[..., start:start + frames]
    if t < frames:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, frames - t)]
        return np.pad(x, pad)
    return x


def frame_count(n_samples: int, params: FeatureParams = FeatureParams()) -> int:
    return 1 + n_samples // params.hop
