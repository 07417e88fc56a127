"""Audio containers, one-sided FFT/IFFT, STFT/ISTFT, and WAV I/O.

All transforms are one-sided real transforms.  Non-power-of-two inputs are
zero-padded to the next power of two; the pre-pad sample count is kept on the
spectrum so the inverse transform can truncate back.  Every container is
immutable after construction and every operation is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .exceptions import InvalidInputError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_LEN = 512
DEFAULT_HOP = 256


def next_pow2(n: int) -> int:
    if n < 1:
        raise InvalidInputError("length must be positive")
    return 1 << (int(n) - 1).bit_length()


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AudioBuffer:
    """Uniformly sampled waveform; shape (n,) for mono, (n, 2) for stereo."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            pass
        elif s.ndim == 2 and s.shape[1] in (1, 2):
            if s.shape[1] == 1:
                s = s[:, 0]
        else:
            raise InvalidInputError(f"unsupported sample shape {s.shape}")
        if s.size == 0:
            raise InvalidInputError("empty audio buffer")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("audio contains NaN/Inf")
        if not self.sample_rate > 0:
            raise InvalidInputError("sample_rate must be positive")
        object.__setattr__(self, "samples", _freeze(s))

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples))))

    def channel(self, idx: int) -> "AudioBuffer":
        if self.channels == 1:
            if idx != 0:
                raise InvalidInputError("mono buffer has a single channel")
            return self
        return AudioBuffer(self.samples[:, idx], self.sample_rate)

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)


def stereo(left: AudioBuffer, right: AudioBuffer) -> AudioBuffer:
    if left.channels != 1 or right.channels != 1:
        raise InvalidInputError("stereo() expects two mono buffers")
    if len(left) != len(right) or left.sample_rate != right.sample_rate:
        raise InvalidInputError("channel length/sample-rate mismatch")
    return AudioBuffer(np.stack([left.samples, right.samples], axis=1), left.sample_rate)


@dataclass(frozen=True)
class Spectrum:
    """One-sided complex spectrum of a real signal.

    ``origin_length`` is the pre-pad sample count; the transform length is
    next_pow2(origin_length), so ``bins`` has next_pow2(origin_length)/2 + 1
    entries and ``bin_hz`` = sample_rate / next_pow2(origin_length).
    """

    bins: np.ndarray
    bin_hz: float
    origin_length: int

    def __post_init__(self) -> None:
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 1:
            raise InvalidInputError("spectrum bins must be one-dimensional")
        n_fft = next_pow2(self.origin_length)
        if b.shape[0] != n_fft // 2 + 1:
            raise InvalidInputError(
                f"bin count {b.shape[0]} inconsistent with origin_length "
                f"{self.origin_length} (expected {n_fft // 2 + 1})"
            )
        if not self.bin_hz > 0:
            raise InvalidInputError("bin_hz must be positive")
        object.__setattr__(self, "bins", _freeze(b))

    @property
    def n_fft(self) -> int:
        return next_pow2(self.origin_length)

    def frequencies(self) -> np.ndarray:
        return np.arange(self.bins.shape[0]) * self.bin_hz


@dataclass(frozen=True)
class Stft:
    """Sequence of per-frame spectra on a (frame_len, hop) grid."""

    frames: tuple
    frame_len: int
    hop: int

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise InvalidInputError("empty STFT")
        if self.hop > self.frame_len or self.hop < 1:
            raise InvalidInputError("require 1 <= hop <= frame_len")
        for fr in frames:
            if fr.origin_length != self.frame_len:
                raise InvalidInputError("all frames must share frame_len")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)


def _window(name: str, length: int) -> np.ndarray:
    # periodic windows so hop = length/2 overlap-adds to a constant
    if name == "hann":
        n = np.arange(length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)
    if name in ("rect", "rectangular", "boxcar"):
        return np.ones(length)
    raise InvalidInputError(f"unknown window {name!r}")


def fft(buf: AudioBuffer) -> Spectrum:
    """One-sided transform of a mono buffer (zero-padded to a power of two)."""
    if buf.channels != 1:
        raise InvalidInputError("fft expects a mono buffer")
    n = len(buf)
    if n < 2:
        raise InvalidInputError("fft needs at least 2 samples")
    n_fft = next_pow2(n)
    bins = np.fft.rfft(buf.samples, n=n_fft)
    return Spectrum(bins, bin_hz=buf.sample_rate / n_fft, origin_length=n)


def ifft(spec: Spectrum) -> AudioBuffer:
    """Inverse of :func:`fft`; truncates padding back to origin_length."""
    x = np.fft.irfft(spec.bins, n=spec.n_fft)
    sample_rate = spec.bin_hz * spec.n_fft
    return AudioBuffer(x[: spec.origin_length], sample_rate)


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    return (n_samples - frame_len) // hop + 1


def stft(buf: AudioBuffer, frame_len: int = DEFAULT_FRAME_LEN,
         hop: int = DEFAULT_HOP, window: str = "hann") -> Stft:
    """Windowed short-time transform with ``(n - frame_len) // hop + 1`` frames."""
    if buf.channels != 1:
        raise InvalidInputError("stft expects a mono buffer")
    if frame_len > len(buf):
        raise InvalidInputError("frame_len exceeds buffer length")
    w = _window(window, frame_len)
    n_frames = frame_count(len(buf), frame_len, hop)
    frames = []
    for i in range(n_frames):
        seg = buf.samples[i * hop: i * hop + frame_len] * w
        frames.append(fft(AudioBuffer(seg, buf.sample_rate)))
    return Stft(tuple(frames), frame_len=frame_len, hop=hop)


def istft(s: Stft, window: str = "hann", sample_rate: float | None = None) -> AudioBuffer:
    """Overlap-add reconstruction.

    The analysis window is compensated by dividing by its overlapped sum, so
    any window/hop pair whose shifted sum is bounded away from zero
    reconstructs interior samples; hann with 50% overlap is exact there.
    """
    if len(s) == 0:
        raise InvalidInputError("empty STFT")
    w = _window(window, s.frame_len)
    n_out = (len(s) - 1) * s.hop + s.frame_len
    acc = np.zeros(n_out)
    wsum = np.zeros(n_out)
    for i, spec in enumerate(s.frames):
        seg = ifft(spec).samples
        acc[i * s.hop: i * s.hop + s.frame_len] += seg
        wsum[i * s.hop: i * s.hop + s.frame_len] += w
    nz = wsum > 1e-8
    acc[nz] /= wsum[nz]
    acc[~nz] = 0.0
    if sample_rate is None:
        sample_rate = s.frames[0].bin_hz * s.frames[0].n_fft
    return AudioBuffer(acc, sample_rate)


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        raise InvalidInputError(f"unsupported WAV dtype {data.dtype}")
    return AudioBuffer(x, float(sr))


def write_wav(path, buf: AudioBuffer, bit_depth: str = "float32") -> None:
    """Write 16-bit PCM (``"pcm16"``) or 32-bit float (``"float32"``) WAV."""
    if bit_depth == "float32":
        data = buf.samples.astype(np.float32)
    elif bit_depth == "pcm16":
        clipped = np.clip(buf.samples, -1.0, 32767.0 / 32768.0)
        data = np.round(clipped * 32768.0).astype(np.int16)
    else:
        raise InvalidInputError(f"unsupported bit depth {bit_depth!r}")
    wavfile.write(path, int(round(buf.sample_rate)), data)
