"""Synthetic speech sources: a harmonic glottal-pulse complex with a seeded
formant envelope, optional unvoiced noise stretches, unit RMS output.
Stands in for a recorded word corpus; a directory loader accepts real
1-second WAV clips instead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dsp import AudioBuffer, read_wav
from .exceptions import InvalidInputError

_FORMANT_RANGES = ((350.0, 800.0), (900.0, 1600.0), (2200.0, 3000.0))
_FORMANT_BW = (90.0, 120.0, 170.0)
_XFADE_S = 0.010


def _formant_envelope(freqs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    env = np.zeros_like(freqs)
    for (lo, hi), bw in zip(_FORMANT_RANGES, _FORMANT_BW):
        fc = rng.uniform(lo, hi)
        width = bw * rng.uniform(0.8, 1.2)
        env += 1.0 / (1.0 + ((freqs - fc) / width) ** 2)
    return env + 0.05


def synth_speech(duration_s: float, f0: float, seed: int,
                 sample_rate: float = 16000.0, voiced_fraction: float = 1.0,
                 noise_level: float = 0.0) -> AudioBuffer:
    """Deterministic voiced source at fundamental f0 (seeded timbre)."""
    if duration_s <= 0:
        raise InvalidInputError("duration must be positive")
    if not (80.0 <= f0 <= 300.0):
        raise InvalidInputError("f0 must lie in [80, 300] Hz")
    if not (0.0 < voiced_fraction <= 1.0):
        raise InvalidInputError("voiced fraction must lie in (0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5eec)))
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    k_max = max(2, int((0.95 * sample_rate / 2.0) // f0))
    harmonics = np.arange(1, k_max + 1)
    amps = _formant_envelope(harmonics * f0, rng) * harmonics ** -0.7
    phases = -0.5 * np.pi * harmonics + rng.uniform(-0.15, 0.15, k_max)

    # accumulate harmonics via complex rotation instead of k cosine passes
    z_step = np.exp(2j * np.pi * f0 * t)
    z = z_step.copy()
    acc = np.zeros(n, dtype=np.complex128)
    for a, ph in zip(amps, phases):
        acc += a * np.exp(1j * ph) * z
        z *= z_step
    x = acc.real

    if voiced_fraction < 1.0:
        x = _insert_unvoiced(x, rng, sample_rate, voiced_fraction)
    if noise_level > 0.0:
        x = x + noise_level * np.sqrt(np.mean(x ** 2)) * rng.standard_normal(n)
    rms = np.sqrt(np.mean(x ** 2))
    if rms > 0:
        x = x / rms
    return AudioBuffer(x, sample_rate)


def _insert_unvoiced(x: np.ndarray, rng: np.random.Generator,
                     sample_rate: float, voiced_fraction: float) -> np.ndarray:
    """Replace a random slice of the signal with shaped noise (a crude
    fricative) using raised-cosine crossfades."""
    n = x.shape[0]
    total_unvoiced = int(n * (1.0 - voiced_fraction))
    if total_unvoiced < int(0.02 * sample_rate):
        return x
    n_seg = int(rng.integers(1, 3))
    seg_lens = np.full(n_seg, total_unvoiced // n_seg)
    out = x.copy()
    level = 0.25 * np.sqrt(np.mean(x ** 2))
    fade = int(_XFADE_S * sample_rate)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(fade) / fade))
    for seg in seg_lens:
        if seg <= 2 * fade:
            continue
        start = int(rng.integers(0, n - seg))
        noise = rng.standard_normal(seg)
        # high-passed-ish noise: first difference emphasizes fricative band
        noise = np.diff(noise, prepend=noise[0])
        noise *= level / max(np.sqrt(np.mean(noise ** 2)), 1e-12)
        gate = np.ones(seg)
        gate[:fade] = ramp
        gate[-fade:] = ramp[::-1]
        out[start: start + seg] = (out[start: start + seg] * (1.0 - gate)
                                   + noise * gate)
    return out


def load_speech_dir(path, sample_rate: float = 16000.0) -> list:
    """All *.wav clips in a directory (sorted by name), forced to mono.

    Files must already be at the pipeline sample rate; resampling is out of
    scope.
    """
    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise InvalidInputError(f"no WAV files under {path}")
    out = []
    for f in files:
        buf = read_wav(f)
        if buf.sample_rate != sample_rate:
            raise InvalidInputError(
                f"{f.name}: sample rate {buf.sample_rate}, expected {sample_rate}")
        if buf.channels == 2:
            buf = AudioBuffer(buf.samples.mean(axis=1), buf.sample_rate)
        out.append(buf)
    return out
