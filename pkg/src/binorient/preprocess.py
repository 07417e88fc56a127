"""Voiced-segment detection and masking applied ahead of feature extraction.

Voicing is scored per frame by harmonic summation: the energy landing inside
narrow windows around multiples of a pitch candidate, contrasted against the
energy density of the whole band.  Harmonic signals concentrate energy in the
windows (contrast >> 1); noise spreads it evenly (contrast ~ 1).  The voiced
probability is a logistic of that contrast, so it is invariant to input gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import AudioBuffer, Spectrum, frame_count
from .exceptions import InvalidInputError
from .rendering import BinauralRecording

PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 450.0
_CONTRAST_MID = 2.0
_CONTRAST_SCALE = 0.12
_LOW_F0_PRIOR = 0.05
_BAND_LO_HZ = 40.0
_RAMP_S = 0.005

DEFAULT_VOICING_FRAME = 1024
DEFAULT_VOICING_HOP = 256
_NFFT = 4096


@dataclass(frozen=True)
class VoicingDecision:
    """Per-frame voiced probability and pitch (NaN where undetermined)."""

    probabilities: np.ndarray
    pitch_hz: np.ndarray
    frame_len: int
    hop: int

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=np.float64)
        f0 = np.asarray(self.pitch_hz, dtype=np.float64)
        if p.shape != f0.shape or p.ndim != 1:
            raise InvalidInputError("probability/pitch shape mismatch")
        if np.any((p < 0) | (p > 1)):
            raise InvalidInputError("probabilities must lie in [0, 1]")
        present = ~np.isnan(f0)
        if np.any((f0[present] < PITCH_MIN_HZ) | (f0[present] > PITCH_MAX_HZ)):
            raise InvalidInputError("pitch outside the detector range")
        p.setflags(write=False)
        f0.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "pitch_hz", f0)

    def __len__(self) -> int:
        return self.probabilities.shape[0]


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def _harmonic_masks(candidates: np.ndarray, freqs: np.ndarray,
                    half_width_hz: float, band: np.ndarray) -> np.ndarray:
    """(n_candidates, n_bins) 0/1 matrix: bins near any harmonic of each f0."""
    masks = np.zeros((candidates.shape[0], freqs.shape[0]), dtype=bool)
    top = freqs[-1]
    for i, f0 in enumerate(candidates):
        k_max = min(10, int(top // f0))
        for k in range(1, k_max + 1):
            masks[i] |= np.abs(freqs - k * f0) <= half_width_hz
    masks &= band
    return masks.astype(np.float64)


class _CandidateGrid:
    """Pitch-candidate masks for one (sample_rate, frame_len) analysis setup;
    cached because they are identical for every frame and every recording."""

    def __init__(self, sr: float, frame_len: int):
        self.freqs = np.arange(_NFFT // 2 + 1) * (sr / _NFFT)
        self.band = (self.freqs >= _BAND_LO_HZ) & (self.freqs <= min(8000.0, sr / 2.0))
        self.half_width = 2.0 * sr / frame_len  # hann mainlobe half-width
        self.n_band = max(int(self.band.sum()), 1)
        self.coarse = np.geomspace(PITCH_MIN_HZ, PITCH_MAX_HZ, 96)
        self.masks = _harmonic_masks(self.coarse, self.freqs, self.half_width, self.band)
        self.coverage = self.masks.sum(axis=1) / self.n_band
        self.prior = 1.0 - _LOW_F0_PRIOR * np.log2(self.coarse / PITCH_MIN_HZ)
        self._fine: dict[int, tuple] = {}

    def fine_stage(self, coarse_idx: int):
        cached = self._fine.get(coarse_idx)
        if cached is None:
            f0 = self.coarse[coarse_idx]
            fine = np.geomspace(max(f0 / 1.03, PITCH_MIN_HZ),
                                min(f0 * 1.03, PITCH_MAX_HZ), 13)
            masks = _harmonic_masks(fine, self.freqs, self.half_width, self.band)
            cached = (fine, masks, masks.sum(axis=1) / self.n_band)
            self._fine[coarse_idx] = cached
        return cached


_GRID_CACHE: dict[tuple, _CandidateGrid] = {}


def _candidate_grid(sr: float, frame_len: int) -> _CandidateGrid:
    key = (float(sr), int(frame_len))
    grid = _GRID_CACHE.get(key)
    if grid is None:
        grid = _GRID_CACHE[key] = _CandidateGrid(sr, frame_len)
    return grid


def detect_voicing(buf: AudioBuffer, frame_len: int = DEFAULT_VOICING_FRAME,
                   hop: int = DEFAULT_VOICING_HOP) -> VoicingDecision:
    """Harmonic-summation voicing detector over pitch candidates 50-450 Hz."""
    if buf.channels != 1:
        raise InvalidInputError("detect_voicing expects a mono buffer")
    if len(buf) < frame_len:
        raise InvalidInputError("buffer shorter than one analysis frame")
    sr = buf.sample_rate
    n_frames = frame_count(len(buf), frame_len, hop)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_len) / frame_len)
    grid = _candidate_grid(sr, frame_len)

    probs = np.zeros(n_frames)
    pitch = np.full(n_frames, np.nan)
    for i in range(n_frames):
        seg = buf.samples[i * hop: i * hop + frame_len] * window
        if not np.any(seg):
            continue
        power = np.abs(np.fft.rfft(seg, n=_NFFT)) ** 2
        total = float(power[grid.band].sum())
        if total <= 0.0:
            continue
        contrast = (grid.masks @ power) / total / grid.coverage
        best = int(np.argmax(contrast * grid.prior))
        fine, fine_masks, fine_cov = grid.fine_stage(best)
        fine_contrast = (fine_masks @ power) / total / fine_cov
        j = int(np.argmax(fine_contrast))
        pitch[i] = fine[j]
        probs[i] = _logistic((fine_contrast[j] - _CONTRAST_MID) / _CONTRAST_SCALE)
    return VoicingDecision(probs, pitch, frame_len, hop)


def _voiced_gain(keep: np.ndarray, n_samples: int, hop: int,
                 sample_rate: float) -> np.ndarray:
    """Sample gain: 1 on voiced frames' spans, 0 elsewhere, with raised-cosine
    ramps eating into the voiced side so masked samples stay exactly zero."""
    owner = np.minimum(np.arange(n_samples) // hop, keep.shape[0] - 1)
    voiced = keep[owner]
    gain = voiced.astype(np.float64)
    ramp_len = int(round(_RAMP_S * sample_rate))
    if ramp_len < 1:
        return gain
    edges = np.flatnonzero(np.diff(voiced.astype(np.int8)))
    starts = [0] if voiced[0] else []
    stops = []
    for e in edges:
        if voiced[e + 1]:
            starts.append(e + 1)
        else:
            stops.append(e + 1)
    if voiced[-1]:
        stops.append(n_samples)
    for s, e in zip(starts, stops):
        run = e - s
        L = min(ramp_len, run // 2)
        if L < 1:
            continue
        t = np.arange(1, L + 1) / L
        up = 0.5 * (1.0 - np.cos(np.pi * t))
        gain[s: s + L] = up
        gain[e - L: e] = up[::-1]
    return gain


def mask_unvoiced(rec: BinauralRecording, decision: VoicingDecision,
                  threshold: float = 0.5) -> BinauralRecording:
    """Zero frames below the voicing threshold, identically in both ears."""
    n = len(rec)
    expected = frame_count(n, decision.frame_len, decision.hop)
    if expected != len(decision):
        raise InvalidInputError(
            f"decision grid has {len(decision)} frames but the recording "
            f"needs {expected}")
    keep = decision.probabilities >= threshold
    if np.all(keep):
        return rec
    gain = _voiced_gain(keep, n, decision.hop, rec.sample_rate)
    return BinauralRecording(AudioBuffer(rec.left.samples * gain, rec.sample_rate),
                             AudioBuffer(rec.right.samples * gain, rec.sample_rate),
                             rec.geometry, rec.labels)


def apply_voicing_mask(rec: BinauralRecording, threshold: float = 0.5,
                       frame_len: int = DEFAULT_VOICING_FRAME,
                       hop: int = DEFAULT_VOICING_HOP):
    """Detect voicing on the mid signal and mask both ears with it."""
    mid = AudioBuffer((rec.left.samples + rec.right.samples) / 2.0, rec.sample_rate)
    decision = detect_voicing(mid, frame_len=frame_len, hop=hop)
    return mask_unvoiced(rec, decision, threshold), decision


def spectral_floor_mask(spec: Spectrum, floor_factor: float = 1.0,
                        threshold: float | None = None) -> Spectrum:
    """Zero bins whose energy falls below floor_factor x mean bin energy
    (or an explicitly frozen threshold)."""
    energy = np.abs(spec.bins) ** 2
    thr = float(np.mean(energy)) * floor_factor if threshold is None else threshold
    bins = np.where(energy < thr, 0.0 + 0.0j, spec.bins)
    return Spectrum(bins, spec.bin_hz, spec.origin_length)


def joint_floor_mask(spec_l: Spectrum, spec_r: Spectrum,
                     floor_factor: float = 1.0) -> tuple[Spectrum, Spectrum]:
    """Shared-threshold flooring: a bin is dropped from BOTH ears when the
    two-ear mean energy at that bin falls below the threshold, keeping the
    mask interaurally consistent."""
    if spec_l.bins.shape != spec_r.bins.shape:
        raise InvalidInputError("ear spectra must have equal bin counts")
    energy = 0.5 * (np.abs(spec_l.bins) ** 2 + np.abs(spec_r.bins) ** 2)
    thr = float(np.mean(energy)) * floor_factor
    drop = energy < thr
    out_l = np.where(drop, 0.0 + 0.0j, spec_l.bins)
    out_r = np.where(drop, 0.0 + 0.0j, spec_r.bins)
    return (Spectrum(out_l, spec_l.bin_hz, spec_l.origin_length),
            Spectrum(out_r, spec_r.bin_hz, spec_r.origin_length))
