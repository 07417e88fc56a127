"""Interaural features: per-bin level and time differences, the aliasing-based
band split, the high/low inverse-convolution channel, and assembly of the
5-channel tensor consumed by the regressor.

Channel order: ild_low, ild_high, itd_low, itd_high, ratio.  ILD is in dB
(left over right, clamped to +-60), ITD in seconds with the per-bin bound
|itd(f)| <= 1/(2f).  Bins where both ears were floored to zero carry 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Spectrum, fft, stft
from .exceptions import EmptyFeaturesError, InvalidInputError
from .preprocess import joint_floor_mask
from .rendering import BinauralRecording

ILD_CLAMP_DB = 60.0
CHANNEL_NAMES = ("ild_low", "ild_high", "itd_low", "itd_high", "ratio")
_FEAT_MAGIC = b"FEAT"
_FEAT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    channel_len: int = 512
    floor_factor: float | None = 1.0
    mode: str = "utterance"            # or "frames"
    ratio_mode: str = "convolution"    # or "band-energy"
    ratio_eps_db: float = 0.5
    speed_of_sound_mps: float = 343.0
    split_hz: float | None = None      # default: aliasing frequency of scene h
    frame_len: int = 512
    hop: int = 256

    def __post_init__(self) -> None:
        if self.mode not in ("utterance", "frames"):
            raise InvalidInputError(f"unknown feature mode {self.mode!r}")
        if self.ratio_mode not in ("convolution", "band-energy"):
            raise InvalidInputError(f"unknown ratio mode {self.ratio_mode!r}")
        if self.channel_len < 8:
            raise InvalidInputError("channel_len too small")


@dataclass(frozen=True)
class FeatureTensor:
    """5 x L feature block with the spectrum geometry it was cut from."""

    channels: np.ndarray
    bin_hz: float
    split_bin: int

    def __post_init__(self) -> None:
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != 5:
            raise InvalidInputError("channels must have shape (5, L)")
        if not np.all(np.isfinite(ch)):
            raise InvalidInputError("features contain NaN/Inf")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    def flat(self) -> np.ndarray:
        return self.channels.reshape(-1)


def ild(yl: Spectrum, yr: Spectrum) -> np.ndarray:
    """Per-bin 20 log10(|Y_l| / |Y_r|), clamped; both-zero bins give 0.

    Computed as a difference of per-ear log magnitudes so swapping the ears
    negates the vector exactly.
    """
    if yl.bins.shape != yr.bins.shape:
        raise InvalidInputError("ear spectra must have equal bin counts")
    with np.errstate(divide="ignore", invalid="ignore"):
        level_l = 20.0 * np.log10(np.abs(yl.bins))
        level_r = 20.0 * np.log10(np.abs(yr.bins))
        diff = level_l - level_r
    diff = np.where(np.isnan(diff), 0.0, diff)
    return np.clip(diff, -ILD_CLAMP_DB, ILD_CLAMP_DB)


def itd(yl: Spectrum, yr: Spectrum) -> np.ndarray:
    """Per-bin interaural phase over 2*pi*f, in seconds; bin 0 gives 0.

    The phase difference is taken per ear and wrapped to (-pi, pi], so
    identical ears give exact zeros and swapping negates exactly.
    """
    if yl.bins.shape != yr.bins.shape:
        raise InvalidInputError("ear spectra must have equal bin counts")
    d = np.angle(yl.bins) - np.angle(yr.bins)
    phase = d - 2.0 * np.pi * np.round(d / (2.0 * np.pi))
    freqs = np.arange(yl.bins.shape[0]) * yl.bin_hz
    out = np.zeros_like(phase)
    nz = freqs > 0
    out[nz] = phase[nz] / (2.0 * np.pi * freqs[nz])
    return out


def aliasing_frequency(h_m: float, c_mps: float = 343.0) -> float:
    """Spatial aliasing limit c / (2h) for head width h."""
    if h_m <= 0:
        raise InvalidInputError("head width must be positive")
    return c_mps / (2.0 * h_m)


def split_bands(vec: np.ndarray, bin_hz: float, f_split: float):
    """Partition a per-bin vector at f_split (low band inclusive)."""
    vec = np.asarray(vec)
    top = (vec.shape[0] - 1) * bin_hz
    if not (0.0 <= f_split <= top):
        raise InvalidInputError(f"split frequency {f_split} outside [0, {top}]")
    n_low = int(f_split // bin_hz) + 1
    return vec[:n_low], vec[n_low:]


def regularized(vec: np.ndarray, eps: float) -> np.ndarray:
    """sign(x) * max(|x|, eps), treating sign(0) as +1."""
    sign = np.where(vec < 0.0, -1.0, 1.0)
    return sign * np.maximum(np.abs(vec), eps)


def ratio_feature(ild_low: np.ndarray, ild_high: np.ndarray, length: int = 512,
                  eps_db: float = 0.5, mode: str = "convolution") -> np.ndarray:
    """Fifth channel contrasting high-band against low-band level differences.

    Default: linear convolution of ild_high with the elementwise reciprocal of
    the regularized ild_low, center-cropped (or zero-padded) to ``length``.
    ``mode="band-energy"`` instead emits the constant high/low energy ratio.
    """
    if mode == "band-energy":
        num = float(np.mean(np.square(ild_high))) if ild_high.size else 0.0
        den = float(np.mean(np.square(ild_low))) if ild_low.size else 0.0
        r = 10.0 * np.log10((num + 1e-12) / (den + 1e-12))
        return np.full(length, r)
    if ild_low.size == 0 or ild_high.size == 0:
        return np.zeros(length)
    inv = 1.0 / regularized(np.asarray(ild_low, dtype=np.float64), eps_db)
    full = np.convolve(np.asarray(ild_high, dtype=np.float64), inv)
    return _center_fit(full, length)


def _center_fit(vec: np.ndarray, length: int) -> np.ndarray:
    if vec.shape[0] >= length:
        start = (vec.shape[0] - length) // 2
        return vec[start: start + length].copy()
    out = np.zeros(length)
    start = (length - vec.shape[0]) // 2
    out[start: start + vec.shape[0]] = vec
    return out


def resample_channel(vec: np.ndarray, length: int) -> np.ndarray:
    """Averaging-based downsample to ``length`` (zero-padded if shorter)."""
    vec = np.asarray(vec, dtype=np.float64)
    n = vec.shape[0]
    if n == length:
        return vec.copy()
    if n < length:
        out = np.zeros(length)
        out[:n] = vec
        return out
    bounds = (np.arange(length + 1) * n) // length
    sums = np.add.reduceat(vec, bounds[:-1])
    return sums / np.diff(bounds)


def _interaural_vectors(rec: BinauralRecording, cfg: FeatureConfig):
    """Whole-utterance (default) or frame-averaged ILD/ITD vectors, plus the
    two-ear mean energy spectrum used by the band-energy ratio channel."""
    if cfg.mode == "utterance":
        yl = fft(rec.left)
        yr = fft(rec.right)
        if cfg.floor_factor is not None:
            yl, yr = joint_floor_mask(yl, yr, cfg.floor_factor)
        energy = 0.5 * (np.abs(yl.bins) ** 2 + np.abs(yr.bins) ** 2)
        return ild(yl, yr), itd(yl, yr), energy, yl.bin_hz
    sl = stft(rec.left, cfg.frame_len, cfg.hop)
    sr = stft(rec.right, cfg.frame_len, cfg.hop)
    ild_acc, itd_acc, e_acc, used = None, None, None, 0
    for fl, fr in zip(sl.frames, sr.frames):
        if not (np.any(fl.bins) or np.any(fr.bins)):
            continue
        if cfg.floor_factor is not None:
            fl, fr = joint_floor_mask(fl, fr, cfg.floor_factor)
        i_vec = ild(fl, fr)
        t_vec = itd(fl, fr)
        e_vec = 0.5 * (np.abs(fl.bins) ** 2 + np.abs(fr.bins) ** 2)
        ild_acc = i_vec if ild_acc is None else ild_acc + i_vec
        itd_acc = t_vec if itd_acc is None else itd_acc + t_vec
        e_acc = e_vec if e_acc is None else e_acc + e_vec
        used += 1
    if used == 0:
        raise EmptyFeaturesError("no frames with signal")
    return ild_acc / used, itd_acc / used, e_acc / used, sl.frames[0].bin_hz


def energy_tilt_curve(energy: np.ndarray, bin_hz: float, f_split: float,
                      length: int) -> np.ndarray:
    """Band-energy ratio channel: each high-band bin's energy over the mean
    low-band energy, in dB, resampled to ``length``.  Captures the
    frequency-dependent attenuation a turned-away speaker imprints on both
    ears; bins with no energy stay 0."""
    e_low, e_high = split_bands(energy, bin_hz, f_split)
    ref = float(np.mean(e_low)) if e_low.size else 0.0
    if ref <= 0.0:
        return np.zeros(length)
    with np.errstate(divide="ignore"):
        vec = 10.0 * np.log10(e_high / ref)
    vec = np.where(np.isfinite(vec), vec, 0.0)
    return resample_channel(np.clip(vec, -80.0, 80.0), length)


def assemble(rec: BinauralRecording, cfg: FeatureConfig = FeatureConfig()) -> FeatureTensor:
    """Build the 5-channel tensor for one (already preprocessed) recording.

    The fifth channel follows ``cfg.ratio_mode``: the default convolves the
    high-band level differences with the reciprocal of the regularized
    low-band ones; ``"band-energy"`` instead emits the per-bin high/low
    energy-ratio curve of the two-ear mean spectrum.
    """
    if not (np.any(rec.left.samples) or np.any(rec.right.samples)):
        raise EmptyFeaturesError("all-zero recording")
    ild_vec, itd_vec, energy, bin_hz = _interaural_vectors(rec, cfg)
    f_split = cfg.split_hz
    if f_split is None:
        f_split = aliasing_frequency(rec.geometry.h_m, cfg.speed_of_sound_mps)
    f_split = min(f_split, (ild_vec.shape[0] - 1) * bin_hz)
    ild_low, ild_high = split_bands(ild_vec, bin_hz, f_split)
    itd_low, itd_high = split_bands(itd_vec, bin_hz, f_split)
    L = cfg.channel_len
    if cfg.ratio_mode == "band-energy":
        ratio = energy_tilt_curve(energy, bin_hz, f_split, L)
    else:
        ratio = ratio_feature(ild_low, ild_high, L, cfg.ratio_eps_db)
    channels = np.stack([
        resample_channel(ild_low, L),
        resample_channel(ild_high, L),
        resample_channel(itd_low, L),
        resample_channel(itd_high, L),
        ratio,
    ])
    return FeatureTensor(channels, bin_hz=bin_hz, split_bin=ild_low.shape[0])


@dataclass(frozen=True)
class FeatureBatch:
    """Stacked tensors with (theta_dir, theta_ori) labels in degrees."""

    data: np.ndarray     # (n, 5, L) float32
    labels: np.ndarray   # (n, 2) float64

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.float64)
        if data.ndim != 3 or data.shape[1] != 5:
            raise InvalidInputError("batch data must be (n, 5, L)")
        if labels.shape != (data.shape[0], 2):
            raise InvalidInputError("labels must be (n, 2)")
        data.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def channel_len(self) -> int:
        return self.data.shape[2]

    def subset(self, idx) -> "FeatureBatch":
        return FeatureBatch(self.data[idx], self.labels[idx])


def from_tensors(tensors, labels) -> FeatureBatch:
    data = np.stack([t.channels for t in tensors]).astype(np.float32)
    return FeatureBatch(data, np.asarray(labels, dtype=np.float64))


def save_batch(path, batch: FeatureBatch) -> None:
    header = struct.pack("<4sIIII", _FEAT_MAGIC, _FEAT_VERSION, len(batch),
                         batch.channel_len, 5)
    labels = np.ascontiguousarray(batch.labels, dtype="<f8")
    data = np.ascontiguousarray(batch.data, dtype="<f4")
    Path(path).write_bytes(header + labels.tobytes() + data.tobytes())


def load_batch(path) -> FeatureBatch:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<4sIIII")
    magic, version, count, length, n_ch = struct.unpack("<4sIIII", raw[:head])
    if magic != _FEAT_MAGIC:
        raise InvalidInputError("not a feature batch file")
    if version != _FEAT_VERSION or n_ch != 5:
        raise InvalidInputError("unsupported feature batch layout")
    lab_bytes = count * 2 * 8
    labels = np.frombuffer(raw[head: head + lab_bytes], dtype="<f8").reshape(count, 2)
    data = np.frombuffer(raw[head + lab_bytes:], dtype="<f4")
    if data.shape[0] != count * 5 * length:
        raise InvalidInputError("truncated feature batch file")
    return FeatureBatch(data.reshape(count, 5, length), labels)
