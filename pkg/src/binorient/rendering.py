"""Binaural synthesis: source spectrum x near-field HRTF x parallax-adjusted
voice pattern, per ear, as a whole-utterance frequency-domain product.

The source is zero-padded by the table-implied filter length to suppress
circular wrap-around, and the output is truncated back to the source length.
The function is linear in the source; level normalization for dataset
generation happens upstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .directivity import DirectivityTable, NearFieldParams, dvf_for_kind, lookup, \
    KIND_HRTF_LEFT, KIND_HRTF_RIGHT, KIND_VDP, parallax_adjust
from .dsp import AudioBuffer, next_pow2, read_wav, stereo, write_wav
from .exceptions import InvalidGeometryError, InvalidInputError
from .geometry import SceneGeometry


@dataclass(frozen=True)
class BinauralRecording:
    left: AudioBuffer
    right: AudioBuffer
    geometry: SceneGeometry
    labels: tuple

    def __post_init__(self) -> None:
        if self.left.channels != 1 or self.right.channels != 1:
            raise InvalidInputError("ear channels must be mono")
        if len(self.left) != len(self.right):
            raise InvalidInputError("ear channels must have equal length")
        if self.left.sample_rate != self.right.sample_rate:
            raise InvalidInputError("ear channels must share a sample rate")

    @property
    def sample_rate(self) -> float:
        return self.left.sample_rate

    def __len__(self) -> int:
        return len(self.left)


def _check_coverage(table: DirectivityTable, sample_rate: float) -> None:
    if table.max_frequency_hz < 0.999 * (sample_rate / 2.0):
        raise InvalidInputError(
            f"table covers {table.max_frequency_hz} Hz but the source needs "
            f"{sample_rate / 2.0} Hz; incompatible sample rate")


def _regrid(response: np.ndarray, table_freqs: np.ndarray,
            target_freqs: np.ndarray) -> np.ndarray:
    """Interpolate a sampled transfer function onto the render grid
    (linear in magnitude and unwrapped phase, edges held)."""
    mag = np.interp(target_freqs, table_freqs, np.abs(response))
    phase = np.interp(target_freqs, table_freqs, np.unwrap(np.angle(response)))
    return mag * np.exp(1j * phase)


def _ear_transfer(kind: str, hrtf: DirectivityTable, vdp: DirectivityTable,
                  geom: SceneGeometry, nf: NearFieldParams, vdp_angle: float,
                  target_freqs: np.ndarray, far_field: bool) -> np.ndarray:
    h = lookup(hrtf, geom.theta_dir_deg)
    if not far_field:
        h = h * dvf_for_kind(hrtf.frequencies(), geom.theta_dir_deg, kind, nf,
                             geom.r_m, hrtf.reference_distance_m)
    v = lookup(vdp, vdp_angle)
    return (_regrid(h, hrtf.frequencies(), target_freqs)
            * _regrid(v, vdp.frequencies(), target_freqs))


def render(source: AudioBuffer, geom: SceneGeometry,
           hrtf_l: DirectivityTable, hrtf_r: DirectivityTable,
           vdp: DirectivityTable, nf: NearFieldParams | None = None,
           far_field: bool = False) -> BinauralRecording:
    """Synthesize the ear pair for one scene."""
    if source.channels != 1:
        raise InvalidInputError("render expects a mono source")
    if hrtf_l.kind != KIND_HRTF_LEFT or hrtf_r.kind != KIND_HRTF_RIGHT:
        raise InvalidInputError("HRTF tables must carry matching ear kinds")
    if vdp.kind != KIND_VDP:
        raise InvalidInputError("voice pattern table must have kind 'vdp'")
    if nf is None:
        nf = NearFieldParams()
    for t in (hrtf_l, hrtf_r, vdp):
        _check_coverage(t, source.sample_rate)
    if not far_field and geom.r_m < 2.0 * nf.head_radius_m:
        raise InvalidGeometryError("source distance is inside the head diameter")

    n = len(source)
    pad = 2 * (max(hrtf_l.n_bins, hrtf_r.n_bins, vdp.n_bins) - 1)
    n_fft = next_pow2(n + pad)
    spectrum = np.fft.rfft(source.samples, n=n_fft)
    target_freqs = np.arange(n_fft // 2 + 1) * (source.sample_rate / n_fft)

    if far_field:
        v_left = v_right = geom.theta_ori_deg
    else:
        v_left, v_right = parallax_adjust(geom)

    g_left = _ear_transfer(KIND_HRTF_LEFT, hrtf_l, vdp, geom, nf, v_left,
                           target_freqs, far_field)
    g_right = _ear_transfer(KIND_HRTF_RIGHT, hrtf_r, vdp, geom, nf, v_right,
                            target_freqs, far_field)
    left = np.fft.irfft(spectrum * g_left, n=n_fft)[:n]
    right = np.fft.irfft(spectrum * g_right, n=n_fft)[:n]
    return BinauralRecording(AudioBuffer(left, source.sample_rate),
                             AudioBuffer(right, source.sample_rate),
                             geom, geom.labels())


def render_far_field(source: AudioBuffer, geom: SceneGeometry,
                     hrtf_l: DirectivityTable, hrtf_r: DirectivityTable,
                     vdp: DirectivityTable) -> BinauralRecording:
    """Far-field baseline: unit distance factor, zero parallax offsets."""
    return render(source, geom, hrtf_l, hrtf_r, vdp, None, far_field=True)


def save_recording(prefix, rec: BinauralRecording, bit_depth: str = "float32") -> None:
    """Stereo WAV plus a JSON sidecar with geometry and labels."""
    prefix = Path(prefix)
    write_wav(prefix.with_suffix(".wav"), stereo(rec.left, rec.right), bit_depth)
    meta = {
        "theta_dir_deg": rec.geometry.theta_dir_deg,
        "theta_ori_deg": rec.geometry.theta_ori_deg,
        "r_m": rec.geometry.r_m,
        "h_m": rec.geometry.h_m,
        "labels": list(rec.labels),
        "sample_rate": rec.sample_rate,
    }
    prefix.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_recording(prefix) -> BinauralRecording:
    prefix = Path(prefix)
    buf = read_wav(prefix.with_suffix(".wav"))
    if buf.channels != 2:
        raise InvalidInputError("recording WAV must be stereo")
    meta = json.loads(prefix.with_suffix(".json").read_text())
    geom = SceneGeometry(meta["theta_dir_deg"], meta["theta_ori_deg"],
                         meta["r_m"], meta["h_m"])
    return BinauralRecording(buf.channel(0), buf.channel(1), geom,
                             tuple(meta["labels"]))
