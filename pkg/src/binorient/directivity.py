"""Directivity tables: listener HRTFs (per ear) and speaker voice patterns.

Tables map azimuth to a complex frequency response on a uniform bin grid.
Synthetic generators stand in for measured datasets: a rigid-sphere head
(with ears placed slightly behind the interaural axis, which also breaks
front/back symmetry) and a frequency-dependent cardioid voice pattern.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sphere
from .exceptions import InvalidGeometryError, InvalidInputError
from .geometry import SceneGeometry, wrap_deg

KIND_HRTF_LEFT = "hrtf-left"
KIND_HRTF_RIGHT = "hrtf-right"
KIND_VDP = "vdp"
_KINDS = (KIND_HRTF_LEFT, KIND_HRTF_RIGHT, KIND_VDP)

DEFAULT_EAR_AZIMUTH_DEG = 100.0
_DIRT_MAGIC = b"DIRT"
_DIRT_VERSION = 1


@dataclass(frozen=True)
class NearFieldParams:
    """Spherical-head parameters for distance corrections."""

    head_radius_m: float = 0.09
    speed_of_sound_mps: float = 343.0
    reference_distance_m: float = 1.5
    ear_azimuth_deg: float = DEFAULT_EAR_AZIMUTH_DEG

    def __post_init__(self) -> None:
        if not (0.05 < self.head_radius_m < 0.15):
            raise InvalidInputError("head_radius_m must lie in (0.05, 0.15)")
        if not self.speed_of_sound_mps > 0:
            raise InvalidInputError("speed of sound must be positive")
        if not (45.0 <= self.ear_azimuth_deg <= 135.0):
            raise InvalidInputError("ear azimuth must be near the side of the head")


@dataclass(frozen=True)
class DirectivityTable:
    """Azimuth-indexed complex frequency responses.

    ``responses`` has shape (n_azimuths, n_bins); azimuths are degrees in
    [-180, 180), strictly increasing.  ``reference_distance_m`` records the
    source distance the data represents (inf for far-field measurements).
    """

    azimuths_deg: np.ndarray
    responses: np.ndarray
    bin_hz: float
    kind: str
    reference_distance_m: float

    def __post_init__(self) -> None:
        az = np.asarray(self.azimuths_deg, dtype=np.float64)
        resp = np.asarray(self.responses, dtype=np.complex128)
        if az.ndim != 1 or az.shape[0] < 3:
            raise InvalidInputError("need at least 3 azimuth entries")
        if np.any(np.diff(az) <= 0):
            raise InvalidInputError("azimuths must be strictly increasing")
        if az[0] < -180.0 or az[-1] >= 180.0:
            raise InvalidInputError("azimuths must lie in [-180, 180)")
        if resp.shape != (az.shape[0], resp.shape[1]) or resp.ndim != 2:
            raise InvalidInputError("responses must be (n_azimuths, n_bins)")
        if not np.all(np.isfinite(resp.view(np.float64))):
            raise InvalidInputError("responses contain NaN/Inf")
        mags = np.abs(resp)
        if mags.max() >= 1e4 or mags.min() <= 0.0:
            raise InvalidInputError("response magnitudes must lie in (0, 1e4)")
        if self.kind not in _KINDS:
            raise InvalidInputError(f"unknown table kind {self.kind!r}")
        if not self.bin_hz > 0:
            raise InvalidInputError("bin_hz must be positive")
        az.setflags(write=False)
        resp.setflags(write=False)
        object.__setattr__(self, "azimuths_deg", az)
        object.__setattr__(self, "responses", resp)

    @property
    def n_bins(self) -> int:
        return self.responses.shape[1]

    def frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz

    @property
    def max_frequency_hz(self) -> float:
        return (self.n_bins - 1) * self.bin_hz


def _neighbor_rows(table: DirectivityTable, azimuth_deg: float):
    """Bracketing grid rows and independent interpolation weights.

    Weights are computed as two separate ratios (not 1 - t) so a mirrored
    query on a mirrored table produces bit-identical results.
    """
    az = wrap_deg(azimuth_deg)
    grid = table.azimuths_deg
    idx = int(np.searchsorted(grid, az))
    n = grid.shape[0]
    if idx < n and grid[idx] == az:
        return idx, idx, 1.0, 0.0
    lo = idx - 1
    hi = idx % n
    az_lo = grid[lo]
    az_hi = grid[hi] if hi != 0 else grid[0] + 360.0
    if lo < 0:  # below the first grid point: wrap the top entry down
        lo = n - 1
        az_lo = grid[-1] - 360.0
        az_hi = grid[0]
        hi = 0
    span = az_hi - az_lo
    w_lo = (az_hi - az) / span
    w_hi = (az - az_lo) / span
    return lo, hi, w_lo, w_hi


def lookup(table: DirectivityTable, azimuth_deg: float) -> np.ndarray:
    """Response at an azimuth; exact row on grid hits, otherwise linear
    interpolation of magnitude and shortest-path phase per bin."""
    lo, hi, w_lo, w_hi = _neighbor_rows(table, azimuth_deg)
    if lo == hi:
        return table.responses[lo].copy()
    r_lo = table.responses[lo]
    r_hi = table.responses[hi]
    mag = w_lo * np.abs(r_lo) + w_hi * np.abs(r_hi)
    p_lo = np.angle(r_lo)
    p_hi = np.angle(r_hi)
    diff = p_hi - p_lo
    k = np.round(diff / (2.0 * np.pi))
    phase = w_lo * p_lo + w_hi * (p_hi - 2.0 * np.pi * k)
    return mag * np.exp(1j * phase)


def ear_incidence_deg(source_azimuth_deg: float, kind: str,
                      ear_azimuth_deg: float = DEFAULT_EAR_AZIMUTH_DEG) -> float:
    """Central angle between the source ray and an ear position."""
    if kind == KIND_HRTF_RIGHT:
        ear = ear_azimuth_deg
    elif kind == KIND_HRTF_LEFT:
        ear = -ear_azimuth_deg
    else:
        raise InvalidInputError("incidence is defined for HRTF tables only")
    return abs(wrap_deg(source_azimuth_deg - ear))


def dvf_for_kind(freqs_hz: np.ndarray, source_azimuth_deg: float, kind: str,
                 params: NearFieldParams, target_distance_m: float,
                 reference_distance_m: float) -> np.ndarray:
    """Distance variation factor for one ear at one source azimuth.

    A NaN reference marks a distance-invariant table (ideal point receivers):
    the factor is identically 1.
    """
    freqs_hz = np.asarray(freqs_hz)
    if math.isnan(reference_distance_m):
        return np.ones(freqs_hz.shape[0], dtype=np.complex128)
    a = params.head_radius_m
    inc = ear_incidence_deg(source_azimuth_deg, kind, params.ear_azimuth_deg)
    mu = 2.0 * np.pi * freqs_hz * a / params.speed_of_sound_mps
    rho = target_distance_m / a
    rho_ref = reference_distance_m / a
    return sphere.distance_variation_factor(mu, rho, math.cos(math.radians(inc)),
                                            rho_ref=rho_ref)


def near_field_correct(table: DirectivityTable, params: NearFieldParams,
                       target_distance_m: float) -> DirectivityTable:
    """Re-reference an HRTF table to a new source distance via the
    rigid-sphere distance variation function (identity at the reference)."""
    if table.kind not in (KIND_HRTF_LEFT, KIND_HRTF_RIGHT):
        raise InvalidInputError("near-field correction applies to HRTF tables")
    if target_distance_m < 2.0 * params.head_radius_m:
        raise InvalidGeometryError("target distance is inside the head diameter")
    if not (0.2 <= target_distance_m <= 10.0):
        raise InvalidInputError("target distance must lie in [0.2, 10] m")
    if math.isnan(table.reference_distance_m):
        return table  # distance-invariant table: nothing to re-reference
    if target_distance_m == table.reference_distance_m:
        return table
    freqs = table.frequencies()
    corrected = np.empty_like(table.responses)
    for i, az in enumerate(table.azimuths_deg):
        dvf = dvf_for_kind(freqs, float(az), table.kind, params,
                           target_distance_m, table.reference_distance_m)
        corrected[i] = table.responses[i] * dvf
    return DirectivityTable(table.azimuths_deg.copy(), corrected, table.bin_hz,
                            table.kind, target_distance_m)


def parallax_adjust(geom: SceneGeometry) -> tuple[float, float]:
    """Voice-pattern evaluation angles for the left and right ear.

    The ipsilateral ear gets the exact parallax angle, the contralateral ear
    the grazing-ray offset; the printed right-ipsilateral form applies for
    theta_dir >= 0 and is mirrored otherwise.
    """
    t_ori = geom.theta_ori_deg
    alpha = geom.alpha_deg
    if geom.theta_dir_deg >= 0.0:
        beta = geom.beta_deg()
        return (t_ori - alpha, t_ori + beta)
    beta = geom.beta_deg(-geom.theta_dir_deg)
    return (t_ori - beta, t_ori + alpha)


def uniform_grid(grid_step_deg: float) -> np.ndarray:
    ratio = 360.0 / grid_step_deg
    if abs(ratio - round(ratio)) > 1e-9:
        raise InvalidInputError("grid step must divide 360")
    n = int(round(ratio))
    return -180.0 + grid_step_deg * np.arange(n)


def synth_hrtf(params: NearFieldParams, grid_step_deg: float = 5.0,
               bins: int = 257, bin_hz: float = 31.25,
               ) -> tuple[DirectivityTable, DirectivityTable]:
    """Left/right spherical-head HRTF tables (far-field, mirror images)."""
    az = uniform_grid(grid_step_deg)
    freqs = np.arange(bins) * bin_hz
    mu = 2.0 * np.pi * freqs * params.head_radius_m / params.speed_of_sound_mps
    inc = np.array([math.cos(math.radians(abs(wrap_deg(a - params.ear_azimuth_deg))))
                    for a in az])
    right = sphere.plane_wave_response(mu, inc)
    n = az.shape[0]
    # left ear = right ear of the mirrored scene, row-for-row
    left = right[(n - np.arange(n)) % n]
    table_r = DirectivityTable(az, right, bin_hz, KIND_HRTF_RIGHT, math.inf)
    table_l = DirectivityTable(az.copy(), left, bin_hz, KIND_HRTF_LEFT, math.inf)
    return table_l, table_r


def synth_vdp(directivity_strength: float, bins: int = 257, bin_hz: float = 31.25,
              grid_step_deg: float = 5.0, corner_hz: float = 8000.0) -> DirectivityTable:
    """Frequency-dependent cardioid voice pattern.

    Per-bin gain 1 - a(f) * (1 - cos theta) / 2 with a(f) growing linearly to
    ``directivity_strength`` at ``corner_hz``; the front direction has unit
    gain at every bin.
    """
    if directivity_strength < 0:
        raise InvalidInputError("directivity strength must be >= 0")
    az = uniform_grid(grid_step_deg)
    freqs = np.arange(bins) * bin_hz
    a_f = directivity_strength * np.minimum(1.0, freqs / corner_hz)
    # evaluate on |azimuth| so mirrored rows are bit-identical
    cos_t = np.cos(np.radians(np.abs(az)))
    gains = 1.0 - np.outer((1.0 - cos_t) / 2.0, a_f)
    gains = np.maximum(gains, 1e-6)
    return DirectivityTable(az, gains.astype(np.complex128), bin_hz, KIND_VDP, math.inf)


def omni_vdp(bins: int = 257, bin_hz: float = 31.25,
             grid_step_deg: float = 5.0) -> DirectivityTable:
    return synth_vdp(0.0, bins=bins, bin_hz=bin_hz, grid_step_deg=grid_step_deg)


def identity_table(kind: str, bins: int = 9, bin_hz: float = 1000.0,
                   grid_step_deg: float = 45.0) -> DirectivityTable:
    """All-ones table; the NaN reference makes it distance-invariant, so it
    passes signals through unchanged at any scene distance."""
    az = uniform_grid(grid_step_deg)
    resp = np.ones((az.shape[0], bins), dtype=np.complex128)
    return DirectivityTable(az, resp, bin_hz, kind, math.nan)


_KIND_CODES = {KIND_HRTF_LEFT: 0, KIND_HRTF_RIGHT: 1, KIND_VDP: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def save_table(path, table: DirectivityTable) -> None:
    """Write the binary container (uniform azimuth grids only) plus a
    key=value metadata sidecar."""
    n_az = table.azimuths_deg.shape[0]
    step = 360.0 / n_az
    expected = -180.0 + step * np.arange(n_az)
    if not np.allclose(table.azimuths_deg, expected, atol=1e-9):
        raise InvalidInputError("binary container requires a uniform grid from -180")
    path = Path(path)
    header = struct.pack("<4sIIIIdd", _DIRT_MAGIC, _DIRT_VERSION,
                         _KIND_CODES[table.kind], n_az, table.n_bins,
                         table.bin_hz, table.reference_distance_m)
    inter = np.empty((n_az, table.n_bins, 2), dtype="<f8")
    inter[:, :, 0] = table.responses.real
    inter[:, :, 1] = table.responses.imag
    path.write_bytes(header + inter.tobytes())
    meta = (f"format=DIRT\nversion={_DIRT_VERSION}\nkind={table.kind}\n"
            f"azimuth_count={n_az}\nbin_count={table.n_bins}\n"
            f"bin_hz={table.bin_hz!r}\n"
            f"reference_distance_m={table.reference_distance_m!r}\n"
            f"grid_step_deg={step!r}\n")
    path.with_suffix(path.suffix + ".meta.txt").write_text(meta)


def load_table(path) -> DirectivityTable:
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIIIIdd")
    magic, version, kind_code, n_az, n_bins, bin_hz, ref = struct.unpack(
        "<4sIIIIdd", raw[:head_size])
    if magic != _DIRT_MAGIC:
        raise InvalidInputError("not a directivity table file")
    if version != _DIRT_VERSION:
        raise InvalidInputError(f"unsupported container version {version}")
    if kind_code not in _CODE_KINDS:
        raise InvalidInputError(f"unknown table kind code {kind_code}")
    body = np.frombuffer(raw[head_size:], dtype="<f8")
    if body.shape[0] != n_az * n_bins * 2:
        raise InvalidInputError("truncated directivity table file")
    inter = body.reshape(n_az, n_bins, 2)
    resp = inter[:, :, 0] + 1j * inter[:, :, 1]
    az = -180.0 + (360.0 / n_az) * np.arange(n_az)
    return DirectivityTable(az, resp, bin_hz, _CODE_KINDS[kind_code], ref)
