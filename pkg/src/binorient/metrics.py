"""Evaluation: circular angular errors, CDF/percentile summaries, per-sector
means, facing-configuration classification, and correlation diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .directivity import (DirectivityTable, KIND_HRTF_LEFT, KIND_HRTF_RIGHT,
                          lookup, parallax_adjust, uniform_grid)
from .exceptions import InvalidInputError
from .geometry import SceneGeometry

FACING_CLASSES = ("facing&facing", "facing&non-facing",
                  "non-facing&facing", "non-facing&non-facing")
SECTOR_DEG = 10.0


def angular_error(pred_deg, true_deg):
    """Circular absolute error in degrees, in [0, 180]; vectorized."""
    d = np.abs(np.asarray(pred_deg, dtype=np.float64)
               - np.asarray(true_deg, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def error_cdf(errors: np.ndarray):
    """(sorted errors, empirical percentile at each) -- nondecreasing, ends 1."""
    e = np.sort(np.asarray(errors, dtype=np.float64))
    p = np.arange(1, e.shape[0] + 1) / e.shape[0]
    return e, p


def sector_means(errors: np.ndarray, true_deg: np.ndarray,
                 sector_deg: float = SECTOR_DEG):
    """Mean error per sector of the true angle; NaN for empty sectors."""
    n_sec = int(round(360.0 / sector_deg))
    idx = np.floor((np.asarray(true_deg) + 180.0) / sector_deg).astype(int)
    idx = np.clip(idx, 0, n_sec - 1)
    centers = -180.0 + sector_deg * (np.arange(n_sec) + 0.5)
    means = np.full(n_sec, np.nan)
    for s in range(n_sec):
        sel = idx == s
        if np.any(sel):
            means[s] = float(np.mean(errors[sel]))
    return centers, means


def facing_class(theta_dir_deg, theta_ori_deg, sector_deg: float = 25.0,
                 half_width: bool = False):
    """0..3 class index: (listener facing?, speaker facing?) both from
    |angle| <= bound, boundary inclusive."""
    bound = sector_deg / 2.0 if half_width else sector_deg
    d = angular_error(theta_dir_deg, 0.0)
    o = angular_error(theta_ori_deg, 0.0)
    listener = d <= bound
    speaker = o <= bound
    return (~listener).astype(int) * 2 + (~speaker).astype(int)


def facing_classify(pred_dir, pred_ori, true_dir, true_ori,
                    sector_deg: float = 25.0, half_width: bool = False):
    """4x4 confusion matrix (rows: true class, cols: predicted class)."""
    t = facing_class(true_dir, true_ori, sector_deg, half_width)
    p = facing_class(pred_dir, pred_ori, sector_deg, half_width)
    conf = np.zeros((4, 4), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    return conf


def per_class_accuracy(confusion: np.ndarray) -> np.ndarray:
    totals = confusion.sum(axis=1)
    acc = np.full(4, np.nan)
    nz = totals > 0
    acc[nz] = np.diag(confusion)[nz] / totals[nz]
    return acc


@dataclass(frozen=True)
class EvalReport:
    errors_dir: np.ndarray
    errors_ori: np.ndarray
    true_dir: np.ndarray
    true_ori: np.ndarray
    percentiles_dir: dict
    percentiles_ori: dict
    sector_centers: np.ndarray
    sector_mean_dir: np.ndarray
    sector_mean_ori: np.ndarray
    facing_confusion: np.ndarray
    facing_accuracy: np.ndarray

    @property
    def count(self) -> int:
        return self.errors_dir.shape[0]

    def cdf_dir(self):
        return error_cdf(self.errors_dir)

    def cdf_ori(self):
        return error_cdf(self.errors_ori)

    def summary(self) -> dict:
        return {
            "count": int(self.count),
            "percentiles_dir": {k: float(v) for k, v in self.percentiles_dir.items()},
            "percentiles_ori": {k: float(v) for k, v in self.percentiles_ori.items()},
            "mean_error_dir": float(np.mean(self.errors_dir)),
            "mean_error_ori": float(np.mean(self.errors_ori)),
            "facing_confusion": self.facing_confusion.tolist(),
            "facing_accuracy": [None if np.isnan(a) else float(a)
                                for a in self.facing_accuracy],
            "facing_classes": list(FACING_CLASSES),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def evaluate(pred_angles: np.ndarray, true_angles: np.ndarray,
             facing_sector_deg: float = 25.0,
             facing_half_width: bool = False) -> EvalReport:
    """Full report from predicted and true (theta_dir, theta_ori) pairs."""
    pred = np.asarray(pred_angles, dtype=np.float64)
    true = np.asarray(true_angles, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise InvalidInputError("predictions/labels must both be (n, 2)")
    if pred.shape[0] == 0:
        raise InvalidInputError("empty evaluation batch")
    e_dir = angular_error(pred[:, 0], true[:, 0])
    e_ori = angular_error(pred[:, 1], true[:, 1])
    pct = (50, 80, 90)
    p_dir = dict(zip(pct, np.percentile(e_dir, pct)))
    p_ori = dict(zip(pct, np.percentile(e_ori, pct)))
    centers, mean_dir = sector_means(e_dir, true[:, 0])
    _, mean_ori = sector_means(e_ori, true[:, 1])
    conf = facing_classify(pred[:, 0], pred[:, 1], true[:, 0], true[:, 1],
                           facing_sector_deg, facing_half_width)
    return EvalReport(e_dir, e_ori, true[:, 0].copy(), true[:, 1].copy(),
                      p_dir, p_ori, centers, mean_dir, mean_ori, conf,
                      per_class_accuracy(conf))


def _pearson(rows: np.ndarray) -> np.ndarray:
    """Row-wise correlation; rows with zero variance (flat responses) have
    undefined correlation and are reported as 0 off-diagonal, 1 on it."""
    centered = rows - rows.mean(axis=1, keepdims=True)
    std = np.sqrt(np.mean(centered ** 2, axis=1))
    flat = std <= 0.0
    safe = np.where(flat, 1.0, std)
    unit = centered / (safe[:, None] * np.sqrt(rows.shape[1]))
    c = unit @ unit.T
    c[flat, :] = 0.0
    c[:, flat] = 0.0
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def correlation_diagnostic(hrtf_l: DirectivityTable, hrtf_r: DirectivityTable,
                           vdp: DirectivityTable, grid_step_deg: float = 10.0,
                           r_m: float = 0.9):
    """Pairwise correlation matrices of magnitude features across angles:
    HRTF over theta_dir, voice pattern over theta_ori, and the combined
    two-ear rendered magnitude over the flattened joint grid."""
    if hrtf_l.kind != KIND_HRTF_LEFT or hrtf_r.kind != KIND_HRTF_RIGHT:
        raise InvalidInputError("need left and right HRTF tables")
    angles = uniform_grid(grid_step_deg)
    h_feats = np.stack([
        np.concatenate([np.abs(lookup(hrtf_l, a)), np.abs(lookup(hrtf_r, a))])
        for a in angles])
    v_feats = np.stack([np.abs(lookup(vdp, a)) for a in angles])

    h_m = 0.18
    rows = []
    h_cache = {a: (np.abs(lookup(hrtf_l, a)), np.abs(lookup(hrtf_r, a)))
               for a in angles}
    for t_dir in angles:
        hl, hr = h_cache[t_dir]
        for t_ori in angles:
            geom = SceneGeometry(float(t_dir), float(t_ori), r_m, h_m)
            v_ang_l, v_ang_r = parallax_adjust(geom)
            rows.append(np.concatenate([
                hl * np.abs(lookup(vdp, v_ang_l)),
                hr * np.abs(lookup(vdp, v_ang_r))]))
    combined = np.stack(rows)
    return _pearson(h_feats), _pearson(v_feats), _pearson(combined)
