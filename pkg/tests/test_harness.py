import json

import numpy as np
import pytest
from scipy import stats

from binorient.dataset import DatasetSpec, generate_dataset, sample_rng
from binorient.directivity import NearFieldParams, synth_hrtf, synth_vdp
from binorient.dsp import fft
from binorient.exceptions import InvalidInputError
from binorient.features import FeatureConfig, save_batch
from binorient.metrics import (FACING_CLASSES, angular_error,
                               correlation_diagnostic, error_cdf, evaluate,
                               facing_class, facing_classify, per_class_accuracy)
from binorient.preprocess import detect_voicing
from binorient.speech import load_speech_dir, synth_speech


# ---------------------------------------------------------------------------
# synthetic speech
# ---------------------------------------------------------------------------

def test_synth_speech_unit_rms_and_deterministic():
    a = synth_speech(1.0, 150.0, 5)
    b = synth_speech(1.0, 150.0, 5)
    assert np.array_equal(a.samples, b.samples)
    assert abs(a.rms() - 1.0) < 1e-9
    c = synth_speech(1.0, 150.0, 6)
    assert not np.array_equal(a.samples, c.samples)


def test_synth_speech_marks_voiced():
    buf = synth_speech(1.0, 150.0, 1, voiced_fraction=1.0)
    dec = detect_voicing(buf)
    assert (dec.probabilities > 0.5).mean() > 0.9


def test_synth_speech_harmonic_peaks():
    f0 = 140.0
    buf = synth_speech(1.0, f0, 2, voiced_fraction=1.0)
    spec = fft(buf)
    mags = np.abs(spec.bins)
    for k in range(1, 11):
        target = k * f0
        want_bin = int(round(target / spec.bin_hz))
        lo, hi = want_bin - 5, want_bin + 6
        peak_bin = lo + int(np.argmax(mags[lo:hi]))
        assert abs(peak_bin * spec.bin_hz - target) <= spec.bin_hz


def test_synth_speech_validation():
    with pytest.raises(InvalidInputError):
        synth_speech(0.0, 150.0, 1)
    with pytest.raises(InvalidInputError):
        synth_speech(1.0, 60.0, 1)


def test_load_speech_dir(tmp_path):
    from binorient.dsp import write_wav
    for i in range(3):
        write_wav(tmp_path / f"w{i}.wav", synth_speech(0.2, 120.0 + i, i))
    clips = load_speech_dir(tmp_path)
    assert len(clips) == 3
    with pytest.raises(InvalidInputError):
        load_speech_dir(tmp_path / "nope")


# ---------------------------------------------------------------------------
# angular error / evaluation
# ---------------------------------------------------------------------------

def test_angular_error_wraparound():
    assert angular_error(10.0, 350.0) == 20.0
    assert angular_error(42.0, 42.0) == 0.0
    assert angular_error(179.0, -179.0) == 2.0


def test_angular_error_properties():
    rng = np.random.default_rng(0)
    a = rng.uniform(-180, 180, 300)
    b = rng.uniform(-180, 180, 300)
    e = angular_error(a, b)
    assert np.all(e >= 0.0) and np.all(e <= 180.0)
    assert np.array_equal(e, angular_error(b, a))
    assert np.all(angular_error(a, a + 360.0) < 1e-9)


def test_evaluate_perfect_predictor():
    rng = np.random.default_rng(1)
    labels = np.stack([rng.uniform(-180, 180, 50), rng.uniform(-180, 180, 50)], 1)
    rep = evaluate(labels.copy(), labels)
    assert np.all(rep.errors_dir == 0.0)
    assert rep.percentiles_dir[90] == 0.0
    e, p = rep.cdf_dir()
    assert p[-1] == 1.0
    assert np.all(np.diff(p) >= 0.0)


def test_evaluate_constant_predictor_mean_90():
    rng = np.random.default_rng(2)
    n = 20000
    labels = np.stack([rng.uniform(-180, 180, n), rng.uniform(-180, 180, n)], 1)
    pred = np.zeros_like(labels)
    rep = evaluate(pred, labels)
    assert abs(np.mean(rep.errors_dir) - 90.0) < 2.0
    assert abs(np.mean(rep.errors_ori) - 90.0) < 2.0


def test_cdf_reaches_one_and_monotone():
    e, p = error_cdf(np.array([3.0, 1.0, 2.0, 2.0]))
    assert np.array_equal(e, [1.0, 2.0, 2.0, 3.0])
    assert p[-1] == 1.0
    assert np.all(np.diff(p) >= 0.0)


def test_sector_means_shape():
    rng = np.random.default_rng(3)
    labels = np.stack([rng.uniform(-180, 180, 720), rng.uniform(-180, 180, 720)], 1)
    rep = evaluate(labels + 1.0, labels)
    assert rep.sector_centers.shape == (36,)
    assert rep.sector_mean_dir.shape == (36,)
    assert np.nanmax(rep.sector_mean_dir) <= 180.0


# ---------------------------------------------------------------------------
# facing classification
# ---------------------------------------------------------------------------

def test_facing_class_corners():
    assert facing_class(0.0, 0.0) == 0          # facing & facing
    assert facing_class(0.0, 180.0) == 1        # facing & non-facing
    assert facing_class(180.0, 0.0) == 2
    assert facing_class(90.0, -120.0) == 3


def test_facing_boundary_inclusive():
    assert facing_class(25.0, 0.0) == 0
    assert facing_class(25.0000001, 0.0) == 2
    assert facing_class(0.0, -25.0) == 0
    # half-width reading: bound becomes 12.5
    assert facing_class(20.0, 0.0, half_width=True) == 2
    assert facing_class(12.5, 0.0, half_width=True) == 0


def test_facing_confusion_counts_sum():
    rng = np.random.default_rng(4)
    td = rng.uniform(-180, 180, 400)
    to = rng.uniform(-180, 180, 400)
    conf = facing_classify(td + 5, to - 5, td, to)
    assert conf.sum() == 400
    acc = per_class_accuracy(conf)
    assert np.all((acc >= 0) & (acc <= 1))
    perfect = facing_classify(td, to, td, to)
    assert np.trace(perfect) == 400
    assert len(FACING_CLASSES) == 4


# ---------------------------------------------------------------------------
# correlation diagnostics
# ---------------------------------------------------------------------------

def test_correlation_matrices_properties():
    nf = NearFieldParams()
    hl, hr = synth_hrtf(nf, grid_step_deg=30.0, bins=33, bin_hz=250.0)
    vdp = synth_vdp(0.9, bins=33, bin_hz=250.0, grid_step_deg=30.0)
    c_h, c_v, c_c = correlation_diagnostic(hl, hr, vdp, grid_step_deg=30.0)
    for mat, n in ((c_h, 12), (c_v, 12), (c_c, 144)):
        assert mat.shape == (n, n)
        assert np.max(np.abs(np.diag(mat) - 1.0)) < 1e-12
        assert np.max(np.abs(mat - mat.T)) < 1e-12


def test_correlation_vdp_lateral_symmetry():
    nf = NearFieldParams()
    hl, hr = synth_hrtf(nf, grid_step_deg=30.0, bins=33, bin_hz=250.0)
    vdp = synth_vdp(0.9, bins=33, bin_hz=250.0, grid_step_deg=30.0)
    _, c_v, _ = correlation_diagnostic(hl, hr, vdp, grid_step_deg=30.0)
    angles = np.arange(-180.0, 180.0, 30.0)
    for i, a in enumerate(angles):
        j = int(np.where(angles == (-a if a != -180.0 else -180.0))[0][0])
        assert c_v[i, j] > 0.99  # cardioid patterns are laterally symmetric


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def _tiny_spec(**kw):
    base = dict(count=6, seed=3,
                feature=FeatureConfig(channel_len=64))
    base.update(kw)
    return DatasetSpec(**base)


def test_generate_deterministic_and_parallel_equal(tmp_path):
    spec = _tiny_spec()
    b1 = generate_dataset(spec, n_jobs=1)
    b2 = generate_dataset(spec, n_jobs=2)
    assert np.array_equal(b1.data, b2.data)
    assert np.array_equal(b1.labels, b2.labels)
    p1, p2 = tmp_path / "a.feat", tmp_path / "b.feat"
    save_batch(p1, b1)
    save_batch(p2, b2)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_far_field_flag_changes_features():
    near = generate_dataset(_tiny_spec(near_field=True))
    far = generate_dataset(_tiny_spec(near_field=False))
    assert np.array_equal(near.labels, far.labels)  # same scenes
    assert not np.array_equal(near.data, far.data)


def test_label_distribution_uniform():
    # KS statistic of theta_dir labels against uniform < 0.05 at n = 4000
    n = 4000
    draws = np.array([sample_rng(99, i).uniform(-180.0, 180.0) for i in range(n)])
    ks = stats.kstest(draws, stats.uniform(loc=-180.0, scale=360.0).cdf)
    assert ks.statistic < 0.05


def test_spec_json_round_trip():
    spec = _tiny_spec(vdp_strengths=(0.7, 0.9), hrtf_radii=(0.08, 0.09),
                      hrtf_ear_azimuths=(98.0, 102.0))
    back = DatasetSpec.from_json(spec.to_json())
    assert back == spec


def test_generate_rejects_empty():
    with pytest.raises(InvalidInputError):
        generate_dataset(_tiny_spec(count=0))
