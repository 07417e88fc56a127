"""Acceptance gate: one test per criterion, each printing a PASS line.

The desk-scale end-to-end criteria (8 and 9) share a module-scoped fixture
that generates 20k+2k samples, trains the regressor for 30 epochs for both
the near-field and far-field pipelines, and runs the held-out-listener
fine-tuning protocol.  Expect roughly an hour for the whole module on a
small CPU box; everything else finishes in seconds to minutes.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

import binorient.estimator as est
from binorient.dataset import DatasetSpec, ScenePools, generate_dataset
from binorient.directivity import (DirectivityTable, NearFieldParams,
                                   identity_table, lookup, near_field_correct,
                                   parallax_adjust, synth_hrtf, synth_vdp,
                                   KIND_HRTF_LEFT, KIND_HRTF_RIGHT, KIND_VDP,
                                   dvf_for_kind)
from binorient.dsp import AudioBuffer, Spectrum, fft, ifft, istft, stft
from binorient.experiments import ExperimentConfig, build_template_bank, _subset_spec
from binorient.features import (FeatureBatch, aliasing_frequency, ild, itd,
                                save_batch)
from binorient.geometry import SceneGeometry
from binorient.metrics import evaluate, facing_classify, per_class_accuracy
from binorient.rendering import render


def _announce(num: int, text: str) -> None:
    print(f"\nACCEPTANCE PASS criterion {num}: {text}")


# ---------------------------------------------------------------------------
# 1. signal core
# ---------------------------------------------------------------------------

def test_criterion_1_signal_core():
    start = time.time()
    rng = np.random.default_rng(0)

    x = rng.standard_normal(1024)
    x /= np.sqrt(np.mean(x ** 2))
    spec = fft(AudioBuffer(x, 16000.0))
    m2 = np.abs(spec.bins) ** 2
    rhs = (m2[0] + 2.0 * m2[1:-1].sum() + m2[-1]) / spec.n_fft
    assert abs(np.sum(x ** 2) - rhs) / np.sum(x ** 2) < 1e-9

    for n in (64, 1000, 4096, 2 ** 16):
        y = rng.uniform(-1, 1, n)
        back = ifft(fft(AudioBuffer(y, 16000.0)))
        assert np.max(np.abs(back.samples - y)) < 1e-9

    z = rng.standard_normal(16000)
    s = stft(AudioBuffer(z, 16000.0), 512, 256, "hann")
    back = istft(s, "hann")
    m = min(len(back), len(z))  # istft covers whole frames only
    assert np.max(np.abs(back.samples[512:m - 512] - z[512:m - 512])) < 1e-6

    elapsed = time.time() - start
    assert elapsed < 10.0
    _announce(1, f"Parseval 1e-9, fft/ifft and stft/istft round trips "
                 f"({elapsed:.1f}s < 10s)")


# ---------------------------------------------------------------------------
# 2. geometry
# ---------------------------------------------------------------------------

def test_criterion_2_geometry():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        h = rng.uniform(0.102, 0.298)
        r = rng.uniform(max(0.21, h * 1.2), 8.0)
        t_dir = rng.uniform(-180.0, 180.0 - 1e-12)
        geom = SceneGeometry(t_dir, 0.0, r, h)
        alpha_hi = float(mpmath.degrees(mpmath.asin((h / 2) / r)))
        t = mpmath.radians(abs(t_dir) if t_dir < 0 else t_dir)
        beta_hi = float(mpmath.degrees(mpmath.atan(
            (h * mpmath.cos(t) / 2) / (r - h * mpmath.sin(t) / 2))))
        got_beta = geom.beta_deg(abs(t_dir) if t_dir < 0 else t_dir)
        worst = max(worst, abs(geom.alpha_deg - alpha_hi), abs(got_beta - beta_hi))
    assert worst < 1e-9

    far = SceneGeometry(37.0, 5.0, 1e6, 0.18)
    left, right = parallax_adjust(far)
    assert abs(left - 5.0) < 1e-3 and abs(right - 5.0) < 1e-3
    _announce(2, f"ear-offset formulas match 50-digit evaluation at 1000 "
                 f"random scenes (worst {worst:.2e} deg); far-field offsets "
                 f"vanish at r=1e6")


# ---------------------------------------------------------------------------
# 3. renderer
# ---------------------------------------------------------------------------

def test_criterion_3_renderer():
    rng = np.random.default_rng(2)
    nf = NearFieldParams()
    hl, hr = synth_hrtf(nf)
    vdp = synth_vdp(0.9)
    x = AudioBuffer(rng.standard_normal(4000), 16000.0)

    ident = [identity_table(k) for k in (KIND_HRTF_LEFT, KIND_HRTF_RIGHT, KIND_VDP)]
    rec = render(x, SceneGeometry(33.0, -70.0, 0.8, 0.18), *ident, nf)
    assert np.max(np.abs(rec.left.samples - x.samples)) < 1e-9
    assert np.max(np.abs(rec.right.samples - x.samples)) < 1e-9

    omni = synth_vdp(0.0)
    ra = render(x, SceneGeometry(45.0, 30.0, 0.9, 0.18), hl, hr, omni, nf)
    rb = render(x, SceneGeometry(-45.0, -30.0, 0.9, 0.18), hl, hr, omni, nf)
    assert np.array_equal(ra.left.samples, rb.right.samples)
    assert np.array_equal(ra.right.samples, rb.left.samples)

    geom = SceneGeometry(-70.0, 120.0, 0.6, 0.18)
    r1 = render(x, geom, hl, hr, vdp, nf)
    r2 = render(x.scaled(2.0), geom, hl, hr, vdp, nf)
    assert np.max(np.abs(r2.left.samples - 2.0 * r1.left.samples)) < 1e-9

    from binorient.dsp import next_pow2
    worst = 0.0
    for _ in range(100):
        geom = SceneGeometry(rng.uniform(-180, 180), rng.uniform(-180, 180),
                             rng.uniform(0.5, 1.5), 0.18)
        rec = render(x, geom, hl, hr, vdp, nf)
        v_l, v_r = parallax_adjust(geom)
        n_fft = next_pow2(len(x) + 2 * (hl.n_bins - 1))
        spec = np.fft.rfft(x.samples, n_fft)
        freqs = np.arange(n_fft // 2 + 1) * x.sample_rate / n_fft
        for table, kind, v_ang, got in ((hl, KIND_HRTF_LEFT, v_l, rec.left),
                                        (hr, KIND_HRTF_RIGHT, v_r, rec.right)):
            h = lookup(table, geom.theta_dir_deg) * dvf_for_kind(
                table.frequencies(), geom.theta_dir_deg, kind, nf, geom.r_m,
                table.reference_distance_m)
            v = lookup(vdp, v_ang)

            def regrid(resp, fr):
                mag = np.interp(freqs, fr, np.abs(resp))
                ph = np.interp(freqs, fr, np.unwrap(np.angle(resp)))
                return mag * np.exp(1j * ph)

            oracle = np.fft.irfft(spec * regrid(h, table.frequencies())
                                  * regrid(v, vdp.frequencies()), n_fft)[:len(x)]
            err = np.sqrt(np.mean((got.samples - oracle) ** 2))
            worst = max(worst, err / np.sqrt(np.mean(oracle ** 2)))
    assert worst < 1e-9
    _announce(3, f"identity passthrough, exact ear swap, linearity, and "
                 f"product-oracle agreement on 100 scenes (worst rel {worst:.1e})")


# ---------------------------------------------------------------------------
# 4. near-field model
# ---------------------------------------------------------------------------

def test_criterion_4_near_field_model():
    params = NearFieldParams(head_radius_m=0.09)
    table = DirectivityTable(np.array([-80.0, 0.0, 100.0]),
                             np.ones((3, 17), dtype=np.complex128),
                             bin_hz=250.0, kind=KIND_HRTF_RIGHT,
                             reference_distance_m=1.5)
    assert near_field_correct(table, params, 1.5) is table

    from tests.test_directivity import _oracle_dvf
    out = near_field_correct(table, params, 0.5)
    contra = np.abs(out.responses[0])  # azimuth -80: opposite the +100 ear
    assert contra[16] < contra[1]      # 4 kHz below 250 Hz
    assert abs(contra[1] - abs(_oracle_dvf(250.0, 180.0, 0.5, 1.5))) < 1e-9
    assert abs(contra[16] - abs(_oracle_dvf(4000.0, 180.0, 0.5, 1.5))) < 1e-9
    _announce(4, "distance factor is bit-exact identity at the reference and "
                 "matches the independent series oracle, contralateral "
                 "4 kHz gain below 250 Hz gain at 0.5 m")


# ---------------------------------------------------------------------------
# 5. features
# ---------------------------------------------------------------------------

def test_criterion_5_features():
    rng = np.random.default_rng(3)
    for _ in range(50):
        l = Spectrum(rng.standard_normal(65) + 1j * rng.standard_normal(65),
                     125.0, 128)
        r = Spectrum(rng.standard_normal(65) + 1j * rng.standard_normal(65),
                     125.0, 128)
        assert np.array_equal(ild(l, r), -ild(r, l))
        assert np.array_equal(itd(l, r), -itd(r, l))

    freqs = np.arange(1, 65) * 125.0
    for _ in range(10000 // 64 + 1):
        l = Spectrum(rng.standard_normal(65) + 1j * rng.standard_normal(65),
                     125.0, 128)
        r = Spectrum(rng.standard_normal(65) + 1j * rng.standard_normal(65),
                     125.0, 128)
        v = itd(l, r)[1:]
        assert np.all(np.abs(v) <= 1.0 / (2.0 * freqs))

    f = aliasing_frequency(0.18, 343.0)
    assert abs(f - 343.0 / 0.36) < 1e-9
    assert abs(f - 952.0) <= 1.0
    _announce(5, f"ILD/ITD swap antisymmetry exact, ITD bound holds on 10k "
                 f"random spectra, aliasing frequency {f:.2f} Hz within 1 Hz "
                 f"of the quoted 952 Hz")


# ---------------------------------------------------------------------------
# 6. estimator
# ---------------------------------------------------------------------------

def test_criterion_6_estimator(tmp_path):
    specs = [est.ConvSpec(5, 6, 5, 2), est.ConvSpec(6, 4, 5, 1)]
    model = est.init_model(3, input_len=32, dropout=0.0, dtype=np.float64,
                           conv_specs=specs, fc_sizes=(16, 4))
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 5, 32))
    targets = est.encode_angles(rng.uniform(-180, 180, 3),
                                rng.uniform(-180, 180, 3))
    _, grads = est.backward_batch(model, x, targets)
    blocks = model.params()
    checked, worst = 0, 0.0
    rng2 = np.random.default_rng(5)
    while checked < 200:
        bi = int(rng2.integers(len(blocks)))
        fi = int(rng2.integers(blocks[bi].size))
        p = blocks[bi]
        orig = p.flat[fi]
        p.flat[fi] = orig + 1e-5
        up = est.loss_value(est.forward_batch(model, x), targets)
        p.flat[fi] = orig - 1e-5
        dn = est.loss_value(est.forward_batch(model, x), targets)
        p.flat[fi] = orig
        fd = (up - dn) / 2e-5
        an = grads[bi].flat[fi]
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-7)
        worst = max(worst, rel)
        assert rel < 1e-4
        checked += 1

    data = rng.standard_normal((200, 5, 64)).astype(np.float32)
    labels = np.stack([rng.uniform(-180, 180, 200),
                       rng.uniform(-180, 180, 200)], 1)
    batch = FeatureBatch(data, labels)
    cfg = est.TrainConfig(batch_size=50, epochs=2, seed=11)
    m1, _ = est.train(batch, cfg)
    m2, _ = est.train(batch, cfg)
    p1, p2 = tmp_path / "a.bocn", tmp_path / "b.bocn"
    est.save_model(p1, m1)
    est.save_model(p2, m2)
    assert p1.read_bytes() == p2.read_bytes()

    const = FeatureBatch(data, np.tile([[30.0, -60.0]], (200, 1)))
    toy = est.init_model(5, 64, dropout=0.0,
                         conv_specs=[est.ConvSpec(5, 6, 5, 2),
                                     est.ConvSpec(6, 4, 5, 1)],
                         fc_sizes=(16, 4))
    est.fit_normalization(toy, data)
    _, hist = est.train(const, est.TrainConfig(batch_size=50, epochs=60,
                                               learning_rate=3e-3, seed=7,
                                               dropout=0.0), model=toy)
    assert hist[-1] < 1e-3
    _announce(6, f"analytic gradients match finite differences on {checked} "
                 f"parameters (worst rel {worst:.1e}); seeded training "
                 f"bit-identical; constant-target loss {hist[-1]:.1e} < 1e-3")


# ---------------------------------------------------------------------------
# 7. template-matching oracle
# ---------------------------------------------------------------------------

TEMPLATE_SPEC = None  # filled by the fixture below


def test_criterion_7_template_oracle():
    start = time.time()
    spec = DatasetSpec(count=1, seed=123)
    bank = build_template_bank(spec, grid_step_deg=10.0, r_m=0.9,
                               hrtf_idx=0, vdp_idx=0)
    assert len(bank) == 1296
    pools = ScenePools(spec)
    from binorient.dataset import render_grid_scene
    queries, labels = [], []
    for t_dir, t_ori in bank.angles:
        t = render_grid_scene(pools, spec, float(t_dir), float(t_ori), 0.9, 0, 0)
        queries.append(t.channels)
        labels.append((t_dir, t_ori))
    pred = est.template_predict_angles(np.stack(queries), bank)
    labels = np.asarray(labels)
    rep = evaluate(pred, labels)
    assert np.max(rep.errors_dir) == 0.0
    assert np.max(rep.errors_ori) == 0.0
    elapsed = time.time() - start
    assert elapsed < 120.0
    # facing classification from the oracle on grid data is perfect too
    conf = facing_classify(pred[:, 0], pred[:, 1], labels[:, 0], labels[:, 1])
    acc = per_class_accuracy(conf)
    assert np.all(acc[~np.isnan(acc)] == 1.0)
    globals()["_TEMPLATE_FACING_OK"] = True
    _announce(7, f"template matching recovers all 1296 grid scenes exactly "
                 f"({elapsed:.0f}s < 120s)")


# ---------------------------------------------------------------------------
# 8 & 9. desk-scale end to end
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_run():
    cfg = ExperimentConfig(seed=0, n_jobs=max(1, min(2, os.cpu_count() or 1)))
    timings = {}

    def gen(near):
        tr_spec = _subset_spec(cfg.base, cfg.train_count, cfg.seed,
                               cfg.train_subjects, cfg.train_speakers, near)
        te_spec = _subset_spec(cfg.base, cfg.test_count, cfg.seed + 1,
                               cfg.test_subjects, cfg.test_speakers, near)
        return (generate_dataset(tr_spec, cfg.n_jobs),
                generate_dataset(te_spec, cfg.n_jobs))

    t0 = time.time()
    tr_near, te_near = gen(True)
    timings["gen_near"] = time.time() - t0

    t0 = time.time()
    tc = replace(cfg.train_cfg, epochs=cfg.epochs, seed=cfg.seed)
    model_near, hist_near = est.train(tr_near, tc)
    timings["train_near"] = time.time() - t0
    rep_near = evaluate(est.predict_angles(model_near, te_near.data),
                        te_near.labels)

    t0 = time.time()
    tr_far, te_far = gen(False)
    model_far, _ = est.train(tr_far, tc)
    timings["far_total"] = time.time() - t0
    rep_far = evaluate(est.predict_angles(model_far, te_far.data),
                       te_far.labels)

    # known vs unknown listener: evaluate on one held-out subject, then
    # fine-tune on that subject and re-evaluate
    held = cfg.test_subjects[0]
    test_spec = _subset_spec(cfg.base, cfg.test_count, cfg.seed + 2, (held,),
                             cfg.test_speakers, True)
    te_held = generate_dataset(test_spec, cfg.n_jobs)
    rep_unknown = evaluate(est.predict_angles(model_near, te_held.data),
                           te_held.labels)
    ft_spec = _subset_spec(cfg.base, cfg.fine_tune_count, cfg.seed + 3, (held,),
                           cfg.train_speakers, True)
    ft_batch = generate_dataset(ft_spec, cfg.n_jobs)
    ft_cfg = replace(cfg.train_cfg, epochs=cfg.fine_tune_epochs, seed=cfg.seed)
    model_ft, _ = est.train(ft_batch, ft_cfg, model=model_near)
    rep_known = evaluate(est.predict_angles(model_ft, te_held.data),
                         te_held.labels)

    return dict(cfg=cfg, timings=timings, rep_near=rep_near, rep_far=rep_far,
                rep_unknown=rep_unknown, rep_known=rep_known,
                hist_near=hist_near)


def test_criterion_8_desk_scale_end_to_end(desk_run):
    t_train = desk_run["timings"]["train_near"]
    assert t_train < 1800.0, f"training took {t_train:.0f}s"
    rep_near = desk_run["rep_near"]
    rep_far = desk_run["rep_far"]
    d90 = rep_near.percentiles_dir[90]
    o90 = rep_near.percentiles_ori[90]
    assert d90 <= 15.0, f"dir 90th percentile {d90:.1f} > 15"
    assert o90 <= 40.0, f"ori 90th percentile {o90:.1f} > 40"
    assert rep_near.percentiles_dir[80] <= rep_far.percentiles_dir[80], \
        (rep_near.percentiles_dir[80], rep_far.percentiles_dir[80])
    assert rep_near.percentiles_ori[80] <= rep_far.percentiles_ori[80], \
        (rep_near.percentiles_ori[80], rep_far.percentiles_ori[80])
    rep_u, rep_k = desk_run["rep_unknown"], desk_run["rep_known"]
    assert rep_k.percentiles_dir[80] <= rep_u.percentiles_dir[80], \
        (rep_k.percentiles_dir[80], rep_u.percentiles_dir[80])
    assert rep_k.percentiles_ori[80] <= rep_u.percentiles_ori[80], \
        (rep_k.percentiles_ori[80], rep_u.percentiles_ori[80])
    _announce(8, f"20k/30-epoch training in {t_train / 60:.1f} min; held-out "
                 f"90th percentiles dir {d90:.1f} deg (<=15) / ori {o90:.1f} deg "
                 f"(<=40); near-field beats far-field at the 80th percentile "
                 f"(dir {rep_near.percentiles_dir[80]:.1f} vs "
                 f"{rep_far.percentiles_dir[80]:.1f}, ori "
                 f"{rep_near.percentiles_ori[80]:.1f} vs "
                 f"{rep_far.percentiles_ori[80]:.1f}); known listener beats "
                 f"unknown (dir {rep_k.percentiles_dir[80]:.1f} vs "
                 f"{rep_u.percentiles_dir[80]:.1f}, ori "
                 f"{rep_k.percentiles_ori[80]:.1f} vs "
                 f"{rep_u.percentiles_ori[80]:.1f})")


def test_criterion_9_facing_classification(desk_run):
    rep = desk_run["rep_near"]
    acc = rep.facing_accuracy
    valid = ~np.isnan(acc)
    assert np.all(acc[valid] >= 0.75), acc
    assert globals().get("_TEMPLATE_FACING_OK", False), \
        "template-oracle facing check did not run"
    _announce(9, f"facing-configuration accuracy per class "
                 f"{np.round(acc, 3)} (all >= 0.75); template oracle 100%")


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    spec = DatasetSpec(count=24, seed=77)
    paths = []
    for tag, jobs in (("serial", 1), ("parallel", 2), ("again", 2)):
        batch = generate_dataset(spec, n_jobs=jobs)
        p = tmp_path / f"{tag}.feat"
        save_batch(p, batch)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]

    rng = np.random.default_rng(8)
    data = rng.standard_normal((120, 5, 64)).astype(np.float32)
    labels = np.stack([rng.uniform(-180, 180, 120), rng.uniform(-180, 180, 120)], 1)
    batch = FeatureBatch(data, labels)
    cfg = est.TrainConfig(batch_size=40, epochs=2, seed=5)
    ckpts = []
    for tag in ("a", "b"):
        model, _ = est.train(batch, cfg)
        p = tmp_path / f"{tag}.bocn"
        est.save_model(p, model)
        ckpts.append(p.read_bytes())
    assert ckpts[0] == ckpts[1]

    from binorient.experiments import emit_report
    model, _ = est.train(batch, cfg)
    pred = est.predict_angles(model, data)
    reports = []
    for tag in ("r1", "r2"):
        out = tmp_path / tag
        out.mkdir()
        emit_report(out, "eval", evaluate(pred, labels))
        blob = b"".join(sorted(p.read_bytes() for p in out.glob("*.csv"))
                        ) + (out / "report_eval.json").read_bytes()
        reports.append(blob)
    assert reports[0] == reports[1]
    _announce(10, "gen (serial==parallel), train, and eval outputs are "
                  "byte-identical across repeated seeded runs")
