"""Named end-to-end protocols: the main train/eval run, the near- vs
far-field comparison, and the known- vs unknown-listener comparison.
Each run writes report JSON, CSV tables, and rendered figures into a
directory; identical seeds give byte-identical JSON/CSV outputs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetSpec, ScenePools, generate_dataset, render_grid_scene
from .estimator import (TrainConfig, TemplateBank, predict_angles,
                        save_model, train)
from .exceptions import InvalidInputError
from .features import FeatureBatch
from .metrics import EvalReport, evaluate
from . import plots

EXPERIMENT_NAMES = ("main", "near-vs-far", "known-vs-unknown-hrtf")


def _experiment_dataset() -> DatasetSpec:
    """Experiment feature path: per-frame spectra (dense for harmonic
    sources), no spectral floor (the synthetic sources are noiseless), and
    the band-energy realization of the fifth channel.  See the feature
    module for the library defaults."""
    from .features import FeatureConfig
    return DatasetSpec(feature=FeatureConfig(mode="frames", floor_factor=None,
                                             ratio_mode="band-energy"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale protocol sizes; subject splits are index lists into the
    dataset pools so train/test listeners and speakers stay disjoint."""

    train_count: int = 20000
    test_count: int = 2000
    seed: int = 0
    epochs: int = 30
    n_jobs: int = 1
    train_subjects: tuple = (0, 1, 2, 3, 4, 5)
    test_subjects: tuple = (6, 7)
    train_speakers: tuple = (0, 1, 2)
    test_speakers: tuple = (3, 4)
    fine_tune_count: int = 1000
    fine_tune_epochs: int = 5
    base: DatasetSpec = field(default_factory=_experiment_dataset)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        d = json.loads(text)
        base = d.pop("base", None)
        tc = d.pop("train_cfg", None)
        for key in ("train_subjects", "test_subjects", "train_speakers",
                    "test_speakers"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = ExperimentConfig(**d)
        if base is not None:
            cfg = replace(cfg, base=DatasetSpec.from_json(json.dumps(base)))
        if tc is not None:
            cfg = replace(cfg, train_cfg=TrainConfig(**tc))
        return cfg


def _subset_spec(base: DatasetSpec, count: int, seed: int, subjects, speakers,
                 near_field: bool) -> DatasetSpec:
    radii = tuple(base.hrtf_radii[i] for i in subjects)
    ears = tuple(base.hrtf_ear_azimuths[i] for i in subjects)
    strengths = tuple(base.vdp_strengths[i] for i in speakers)
    return replace(base, count=count, seed=seed, near_field=near_field,
                   hrtf_radii=radii, hrtf_ear_azimuths=ears,
                   vdp_strengths=strengths)


def write_cdf_csv(path, errors: np.ndarray) -> None:
    from .metrics import error_cdf
    e, p = error_cdf(errors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["error_deg", "percentile"])
        for ei, pi in zip(e, p):
            w.writerow([f"{ei:.6f}", f"{pi:.6f}"])


def write_polar_csv(path, centers: np.ndarray, means: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sector_center_deg", "mean_error_deg"])
        for c, m in zip(centers, means):
            w.writerow([f"{c:.1f}", "nan" if np.isnan(m) else f"{m:.6f}"])


def write_facing_csv(path, confusion: np.ndarray) -> None:
    from .metrics import FACING_CLASSES
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(FACING_CLASSES))
        for name, row in zip(FACING_CLASSES, confusion):
            w.writerow([name] + [int(v) for v in row])


def emit_report(out_dir: Path, tag: str, report: EvalReport) -> None:
    (out_dir / f"report_{tag}.json").write_text(report.to_json())
    write_cdf_csv(out_dir / f"cdf_dir_{tag}.csv", report.errors_dir)
    write_cdf_csv(out_dir / f"cdf_ori_{tag}.csv", report.errors_ori)
    write_polar_csv(out_dir / f"polar_dir_{tag}.csv", report.sector_centers,
                    report.sector_mean_dir)
    write_polar_csv(out_dir / f"polar_ori_{tag}.csv", report.sector_centers,
                    report.sector_mean_ori)
    write_facing_csv(out_dir / f"facing_{tag}.csv", report.facing_confusion)
    plots.save_polar_figure(out_dir / f"polar_{tag}.png", report)


def _train_eval(cfg: ExperimentConfig, near_field: bool, tag: str,
                out_dir: Path, verbose: bool = True):
    t0 = time.time()
    train_spec = _subset_spec(cfg.base, cfg.train_count, cfg.seed,
                              cfg.train_subjects, cfg.train_speakers, near_field)
    test_spec = _subset_spec(cfg.base, cfg.test_count, cfg.seed + 1,
                             cfg.test_subjects, cfg.test_speakers, near_field)
    train_batch = generate_dataset(train_spec, cfg.n_jobs)
    test_batch = generate_dataset(test_spec, cfg.n_jobs)
    if verbose:
        print(f"[{tag}] generated {len(train_batch)}+{len(test_batch)} samples "
              f"in {time.time() - t0:.0f}s")
    t1 = time.time()
    tc = replace(cfg.train_cfg, epochs=cfg.epochs, seed=cfg.seed)
    model, history = train(train_batch, tc)
    if verbose:
        print(f"[{tag}] trained {cfg.epochs} epochs in {time.time() - t1:.0f}s "
              f"(loss {history[0]:.4f} -> {history[-1]:.4f})")
    pred = predict_angles(model, test_batch.data)
    report = evaluate(pred, test_batch.labels)
    emit_report(out_dir, tag, report)
    save_model(out_dir / f"model_{tag}.bocn", model)
    return model, history, report, test_batch


def run_experiment(name: str, cfg: ExperimentConfig, out_dir,
                   verbose: bool = True) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if name == "main":
        summary = _run_main(cfg, out_dir, verbose)
    elif name == "near-vs-far":
        summary = _run_near_vs_far(cfg, out_dir, verbose)
    elif name == "known-vs-unknown-hrtf":
        summary = _run_known_unknown(cfg, out_dir, verbose)
    else:
        raise InvalidInputError(
            f"unknown experiment {name!r}; choose from {EXPERIMENT_NAMES}")
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True,
                                                     indent=2))
    return summary


def _run_main(cfg: ExperimentConfig, out_dir: Path, verbose: bool) -> dict:
    model, history, report, _ = _train_eval(cfg, cfg.base.near_field, "main",
                                            out_dir, verbose)
    plots.save_cdf_figure(out_dir / "cdf_main.png", {"main": report})
    plots.save_loss_figure(out_dir / "loss_main.png", {"main": history})
    return {"experiment": "main", "report": report.summary(),
            "final_train_loss": history[-1]}


def _run_near_vs_far(cfg: ExperimentConfig, out_dir: Path, verbose: bool) -> dict:
    _, hist_n, rep_near, _ = _train_eval(cfg, True, "near", out_dir, verbose)
    _, hist_f, rep_far, _ = _train_eval(cfg, False, "far", out_dir, verbose)
    plots.save_cdf_figure(out_dir / "cdf_near_vs_far.png",
                          {"near-field": rep_near, "far-field": rep_far})
    plots.save_loss_figure(out_dir / "loss_near_vs_far.png",
                           {"near": hist_n, "far": hist_f})
    return {
        "experiment": "near-vs-far",
        "near": rep_near.summary(),
        "far": rep_far.summary(),
        "p80_dir_near": rep_near.percentiles_dir[80],
        "p80_dir_far": rep_far.percentiles_dir[80],
        "p80_ori_near": rep_near.percentiles_ori[80],
        "p80_ori_far": rep_far.percentiles_ori[80],
    }


def _run_known_unknown(cfg: ExperimentConfig, out_dir: Path, verbose: bool) -> dict:
    model, history, _, _ = _train_eval(cfg, cfg.base.near_field, "base",
                                       out_dir, verbose)
    held = cfg.test_subjects[0]
    test_spec = _subset_spec(cfg.base, cfg.test_count, cfg.seed + 2, (held,),
                             cfg.test_speakers, cfg.base.near_field)
    test_batch = generate_dataset(test_spec, cfg.n_jobs)
    pred_unknown = predict_angles(model, test_batch.data)
    rep_unknown = evaluate(pred_unknown, test_batch.labels)
    emit_report(out_dir, "unknown", rep_unknown)

    ft_spec = _subset_spec(cfg.base, cfg.fine_tune_count, cfg.seed + 3, (held,),
                           cfg.train_speakers, cfg.base.near_field)
    ft_batch = generate_dataset(ft_spec, cfg.n_jobs)
    ft_cfg = replace(cfg.train_cfg, epochs=cfg.fine_tune_epochs, seed=cfg.seed)
    model_ft, _ = train(ft_batch, ft_cfg, model=model)
    pred_known = predict_angles(model_ft, test_batch.data)
    rep_known = evaluate(pred_known, test_batch.labels)
    emit_report(out_dir, "known", rep_known)
    save_model(out_dir / "model_known.bocn", model_ft)
    plots.save_cdf_figure(out_dir / "cdf_known_vs_unknown.png",
                          {"known": rep_known, "unknown": rep_unknown})
    return {
        "experiment": "known-vs-unknown-hrtf",
        "held_out_subject": held,
        "unknown": rep_unknown.summary(),
        "known": rep_known.summary(),
        "p80_dir_unknown": rep_unknown.percentiles_dir[80],
        "p80_dir_known": rep_known.percentiles_dir[80],
        "p80_ori_unknown": rep_unknown.percentiles_ori[80],
        "p80_ori_known": rep_known.percentiles_ori[80],
    }


def build_template_bank(spec: DatasetSpec, grid_step_deg: float = 10.0,
                        r_m: float = 0.9, hrtf_idx: int = 0, vdp_idx: int = 0,
                        source=None) -> TemplateBank:
    """Noiseless feature grid over (theta_dir, theta_ori) at one distance."""
    pools = ScenePools(spec)
    angles = np.arange(-180.0, 180.0, grid_step_deg)
    feats, labels = [], []
    for t_dir in angles:
        for t_ori in angles:
            tensor = render_grid_scene(pools, spec, float(t_dir), float(t_ori),
                                       r_m, hrtf_idx, vdp_idx, source)
            feats.append(tensor.channels)
            labels.append((float(t_dir), float(t_ori)))
    return TemplateBank(np.stack(feats), np.asarray(labels))


def bank_to_batch(bank: TemplateBank) -> FeatureBatch:
    return FeatureBatch(bank.features.astype(np.float32), bank.angles)


def batch_to_bank(batch: FeatureBatch) -> TemplateBank:
    return TemplateBank(batch.data.astype(np.float64), batch.labels)
