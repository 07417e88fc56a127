"""Command-line interface.

Subcommands: synth-tables, gen, train, eval, experiment, diag-corr.
Randomness everywhere is controlled by --seed; report paths write CSV tables
and PNG figures side by side.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import plots
from .dataset import DatasetSpec, generate_dataset
from .directivity import NearFieldParams, load_table, save_table, synth_hrtf, synth_vdp
from .estimator import TrainConfig, load_model, predict_angles, save_model, train
from .experiments import (ExperimentConfig, batch_to_bank, emit_report,
                          run_experiment)
from .features import load_batch, save_batch
from .metrics import correlation_diagnostic, evaluate


def _write_matrix_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(matrix):
            w.writerow([f"{v:.8f}" for v in row])


def cmd_synth_tables(args) -> int:
    params = NearFieldParams(head_radius_m=args.radius,
                             ear_azimuth_deg=args.ear_azimuth)
    left, right = synth_hrtf(params, args.grid_step, args.bins, args.bin_hz)
    vdp = synth_vdp(args.strength, args.bins, args.bin_hz, args.grid_step)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_table(out / "hrtf_left.dirt", left)
    save_table(out / "hrtf_right.dirt", right)
    save_table(out / "vdp.dirt", vdp)
    print(f"wrote hrtf_left.dirt, hrtf_right.dirt, vdp.dirt to {out}")
    return 0


def cmd_gen(args) -> int:
    from dataclasses import replace
    spec = DatasetSpec.from_json(Path(args.spec).read_text()) if args.spec \
        else DatasetSpec()
    if args.count is not None:
        spec = replace(spec, count=args.count)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    batch = generate_dataset(spec, n_jobs=args.n_jobs)
    save_batch(args.out, batch)
    print(f"wrote {len(batch)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace
    batch = load_batch(args.batch)
    cfg = TrainConfig(**json.loads(Path(args.config).read_text())) if args.config \
        else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    model, history = train(batch, cfg, log_every=args.log_every)
    save_model(args.out, model)
    print(f"final training loss {history[-1]:.6f}; checkpoint at {args.out}")
    return 0


def cmd_eval(args) -> int:
    batch = load_batch(args.batch)
    if args.model:
        model = load_model(args.model)
        pred = predict_angles(model, batch.data)
        tag = "eval"
    elif args.template:
        from .estimator import template_predict_angles
        bank = batch_to_bank(load_batch(args.template))
        pred = template_predict_angles(batch.data.astype(np.float64), bank)
        tag = "template"
    else:
        print("eval needs --model or --template", file=sys.stderr)
        return 2
    report = evaluate(pred, batch.labels,
                      facing_sector_deg=args.facing_sector,
                      facing_half_width=args.facing_half_width)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(out, tag, report)
    plots.save_cdf_figure(out / f"cdf_{tag}.png", {tag: report})
    print(report.to_json())
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(Path(args.config).read_text()) if args.config \
        else ExperimentConfig()
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    if args.n_jobs is not None:
        from dataclasses import replace
        cfg = replace(cfg, n_jobs=args.n_jobs)
    summary = run_experiment(args.name, cfg, args.out_dir)
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_diag_corr(args) -> int:
    if args.tables_dir:
        base = Path(args.tables_dir)
        left = load_table(base / "hrtf_left.dirt")
        right = load_table(base / "hrtf_right.dirt")
        vdp = load_table(base / "vdp.dirt")
    else:
        params = NearFieldParams()
        left, right = synth_hrtf(params)
        vdp = synth_vdp(args.strength)
    c_h, c_v, c_c = correlation_diagnostic(left, right, vdp, args.grid_step)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "corr_hrtf.csv", c_h)
    _write_matrix_csv(out / "corr_vdp.csv", c_v)
    _write_matrix_csv(out / "corr_combined.csv", c_c)
    plots.save_correlation_figure(out / "correlation.png", c_h, c_v, c_c)
    print(f"wrote correlation matrices and figure to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="binorient",
                                description="near-field binaural rendering and "
                                            "speaker direction/orientation estimation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-tables", help="emit synthetic HRTF/VDP tables")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--radius", type=float, default=0.09)
    s.add_argument("--ear-azimuth", type=float, default=100.0)
    s.add_argument("--strength", type=float, default=0.9)
    s.add_argument("--grid-step", type=float, default=5.0)
    s.add_argument("--bins", type=int, default=257)
    s.add_argument("--bin-hz", type=float, default=31.25)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth_tables)

    s = sub.add_parser("gen", help="generate a feature batch from a dataset spec")
    s.add_argument("--spec", help="DatasetSpec JSON file")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--n-jobs", type=int, default=1)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("train", help="train the regressor on a feature batch")
    s.add_argument("--batch", required=True)
    s.add_argument("--config", help="TrainConfig JSON file")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--log-every", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint or template bank")
    s.add_argument("--batch", required=True)
    s.add_argument("--model")
    s.add_argument("--template", help="template bank stored as a feature batch")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--facing-sector", type=float, default=25.0)
    s.add_argument("--facing-half-width", action="store_true")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="run a named protocol")
    s.add_argument("--name", required=True,
                   choices=("main", "near-vs-far", "known-vs-unknown-hrtf"))
    s.add_argument("--config", help="ExperimentConfig JSON file")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--n-jobs", type=int, default=None)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("diag-corr", help="angle-correlation diagnostic matrices")
    s.add_argument("--tables-dir", help="directory with hrtf_left/right and vdp .dirt")
    s.add_argument("--strength", type=float, default=0.9)
    s.add_argument("--grid-step", type=float, default=10.0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_diag_corr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
