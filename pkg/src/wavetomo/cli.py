"""Command-line entry point: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .acquisition import acquire
from .assessment import rrmse, ssim
from .correction import reconstruct_variant
from .phantom import DENSITY_CLASSES, build_split, make_example, phantom_seed
from .study import (Context, needed_models, save_model, simulate_measurement, load_model, read_metrics, read_summary,
                    run_study, to_pgm, train_models, write_summary)
from .tensorfile import read_tensor, write_tensor

log = logging.getLogger("wavetomo")


class UsageError(Exception):
    pass


def _load_config(args) -> cfgmod.StudyConfig:
    base = cfgmod.compact_config() if getattr(args, "preset", "desk") == "compact" else cfgmod.StudyConfig()
    cfg = cfgmod.load(args.config, base) if args.config else base
    study = cfg.study
    if getattr(args, "scale", None) is not None:
        study = replace(study, scale=args.scale)
    if getattr(args, "seed", None) is not None:
        study = replace(study, seed=args.seed)
    if getattr(args, "study", None) is not None:
        study = replace(study, study_id=args.study)
    return replace(cfg, study=study)


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"missing input file: {p}")
    return p


def cmd_phantom_gen(args) -> int:
    cfg = _load_config(args)
    grid = cfg.build_grid()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    s = cfg.study
    classes = [args.density_class] if args.density_class else list(DENSITY_CLASSES)
    for c in classes:
        for i in range(args.count):
            seed = phantom_seed(s.seed, c, i)
            ex = make_example(seed, c, grid, cfg.system.c0, (s.tumor_radius_min, s.tumor_radius_max))
            meta = {"density_class": c, "seed": seed}
            write_tensor(out / f"phantom_{c}_{seed}.usct", ex.sos, meta)
            write_tensor(out / f"mask_{c}_{seed}.usct", ex.tumor_mask, meta)
    print(f"wrote {len(classes) * args.count} phantoms to {out}")
    return 0


def cmd_acquire(args) -> int:
    cfg = _load_config(args)
    sos = read_tensor(_require(args.phantom))
    system = cfg.build_system()
    meas = acquire(sos, system, args.snr, args.seed if args.seed is not None else 0)
    write_tensor(args.out, meas.data, {"snr_db": args.snr, "noise_std": meas.noise_std, "seed": meas.seed,
                                       "phantom": str(args.phantom)})
    print(f"wrote {meas.data.shape} traces to {args.out} (noise std {meas.noise_std:.3e})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    s = cfg.study
    split = build_split(s.study_id, s.scale, s.seed, cfg.build_grid(), (s.tumor_radius_min, s.tumor_radius_max))
    ctx = Context.build(cfg)
    need_born = "data" in needed_models(s.variants)
    meas = [simulate_measurement((ctx, ex.sos, need_born)) for ex in split.train]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = train_models(ctx, split.train, meas, s.train_snr[0], s.variants, s.observer_variants,
                          s.seed * 1000 + 17)
    for name, m in models.models.items():
        save_model(out / f"{name}.usct", m)
    for name, m in models.observers.items():
        save_model(out / f"observer_{name}.usct", m)
    (out / "config.cfg").write_text(cfgmod.dumps(cfg), encoding="utf-8")
    print(f"trained {sorted(models.models)} and observers {sorted(models.observers)} into {out}")
    return 0


def cmd_reconstruct(args) -> int:
    if not args.measurements:
        raise UsageError("missing input file: no measurements given (--measurements)")
    data = read_tensor(_require(args.measurements))
    cfg = _load_config(args)
    system = cfg.build_system()
    models = {}
    if args.models:
        mdir = Path(args.models)
        for name in ("data", "artifact", "dual", "direct"):
            if (mdir / f"{name}.usct").exists():
                models[name] = load_model(mdir / f"{name}.usct")
    seed = args.seed or 0
    sos = reconstruct_variant(args.variant, data, models, system, cfg.inversion_config("born", seed),
                              cfg.inversion_config("fwi", seed))
    write_tensor(args.out, sos, {"variant": args.variant})
    print(f"wrote {args.variant} reconstruction to {args.out}")
    return 0


def cmd_assess(args) -> int:
    truth = read_tensor(_require(args.truth))
    est = read_tensor(_require(args.estimate))
    print(f"rrmse = {rrmse(est, truth, args.background):.6f}")
    print(f"ssim = {ssim(est, truth):.6f}")
    return 0


def cmd_study(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out) if args.out else Path(f"study{cfg.study.study_id}_out")
    run_study(cfg, out)
    print(f"study {cfg.study.study_id} outputs in {out}")
    return 0


def cmd_report(args) -> int:
    d = _require(args.dir)
    metrics_path = _require(d / "metrics.csv")
    summary_path = d / "summary.csv"
    aucs = {}
    if summary_path.exists():
        aucs = {v: r["auc"] for v, r in read_summary(summary_path).items()}
    rows = write_summary(d / "report.csv", read_metrics(metrics_path), aucs)
    print(f"{'variant':<36} {'rrmse':>8} {'ssim':>8} {'auc':>8}")
    for r in rows:
        print(f"{r['variant']:<36} {r['rrmse_mean']:8.4f} {r['ssim_mean']:8.4f} {r['auc']:8.4f}")
    if args.pgm:
        img_dir = d / "images"
        pgm_dir = d / "pgm"
        pgm_dir.mkdir(exist_ok=True)
        count = 0
        for path in sorted(img_dir.glob("*.usct")) if img_dir.exists() else []:
            img = read_tensor(path)
            if path.name.startswith("mask_"):
                img = 1.3 + 0.4 * img.astype(float)
            (pgm_dir / (path.stem + ".pgm")).write_bytes(to_pgm(np.asarray(img, dtype=float)))
            count += 1
        print(f"wrote {count} PGM images to {pgm_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavetomo", description="Desk-scale ultrasound tomography studies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="config file (key = value lines in [sections])")
        sp.add_argument("--preset", choices=("desk", "compact"), default="desk",
                        help="defaults that the config file overrides")
        sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("phantom-gen", help="generate phantoms and tumour masks"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=1, help="phantoms per class")
    sp.add_argument("--class", dest="density_class", choices=DENSITY_CLASSES)
    sp.set_defaults(func=cmd_phantom_gen)

    sp = common(sub.add_parser("acquire", help="simulate noisy traces for one phantom"))
    sp.add_argument("--phantom", required=True)
    sp.add_argument("--snr", type=float, default=20.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_acquire)

    sp = common(sub.add_parser("train", help="train the models a study config needs"))
    sp.add_argument("--scale", type=float)
    sp.add_argument("--study", type=int, choices=(1, 2, 3, 4))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("reconstruct", help="reconstruct one measurement set"))
    sp.add_argument("--variant", required=True, choices=cfgmod.ALL_VARIANTS)
    sp.add_argument("--measurements")
    sp.add_argument("--models", help="directory of trained models")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("assess", help="RRMSE and SSIM of an estimate against the truth")
    sp.add_argument("--truth", required=True)
    sp.add_argument("--estimate", required=True)
    sp.add_argument("--background", type=float, default=1.5)
    sp.set_defaults(func=cmd_assess)

    sp = common(sub.add_parser("study", help="run a full study"))
    sp.add_argument("--scale", type=float)
    sp.add_argument("--study", type=int, choices=(1, 2, 3, 4))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("report", help="summarise a study directory")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--pgm", action="store_true", help="also dump example images as PGM")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"wavetomo: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
