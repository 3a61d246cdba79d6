"""End-to-end study pipeline: phantoms, measurements, training, reconstruction, assessment.

Every random draw is derived from the study seed, so re-running a config
reproduces the metric CSVs bit for bit.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .acquisition import add_noise, simulate_all
from .assessment import (mean_ci, observer_probabilities, paired_significance, roc_and_auc, rrmse, ssim,
                         train_observer)
from .born import BornOperator
from .config import StudyConfig
from .correction import (DataCorrection, TrainedNet, apply_image_net, reconstruct_variant, train_artifact_correction,
                         train_data_correction, train_direct_inverter)
from .grid import embed_in_full_grid
from .nn import Network, layer_from_dict, layer_to_dict
from .phantom import PhantomExample, build_split
from .tensorfile import read_tensor_with_metadata, write_tensor

log = logging.getLogger(__name__)

DISPLAY_RANGE = (1.3, 1.7)


class StudyError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("WAVETOMO_WORKERS")
    if raw is None:
        return default
    try:
        return max(int(raw), 1)
    except ValueError:
        raise ValueError(f"WAVETOMO_WORKERS must be an integer, got {raw!r}") from None


def parallel_map(fn, items, workers: int | None = None) -> list:
    """Ordered map, in worker processes when more than one worker is configured."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def noise_seed(study_seed: int, phantom_seed: int, snr_db: float) -> int:
    ss = np.random.SeedSequence([study_seed, phantom_seed, int(round(snr_db * 100)) + 10_000])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _snr_tag(snr: float) -> str:
    return f"{snr:g}dB"


@dataclass
class Context:
    """Shared, read-only state of one study run (picklable for worker processes)."""

    config: StudyConfig
    system: object
    operator: BornOperator

    @classmethod
    def build(cls, config: StudyConfig) -> "Context":
        system = config.build_system()
        return cls(config, system, BornOperator(system))


@dataclass
class Measurement:
    clean: np.ndarray
    born: np.ndarray | None = None


def simulate_measurement(args):
    ctx, sos, with_born = args
    s = ctx.system
    clean = simulate_all(embed_in_full_grid(sos, s.grid, s.c0), s)
    born = ctx.operator.predict(sos) if with_born else None
    return Measurement(clean, born)


def _noisy(ctx: Context, ex: PhantomExample, meas: Measurement, snr: float) -> np.ndarray:
    return add_noise(meas.clean, snr, noise_seed(ctx.config.study.seed, ex.seed, snr)).data


def _recon(args):
    ctx, variant, data, models, seed = args
    cfg = ctx.config
    return reconstruct_variant(variant, data, models, ctx.system, cfg.inversion_config("born", seed),
                               cfg.inversion_config("fwi", seed), ctx.operator)


@dataclass
class ModelSet:
    models: dict = field(default_factory=dict)
    observers: dict = field(default_factory=dict)
    train_recons: dict = field(default_factory=dict)


def needed_models(variants) -> set:
    need = set()
    for v in variants:
        need |= {"artifact": {"artifact"}, "data": {"data"}, "dual": {"data", "dual"},
                 "direct": {"direct"}}.get(v, set())
    return need


def train_models(ctx: Context, train: list[PhantomExample], meas: list[Measurement], snr: float,
                 variants, observer_variants, seed: int) -> ModelSet:
    """Train every model the requested variants need on noisy training data at ``snr``."""
    cfg = ctx.config
    t = cfg.train
    need = needed_models(variants)
    data = [_noisy(ctx, ex, m, snr) for ex, m in zip(train, meas)]
    truths = [ex.sos for ex in train]
    incident = ctx.operator.cache.traces
    out = ModelSet()
    if "data" in need:
        log.info("training data correction on %d phantoms", len(train))
        out.models["data"] = train_data_correction(data, [m.born for m in meas], incident,
                                                   cfg.train_config("data", seed), t.width, t.levels)
    if "artifact" in need or "uncorrected" in observer_variants:
        out.train_recons["uncorrected"] = parallel_map(
            _recon, [(ctx, "uncorrected", d, {}, seed + i) for i, d in enumerate(data)])
    if "artifact" in need:
        log.info("training artifact correction")
        out.models["artifact"] = train_artifact_correction(out.train_recons["uncorrected"], truths,
                                                           cfg.train_config("artifact", seed + 1), t.width, t.levels)
    if "dual" in need or "data" in observer_variants:
        out.train_recons["data"] = parallel_map(
            _recon, [(ctx, "data", d, out.models, seed + i) for i, d in enumerate(data)])
    if "dual" in need:
        log.info("training dual correction")
        out.models["dual"] = train_artifact_correction(out.train_recons["data"], truths,
                                                       cfg.train_config("dual", seed + 2), t.width, t.levels)
    if "direct" in need:
        log.info("training direct inverter")
        out.models["direct"] = train_direct_inverter(data, truths, incident, ctx.system,
                                                     cfg.train_config("direct", seed + 3), t.width)
    masks = [ex.tumor_mask for ex in train]
    if not any(m.any() for m in masks):
        return out
    for v in observer_variants:
        if v not in variants:
            continue
        if v not in out.train_recons:
            if v in ("artifact", "dual"):
                src = out.train_recons["uncorrected" if v == "artifact" else "data"]
                out.train_recons[v] = [apply_image_net(out.models[v], r) for r in src]
            else:
                out.train_recons[v] = parallel_map(
                    _recon, [(ctx, v, d, out.models, seed + i) for i, d in enumerate(data)])
        log.info("training observer for %s", v)
        out.observers[v] = train_observer(out.train_recons[v], masks, cfg.train_config("observer", seed + 4),
                                          t.width, t.levels)
    return out


@dataclass
class StudyResult:
    out_dir: Path
    metrics: list = field(default_factory=list)
    aucs: dict = field(default_factory=dict)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_model(path: Path, model: TrainedNet | DataCorrection) -> None:
    extra = {}
    if isinstance(model, DataCorrection):
        extra = {"scattered_scale": model.scattered_scale, "incident_scale": model.incident_scale}
        model = model.model
    meta = {**extra, "kind": model.kind, "layers": [layer_to_dict(l) for l in model.net.layers],
            "residual": model.net.residual, "in_offset": model.in_offset, "in_scale": model.in_scale,
            "out_offset": model.out_offset, "out_scale": model.out_scale, "dtype": model.dtype}
    write_tensor(path, np.asarray(model.params, dtype=np.float64), meta)
    if model.log is not None:
        _write_csv(path.with_suffix(".log.csv"), ["epoch", "train_loss", "val_loss"],
                   [(i, _fmt(a), _fmt(b)) for i, (a, b) in enumerate(zip(model.log.train_loss, model.log.val_loss))])


def _stage(name):
    def deco(fn):
        def wrapped(*a, **k):
            try:
                return fn(*a, **k)
            except StudyError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
                raise StudyError(name, f"{type(exc).__name__}: {exc}") from exc
        return wrapped
    return deco


def run_study(config: StudyConfig, out_dir) -> StudyResult:
    """Run one study and write its outputs to ``out_dir``.

    Outputs: ``config.cfg`` (resolved), ``metrics.csv`` (phantom_id, variant,
    rrmse, ssim), ``roc_<label>.csv``, ``summary.csv``, trained models and
    example reconstructions as tensor files.  Study 4 evaluates every
    (train SNR, test SNR) pair; its variant labels read ``<variant>|train=<dB>|test=<dB>``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfgmod.dumps(config), encoding="utf-8")
    s = config.study
    t_start = time.perf_counter()

    grid = config.build_grid()
    split = _stage("phantoms")(build_split)(s.study_id, s.scale, s.seed, grid,
                                            (s.tumor_radius_min, s.tumor_radius_max))
    log.info("study %d: %d train / %d test phantoms", s.study_id, len(split.train), len(split.test))
    ctx = _stage("system")(Context.build)(config)

    need_born = "data" in needed_models(s.variants)
    train_meas = _stage("acquire-train")(parallel_map)(simulate_measurement, [(ctx, ex.sos, need_born) for ex in split.train])
    test_meas = _stage("acquire-test")(parallel_map)(simulate_measurement, [(ctx, ex.sos, False) for ex in split.test])

    multi = len(s.train_snr) > 1 or len(s.test_snr) > 1
    result = StudyResult(out)
    recon_store: dict = {}
    for tr_snr in s.train_snr:
        models = _stage(f"train@{_snr_tag(tr_snr)}")(train_models)(
            ctx, split.train, train_meas, tr_snr, s.variants, s.observer_variants, s.seed * 1000 + 17)
        mdir = out / "models" / f"train_{_snr_tag(tr_snr)}"
        mdir.mkdir(parents=True, exist_ok=True)
        for name, m in models.models.items():
            save_model(mdir / f"{name}.usct", m)
        for name, m in models.observers.items():
            save_model(mdir / f"observer_{name}.usct", m)
        for te_snr in s.test_snr:
            data = [_noisy(ctx, ex, m, te_snr) for ex, m in zip(split.test, test_meas)]
            for v in s.variants:
                if v == "fwi" and tr_snr != s.train_snr[0]:
                    recons = recon_store[("fwi", te_snr)]
                else:
                    recons = _stage(f"reconstruct-{v}")(parallel_map)(
                        _recon, [(ctx, v, d, models.models, s.seed + 7919 + i) for i, d in enumerate(data)])
                recon_store[(v, te_snr)] = recons
                label = f"{v}|train={tr_snr:g}|test={te_snr:g}" if multi else v
                for ex, r in zip(split.test, recons):
                    result.metrics.append((ex.seed, label, rrmse(r, ex.sos, config.system.c0), ssim(r, ex.sos)))
                if v in models.observers:
                    probs = observer_probabilities(models.observers[v], np.stack(recons))
                    masks = [ex.tumor_mask for ex in split.test]
                    if any(m.any() for m in masks):
                        curve = roc_and_auc(list(probs), masks)
                        result.aucs[label] = curve.auc
                        safe = label.replace("|", "_").replace("=", "")
                        _write_csv(out / f"roc_{safe}.csv", ["threshold", "fpr", "tpr"],
                                   [(_fmt(a), _fmt(b), _fmt(c)) for a, b, c in zip(curve.thresholds, curve.fpr, curve.tpr)])
                img_dir = out / "images"
                img_dir.mkdir(exist_ok=True)
                for ex, r in list(zip(split.test, recons))[: s.n_image_dumps]:
                    safe = label.replace("|", "_").replace("=", "")
                    write_tensor(img_dir / f"{safe}_{ex.seed}.usct", r, {"variant": label, "phantom_id": ex.seed})

    for ex in split.test[: s.n_image_dumps]:
        write_tensor(out / "images" / f"truth_{ex.seed}.usct", ex.sos, {"variant": "truth", "phantom_id": ex.seed})
        write_tensor(out / "images" / f"mask_{ex.seed}.usct", ex.tumor_mask, {"phantom_id": ex.seed})

    _write_csv(out / "metrics.csv", ["phantom_id", "variant", "rrmse", "ssim"],
               [(pid, v, _fmt(a), _fmt(b)) for pid, v, a, b in result.metrics])
    write_summary(out / "summary.csv", result.metrics, result.aucs)
    (out / "timing.txt").write_text(f"wall_seconds = {time.perf_counter() - t_start:.1f}\n", encoding="utf-8")
    return result


def summarize(metrics, aucs: dict) -> list[dict]:
    """Per-variant means, 95% intervals, AUC and Wilcoxon p-values against FWI."""
    by = {}
    for pid, v, r, s_ in metrics:
        by.setdefault(v, {})[pid] = (r, s_)
    rows = []
    ref = next((v for v in by if v.split("|")[0] == "fwi"), None)
    for v, vals in by.items():
        pids = sorted(vals)
        r = np.array([vals[p][0] for p in pids])
        s_ = np.array([vals[p][1] for p in pids])
        row = {"variant": v}
        for name, arr in (("rrmse", r), ("ssim", s_)):
            m, lo, hi = mean_ci(arr)
            row.update({f"{name}_mean": m, f"{name}_ci_low": lo, f"{name}_ci_high": hi})
        row["auc"] = aucs.get(v, float("nan"))
        if ref is not None and v != ref and len(pids) >= 2:
            fr = np.array([by[ref][p][0] for p in pids])
            fs = np.array([by[ref][p][1] for p in pids])
            row["p_rrmse_vs_fwi"] = paired_significance(r, fr)
            row["p_ssim_vs_fwi"] = paired_significance(s_, fs)
        else:
            row["p_rrmse_vs_fwi"] = row["p_ssim_vs_fwi"] = float("nan")
        rows.append(row)
    return rows


SUMMARY_COLUMNS = ["variant", "rrmse_mean", "rrmse_ci_low", "rrmse_ci_high", "ssim_mean", "ssim_ci_low",
                   "ssim_ci_high", "auc", "p_rrmse_vs_fwi", "p_ssim_vs_fwi"]


def write_summary(path: Path, metrics, aucs: dict) -> list[dict]:
    rows = summarize(metrics, aucs)
    _write_csv(path, SUMMARY_COLUMNS,
               [[r["variant"]] + [_fmt(r[c]) for c in SUMMARY_COLUMNS[1:]] for r in rows])
    return rows


def read_metrics(path) -> list[tuple]:
    with open(path, encoding="utf-8") as fh:
        return [(int(r["phantom_id"]), r["variant"], float(r["rrmse"]), float(r["ssim"]))
                for r in csv.DictReader(fh)]


def read_summary(path) -> dict[str, dict]:
    with open(path, encoding="utf-8") as fh:
        return {r["variant"]: {k: float(v) for k, v in r.items() if k != "variant"} for r in csv.DictReader(fh)}


def mean_rrmse(metrics) -> dict[str, float]:
    by: dict = {}
    for _, v, r, _ in metrics:
        by.setdefault(v, []).append(r)
    return {v: float(np.mean(rs)) for v, rs in by.items()}


def to_pgm(image: np.ndarray, lo: float = DISPLAY_RANGE[0], hi: float = DISPLAY_RANGE[1]) -> bytes:
    """8-bit binary PGM with ``[lo, hi]`` mapped affinely onto ``[0, 255]``."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    scaled = np.clip(np.round((img - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + scaled.tobytes()



def load_model(path) -> TrainedNet | DataCorrection:
    """Inverse of the model files written by :func:`run_study`."""
    params, meta_text = read_tensor_with_metadata(path)
    meta = json.loads(meta_text)
    layers = [layer_from_dict(spec) for spec in meta["layers"]]
    residual = tuple(meta["residual"]) if meta["residual"] is not None else None
    model = TrainedNet(Network(layers, residual), params, meta["in_offset"], meta["in_scale"],
                       meta["out_offset"], meta["out_scale"], kind=meta["kind"], dtype=meta.get("dtype", "float32"))
    if "scattered_scale" in meta:
        return DataCorrection(model, meta["scattered_scale"], meta["incident_scale"])
    return model
