"""Command line driver.

Subcommands cover the whole pipeline: ``phantom`` (synthetic cohorts),
``preprocess``, ``augment``, ``train`` (cross-validated model fitting),
``predict`` (one-step), ``forecast`` (recursive multi-year with leakage
audit), ``evaluate`` (metrics CSV), ``stats`` (hypothesis tests on a
metrics CSV), and ``report`` (SVG summary).

Every command records what it wrote in a run manifest (JSON with sha256
and byte size per artifact): commands with a directory output write
``run_manifest.json`` inside it, commands with a single file output write
``<name>.run.json`` next to it.

Exit codes:

* 0  success
* 2  command line usage error
* 3  file format problems (bad magic/header/payload) or missing files
* 4  cohort manifest violations
* 5  invalid parameters, shapes, or inputs
* 6  forecast plan or leakage audit failures
* 7  training divergence (non-finite loss)
* 8  degenerate data in a statistical test
* 1  any other package error

Worker threads for per-subject loops come from LONGIPET_THREADS
(default 1); results never depend on the thread count.
"""

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .augment import augment_cohort
from .errors import (
    DegenerateDataError,
    DivergenceError,
    FormatError,
    InputError,
    LongipetError,
    ManifestError,
    NormalizationError,
    ParameterError,
    PlanError,
    ShapeError,
    StateError,
)
from .forecast import (
    ForecastPlan,
    PlanEntry,
    forecast_cohort,
    plan_from_folds,
    save_plan,
)
from .metrics import load_roi
from .model import I2IModelConfig, forward, load_model
from .parallel import thread_count
from .phantom import PhantomConfig, generate_cohort, write_cohort
from .preprocess import preprocess_chain
from .report import (
    EvalRow,
    evaluate_forecasts,
    read_metrics_csv,
    write_metrics_csv,
    write_report_svg,
)
from .stats import (
    TestResult,
    bonferroni,
    chi_square_independence,
    mixed_anova,
    one_way_anova,
    paired_t,
    wilcoxon_signed_rank,
)
from .training import Hyper, cross_validate, load_folds
from .volume_io import (
    ManifestEntry,
    Volume3D,
    load_manifest,
    read_volume,
    write_manifest,
    write_volume,
)

_PREDICTION_NAME = re.compile(r"^(?P<sid>.+)__(?P<predictor>[A-Za-z0-9]+)__y(?P<year>\d+)\.vol$")


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _arg_dict(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key == "func":
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, (list, tuple)):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        out[key] = value
    return out


def _write_run_manifest(target: Path, command: str, args: argparse.Namespace,
                        artifacts: Sequence[Path]) -> Path:
    base = target.parent
    entries = []
    for p in sorted(set(Path(a) for a in artifacts)):
        try:
            rel = str(p.relative_to(base))
        except ValueError:
            rel = str(p)
        entries.append({"bytes": p.stat().st_size, "path": rel, "sha256": _sha256(p)})
    doc = {
        "arguments": _arg_dict(args),
        "artifacts": entries,
        "command": command,
        "version": __version__,
    }
    target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return target


def _dir_files(out_dir: Path, exclude: Path) -> List[Path]:
    return [p for p in out_dir.rglob("*") if p.is_file() and p != exclude]


def _vol_pair(path: Path) -> List[Path]:
    # raw volumes carry a JSON sidecar
    side = path.with_suffix(".json")
    return [path, side] if side.exists() else [path]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_phantom(args) -> int:
    config = PhantomConfig(
        dims=tuple(args.dims),
        margin=args.margin,
        n_stable=args.n_stable,
        n_converter=args.n_converter,
        n_decliner=args.n_decliner,
        years=tuple(args.years),
        noise_sigma=args.noise_sigma,
        decline_linear=args.decline_linear,
        decline_quadratic=args.decline_quadratic,
        n_blobs=args.n_blobs,
        blob_amplitude=args.blob_amplitude,
        seed=args.seed,
    )
    cohort = generate_cohort(config)
    manifest_path = write_cohort(cohort, args.out)
    out_dir = Path(args.out)
    run_path = out_dir / "run_manifest.json"
    _write_run_manifest(run_path, "phantom", args, _dir_files(out_dir, run_path))
    print(f"wrote {len(cohort.records)} subjects to {manifest_path}")
    return 0


def _cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    ref = read_volume(args.ref_mask) if args.ref_mask else None
    brain = read_volume(args.brain_mask) if args.brain_mask else None
    if args.steps is not None:
        order = tuple(s for s in args.steps.split(",") if s)
    else:
        order = tuple(
            step
            for step, present in (
                ("suvr", ref is not None),
                ("mask", brain is not None),
                ("smooth", args.fwhm is not None),
            )
            if present
        )
    if not order:
        raise ParameterError("no preprocessing steps selected")
    fwhm = args.fwhm if args.fwhm is not None else 4.0
    out_dir = Path(args.out)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest.entries:
        scan_paths = {}
        for year in entry.years:
            vol = read_volume(entry.scan_paths[year])
            vol = preprocess_chain(vol, reference_mask=ref, brain_mask=brain,
                                   fwhm=fwhm, order=order)
            p = out_dir / "volumes" / f"{entry.subject_id}_y{year}.vol"
            write_volume(vol, p)
            scan_paths[year] = p
        entries.append(ManifestEntry(entry.subject_id, entry.group, scan_paths))
    manifest_path = write_manifest(entries, out_dir / "manifest.json")
    run_path = out_dir / "run_manifest.json"
    _write_run_manifest(run_path, "preprocess", args, _dir_files(out_dir, run_path))
    print(f"applied {','.join(order)} to {len(entries)} subjects; wrote {manifest_path}")
    return 0


def _cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    records = manifest.load_records()
    augmented = augment_cohort(records, seed=args.seed, n_copies=args.copies)
    out_dir = Path(args.out)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    entries = []
    transforms = {}
    for rec in augmented:
        scan_paths = {}
        for year in sorted(rec.scans):
            p = out_dir / "volumes" / f"{rec.subject_id}_y{year}.vol"
            write_volume(rec.scans[year], p)
            scan_paths[year] = p
        entries.append(ManifestEntry(rec.subject_id, rec.group, scan_paths))
        if rec.transform is not None:
            transforms[rec.subject_id] = {
                "source_id": rec.source_id,
                "transform": rec.transform.to_dict(),
            }
    manifest_path = write_manifest(entries, out_dir / "manifest.json")
    (out_dir / "transforms.json").write_text(
        json.dumps(transforms, indent=2, sort_keys=True) + "\n"
    )
    run_path = out_dir / "run_manifest.json"
    _write_run_manifest(run_path, "augment", args, _dir_files(out_dir, run_path))
    print(f"wrote {len(entries)} records ({len(transforms)} augmented) to {manifest_path}")
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    first = manifest.entries[0]
    probe = read_volume(first.scan_paths[first.years[0]])
    config = I2IModelConfig(
        dims=probe.dims,
        lstm_filters=args.lstm_filters,
        decoder_filters=args.decoder_filters,
        kernel_size=args.kernel_size,
    )
    hyper = Hyper(
        batch_size=args.batch_size,
        epochs=args.epochs,
        n_copies=args.copies,
        lr=args.lr,
        n_folds=args.folds,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = cross_validate(manifest, config, hyper, seed=args.seed, out_dir=out_dir)
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for sid in sorted(result.predictions):
        write_volume(result.predictions[sid], pred_dir / f"{sid}__i2i__y2.vol")
    for rep in result.reports:
        print(
            f"round {rep.round_index}: best val MAE {rep.best_val_mae:.6f} "
            f"at epoch {rep.best_epoch}"
        )
    run_path = out_dir / "run_manifest.json"
    _write_run_manifest(run_path, "train", args, _dir_files(out_dir, run_path))
    print(f"wrote {len(result.model_paths)} models and "
          f"{len(result.predictions)} held-out predictions to {out_dir}")
    return 0


def _cmd_predict(args) -> int:
    params, config = load_model(args.model)
    baseline = read_volume(args.baseline)
    followup = read_volume(args.followup)
    pred = forward(params, baseline, followup, config, mode="infer")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_volume(pred, out)
    run_path = out.parent / f"{out.name}.run.json"
    _write_run_manifest(run_path, "predict", args, _vol_pair(out))
    print(f"wrote {out}")
    return 0


def _cmd_forecast(args) -> int:
    manifest = load_manifest(args.manifest)
    records = [
        manifest.load_record(sid)
        for sid in manifest.subject_ids
        if {0, 1} <= set(manifest.entry(sid).years)
    ]
    if not records:
        raise InputError("no subject has both year-0 and year-1 scans")
    predictors = ("i2i", "linear") if args.predictor == "both" else (args.predictor,)
    folds = load_folds(args.folds) if args.folds else None
    if "i2i" in predictors:
        if folds is None or args.models is None:
            raise PlanError("i2i forecasts need --folds and --models for the audit")
    out_dir = Path(args.out)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    workers = thread_count()
    written: List[Path] = []
    for predictor in predictors:
        if predictor == "i2i":
            plan = plan_from_folds(
                folds, args.models,
                subject_ids=[r.subject_id for r in records],
                to_year=args.to_year,
            )
        else:
            plan = ForecastPlan(
                {r.subject_id: PlanEntry(r.subject_id, "linear") for r in records},
                to_year=args.to_year,
            )
        results = forecast_cohort(
            records, plan, folds=folds,
            clamp_nonnegative=args.clamp, max_workers=workers,
        )
        save_plan(plan, out_dir / f"plan_{predictor}.json")
        for sid in sorted(results):
            for year in sorted(results[sid]):
                p = out_dir / "volumes" / f"{sid}__{predictor}__y{year}.vol"
                write_volume(results[sid][year], p)
                written.append(p)
    run_path = out_dir / "run_manifest.json"
    _write_run_manifest(run_path, "forecast", args, _dir_files(out_dir, run_path))
    print(
        f"forecast {len(records)} subjects x {len(predictors)} predictor(s) "
        f"to year {args.to_year}; wrote {len(written)} volumes to {out_dir}"
    )
    return 0


def _load_predictions(pred_dir: Path) -> Dict[str, Dict[str, Dict[int, Volume3D]]]:
    out: Dict[str, Dict[str, Dict[int, Volume3D]]] = {}
    candidates = sorted(pred_dir.rglob("*.vol"))
    for p in candidates:
        m = _PREDICTION_NAME.match(p.name)
        if not m:
            continue
        sid, predictor, year = m.group("sid"), m.group("predictor"), int(m.group("year"))
        out.setdefault(predictor, {}).setdefault(sid, {})[year] = read_volume(p)
    if not out:
        raise InputError(
            f"no prediction volumes matching <subject>__<predictor>__y<year>.vol "
            f"under {pred_dir}"
        )
    return out


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    records = manifest.load_records()
    forecasts = _load_predictions(Path(args.predictions))
    atlas = read_volume(args.atlas) if args.atlas else None
    roi = load_roi(args.roi) if args.roi else None
    if roi is not None and atlas is None:
        raise ParameterError("--roi requires --atlas")
    mask = read_volume(args.mask) if args.mask else None
    report = evaluate_forecasts(
        records, forecasts, atlas=atlas, roi=roi, mask=mask,
        max_workers=thread_count(),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report.rows, out)
    artifacts = [out]
    gaps_path = Path(args.gaps) if args.gaps else out.parent / (out.stem + ".gaps.txt")
    gaps_path.write_text("".join(line + "\n" for line in report.gaps))
    artifacts.append(gaps_path)
    run_path = out.parent / f"{out.name}.run.json"
    _write_run_manifest(run_path, "evaluate", args, artifacts)
    print(f"wrote {len(report.rows)} rows to {out} ({len(report.gaps)} gaps)")
    return 0


# ---------------------------------------------------------------------------
# stats command
# ---------------------------------------------------------------------------

STATS_COLUMNS = (
    "test", "scope", "statistic_name", "statistic", "p_value",
    "df1", "df2", "n", "m_comparisons", "alpha_adjusted", "significant", "status",
)


class _StatRow:
    def __init__(self, test: str, scope: str, result: Optional[TestResult],
                 detail: str = ""):
        self.test = test
        self.scope = scope
        self.result = result
        self.detail = detail  # reason when degenerate

    @property
    def ok(self) -> bool:
        return self.result is not None


def _suvr_pairs(rows: Sequence[EvalRow], year: int, predictor: str,
                group: Optional[str] = None) -> Tuple[List[float], List[float]]:
    pred_vals, true_vals = [], []
    for r in sorted(rows, key=lambda r: r.subject_id):
        if r.year != year or r.predictor != predictor:
            continue
        if group is not None and r.group != group:
            continue
        if r.meta_roi_suvr_pred is None or r.meta_roi_suvr_true is None:
            continue
        pred_vals.append(r.meta_roi_suvr_pred)
        true_vals.append(r.meta_roi_suvr_true)
    return pred_vals, true_vals


def _stats_wilcoxon(rows, method) -> List[_StatRow]:
    out = []
    years = sorted({r.year for r in rows})
    for year in years:
        by_pred: Dict[str, Dict[str, EvalRow]] = {}
        for r in rows:
            if r.year == year:
                by_pred.setdefault(r.predictor, {})[r.subject_id] = r
        if "i2i" not in by_pred or "linear" not in by_pred:
            continue
        shared = sorted(set(by_pred["i2i"]) & set(by_pred["linear"]))
        if not shared:
            continue
        for metric in ("mae", "ssim"):
            a = [getattr(by_pred["i2i"][sid], metric) for sid in shared]
            b = [getattr(by_pred["linear"][sid], metric) for sid in shared]
            scope = f"year={year},metric={metric},i2i-vs-linear"
            try:
                res = wilcoxon_signed_rank(a, b, method=method)
                out.append(_StatRow("wilcoxon", scope, res))
            except DegenerateDataError as exc:
                out.append(_StatRow("wilcoxon", scope, None, str(exc)))
    return out


def _stats_ttest(rows) -> List[_StatRow]:
    out = []
    for year in sorted({r.year for r in rows}):
        groups = sorted({r.group for r in rows if r.year == year})
        predictors = sorted({r.predictor for r in rows if r.year == year})
        for group in groups:
            for predictor in predictors:
                pred_vals, true_vals = _suvr_pairs(rows, year, predictor, group)
                if len(pred_vals) < 2:
                    continue
                scope = f"year={year},group={group},predictor={predictor},suvr-pred-vs-true"
                try:
                    res = paired_t(pred_vals, true_vals)
                    out.append(_StatRow("ttest", scope, res))
                except DegenerateDataError as exc:
                    out.append(_StatRow("ttest", scope, None, str(exc)))
    return out


def _stats_anova(rows) -> List[_StatRow]:
    out = []
    for year in sorted({r.year for r in rows}):
        for predictor in sorted({r.predictor for r in rows if r.year == year}):
            sel = [r for r in rows if r.year == year and r.predictor == predictor]
            groups = sorted({r.group for r in sel})
            if len(groups) < 2:
                continue
            for metric in ("mae", "ssim"):
                samples = [
                    [getattr(r, metric) for r in sel if r.group == g] for g in groups
                ]
                scope = f"year={year},predictor={predictor},metric={metric},across-groups"
                try:
                    res = one_way_anova(samples)
                    out.append(_StatRow("anova", scope, res))
                except DegenerateDataError as exc:
                    out.append(_StatRow("anova", scope, None, str(exc)))
    return out


def _stats_chi2(rows) -> List[_StatRow]:
    groups = sorted({r.group for r in rows})
    years = sorted({r.year for r in rows})
    if len(groups) < 2 or len(years) < 2:
        raise InputError(
            f"chi-square needs at least 2 groups and 2 years with scored rows, "
            f"got {len(groups)} group(s) and {len(years)} year(s)"
        )
    table = np.zeros((len(groups), len(years)))
    for gi, g in enumerate(groups):
        for yi, y in enumerate(years):
            table[gi, yi] = len({r.subject_id for r in rows if r.group == g and r.year == y})
    scope = f"groups={'|'.join(groups)},years={'|'.join(str(y) for y in years)}"
    try:
        res = chi_square_independence(table)
        return [_StatRow("chi2", scope, res)]
    except DegenerateDataError as exc:
        return [_StatRow("chi2", scope, None, str(exc))]


def _stats_mixed(rows) -> List[_StatRow]:
    out = []
    for year in sorted({r.year for r in rows}):
        by_pred: Dict[str, Dict[str, EvalRow]] = {}
        for r in rows:
            if r.year == year and r.meta_roi_suvr_pred is not None:
                by_pred.setdefault(r.predictor, {})[r.subject_id] = r
        if "i2i" not in by_pred or "linear" not in by_pred:
            continue
        shared = sorted(set(by_pred["i2i"]) & set(by_pred["linear"]))
        shared = [
            sid for sid in shared
            if by_pred["i2i"][sid].meta_roi_suvr_true is not None
        ]
        if len(shared) < 3:
            continue
        values = np.array(
            [
                [
                    by_pred["i2i"][sid].meta_roi_suvr_true,
                    by_pred["i2i"][sid].meta_roi_suvr_pred,
                    by_pred["linear"][sid].meta_roi_suvr_pred,
                ]
                for sid in shared
            ]
        )
        labels = [by_pred["i2i"][sid].group for sid in shared]
        if len(set(labels)) < 2:
            continue
        scope_base = f"year={year},levels=gt|i2i|linear"
        try:
            res = mixed_anova(values, labels)
            out.append(_StatRow("mixed", scope_base + ",effect=group", res.between))
            out.append(_StatRow("mixed", scope_base + ",effect=level", res.within))
            out.append(_StatRow("mixed", scope_base + ",effect=interaction", res.interaction))
        except DegenerateDataError as exc:
            out.append(_StatRow("mixed", scope_base, None, str(exc)))
    return out


def _write_stats_csv(stat_rows: List[_StatRow], alpha: float, path: Path) -> int:
    import csv as _csv

    m = sum(1 for s in stat_rows if s.ok)
    alpha_adj = bonferroni(alpha, m) if m > 0 else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for s in stat_rows:
            if s.ok:
                res = s.result
                df1 = repr(float(res.df[0])) if res.df and len(res.df) > 0 else ""
                df2 = repr(float(res.df[1])) if res.df and len(res.df) > 1 else ""
                writer.writerow([
                    s.test, s.scope, res.name, repr(float(res.statistic)),
                    repr(float(res.p_value)), df1, df2, str(res.n),
                    str(m), repr(float(alpha_adj)),
                    "true" if res.p_value < alpha_adj else "false", "ok",
                ])
            else:
                writer.writerow([
                    s.test, s.scope, "", "", "", "", "", "", str(m),
                    repr(float(alpha_adj)) if alpha_adj is not None else "",
                    "", f"degenerate: {s.detail}",
                ])
    return m


def _cmd_stats(args) -> int:
    rows = read_metrics_csv(args.metrics)
    if not rows:
        raise InputError(f"{args.metrics} has no evaluation rows")
    if args.test == "wilcoxon":
        stat_rows = _stats_wilcoxon(rows, args.method)
    elif args.test == "ttest":
        stat_rows = _stats_ttest(rows)
    elif args.test == "anova":
        stat_rows = _stats_anova(rows)
    elif args.test == "chi2":
        stat_rows = _stats_chi2(rows)
    else:
        stat_rows = _stats_mixed(rows)
    if not stat_rows:
        raise InputError(
            f"metrics in {args.metrics} support no {args.test} comparison "
            "(missing predictors, groups, or ROI columns)"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    m = _write_stats_csv(stat_rows, args.alpha, out)
    run_path = out.parent / f"{out.name}.run.json"
    _write_run_manifest(run_path, "stats", args, [out])
    print(f"wrote {len(stat_rows)} rows ({m} tests, alpha {args.alpha} "
          f"Bonferroni-adjusted over {m}) to {out}")
    return 0


def _cmd_report(args) -> int:
    rows = read_metrics_csv(args.metrics)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_svg(rows, out, title=args.title)
    run_path = out.parent / f"{out.name}.run.json"
    _write_run_manifest(run_path, "report", args, [out])
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longipet",
        description="Longitudinal 3D PET volume forecasting pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"longipet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs=3, default=[16, 16, 16])
    p.add_argument("--margin", type=int, default=2)
    p.add_argument("--n-stable", type=int, default=8)
    p.add_argument("--n-converter", type=int, default=12)
    p.add_argument("--n-decliner", type=int, default=4)
    p.add_argument("--years", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--decline-linear", type=float, default=0.03)
    p.add_argument("--decline-quadratic", type=float, default=0.05)
    p.add_argument("--n-blobs", type=int, default=3)
    p.add_argument("--blob-amplitude", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("preprocess", help="normalize, mask, and smooth a cohort")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ref-mask", help="reference-region mask volume for SUVR")
    p.add_argument("--brain-mask", help="brain mask volume")
    p.add_argument("--fwhm", type=float, help="Gaussian smoothing FWHM in voxels")
    p.add_argument("--steps", help="comma list from suvr,mask,smooth (default: inferred)")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("augment", help="write affine-augmented copies of a cohort")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--copies", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="cross-validated model training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=70)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--copies", type=int, default=2, help="augmented copies per training subject")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--lstm-filters", type=int, default=16)
    p.add_argument("--decoder-filters", type=int, default=32)
    p.add_argument("--kernel-size", type=int, default=3)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="one-step prediction from two scans")
    p.add_argument("--model", required=True)
    p.add_argument("--baseline", required=True, help="earlier scan (year t-2)")
    p.add_argument("--followup", required=True, help="later scan (year t-1)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("forecast", help="recursive multi-year forecasts with leakage audit")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictor", choices=("i2i", "linear", "both"), default="both")
    p.add_argument("--folds", help="folds.json from training (required for i2i)")
    p.add_argument("--models", help="directory holding model_<k>.bin (required for i2i)")
    p.add_argument("--to-year", type=int, default=2)
    p.add_argument("--clamp", action="store_true",
                   help="clamp linear extrapolations at zero")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True,
                   help="directory of <subject>__<predictor>__y<year>.vol files")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--atlas", help="atlas label volume for regional columns")
    p.add_argument("--roi", help="ROI JSON (label union) for SUVR columns")
    p.add_argument("--mask", help="restrict MAE to this mask")
    p.add_argument("--gaps", help="gap report path (default: <out>.gaps.txt)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="hypothesis tests over a metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test", required=True,
                   choices=("wilcoxon", "ttest", "anova", "chi2", "mixed"))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--method", choices=("auto", "exact", "approx"), default="auto",
                   help="wilcoxon p-value method")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("report", help="render an SVG summary of a metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="Forecast evaluation")
    p.set_defaults(func=_cmd_report)

    return parser


_EXIT_CODES = (
    (ManifestError, 4),
    (PlanError, 6),
    (DivergenceError, 7),
    (DegenerateDataError, 8),
    (FormatError, 3),
    (FileNotFoundError, 3),
    ((ParameterError, InputError, ShapeError, StateError, NormalizationError), 5),
    (LongipetError, 1),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        for err_type, code in _EXIT_CODES:
            if isinstance(exc, err_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
