"""Cross-validated training protocol for the image-to-image forecaster.

Subjects with a complete year-0/1/2 triplet are split into group-stratified
folds (per-group fold sizes differ by at most one).  Each round holds one
fold out for testing and splits the rest 80/20 into train and validation,
again stratified by group.  Training minimizes mean absolute error with
Adam; the checkpoint with the best validation MAE is kept.  Augmented copies
are created only for the training subjects, never for validation or test.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .augment import augment_cohort
from .errors import DivergenceError, FormatError, InputError, ShapeError
from .model import I2IModelConfig, forward_batch, init_model, load_model, save_model
from .volume_io import GROUPS, CohortManifest, SubjectRecord, Volume3D


@dataclass(frozen=True)
class Hyper:
    batch_size: int = 8
    epochs: int = 70
    n_copies: int = 2
    lr: float = 1e-3
    n_folds: int = 5


@dataclass
class FoldRound:
    index: int
    test: List[str]
    val: List[str]
    train: List[str]


@dataclass
class FoldAssignment:
    seed: int
    n_folds: int
    fold_of: Dict[str, int]
    rounds: List[FoldRound]

    def round_of(self, subject_id: str) -> int:
        return self.fold_of[subject_id]


@dataclass
class TrainReport:
    round_index: int
    seed: int
    train_loss: List[float] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means no epochs ran

    @property
    def best_val_mae(self) -> float:
        return self.val_mae[self.best_epoch - 1] if self.best_epoch else float("nan")


def make_folds(manifest: CohortManifest, seed: int, n_folds: int = 5) -> FoldAssignment:
    """Group-stratified fold assignment plus per-round train/val splits.

    Only subjects with the full year-0/1/2 triplet participate.  The split
    is a pure function of (manifest contents, seed).
    """
    eligible = [e for e in manifest.entries if e.has_triplet()]
    if len(eligible) < n_folds:
        raise InputError(
            f"need at least {n_folds} subjects with year 0/1/2 scans, "
            f"got {len(eligible)}"
        )
    by_group = {g: sorted(e.subject_id for e in eligible if e.group == g) for g in GROUPS}
    rng = np.random.default_rng((int(seed), 11))
    fold_of: Dict[str, int] = {}
    for group in GROUPS:
        ids = by_group[group]
        perm = rng.permutation(len(ids))
        for pos, idx in enumerate(perm):
            fold_of[ids[idx]] = pos % n_folds
    rounds = []
    for k in range(n_folds):
        test = sorted(sid for sid, f in fold_of.items() if f == k)
        val: List[str] = []
        train: List[str] = []
        rng_k = np.random.default_rng((int(seed), 23, k))
        for group in GROUPS:
            rest = [sid for sid in by_group[group] if fold_of[sid] != k]
            if not rest:
                continue
            perm = rng_k.permutation(len(rest))
            n_val = max(1, int(len(rest) * 0.2 + 0.5))
            chosen = [rest[i] for i in perm]
            val.extend(chosen[:n_val])
            train.extend(chosen[n_val:])
        rounds.append(FoldRound(k, test, sorted(val), sorted(train)))
    return FoldAssignment(int(seed), n_folds, fold_of, rounds)


def save_folds(folds: FoldAssignment, path) -> Path:
    path = Path(path)
    doc = {
        "version": 1,
        "seed": folds.seed,
        "n_folds": folds.n_folds,
        "fold_of": dict(sorted(folds.fold_of.items())),
        "rounds": [
            {"index": r.index, "test": r.test, "val": r.val, "train": r.train}
            for r in folds.rounds
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_folds(path) -> FoldAssignment:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"fold file {path} is not valid JSON: {exc}") from exc
    try:
        rounds = [
            FoldRound(int(r["index"]), list(r["test"]), list(r["val"]), list(r["train"]))
            for r in doc["rounds"]
        ]
        return FoldAssignment(
            int(doc["seed"]),
            int(doc["n_folds"]),
            {str(k): int(v) for k, v in doc["fold_of"].items()},
            rounds,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"fold file {path} violates its schema: {exc}") from exc


def _stack_triplets(records: List[SubjectRecord], dims):
    for r in records:
        if not r.has_triplet():
            raise InputError(f"subject {r.subject_id!r} lacks a year 0/1/2 triplet")
        if r.scans[0].dims != tuple(dims):
            raise ShapeError(
                f"subject {r.subject_id!r} has dims {r.scans[0].dims}, "
                f"model expects {tuple(dims)}"
            )
    y0 = np.stack([r.scans[0].data for r in records])
    y1 = np.stack([r.scans[1].data for r in records])
    y2 = np.stack([r.scans[2].data for r in records])
    return y0, y1, y2


def _infer_batched(params, frames0, frames1, config, batch_size):
    preds = []
    with ad.no_grad():
        for lo in range(0, frames0.shape[0], batch_size):
            out = forward_batch(
                params,
                frames0[lo : lo + batch_size],
                frames1[lo : lo + batch_size],
                config,
                mode="infer",
            )
            preds.append(out.data[..., 0])
    return np.concatenate(preds, axis=0)


def train_fold(
    manifest: CohortManifest,
    folds: FoldAssignment,
    round_index: int,
    config: I2IModelConfig,
    hyper: Hyper,
    seed: int,
):
    """Train one cross-validation round; returns (best params, TrainReport).

    Deterministic per seed: initialization, augmentation and epoch shuffles
    all derive from it.  A non-finite loss aborts with DivergenceError.
    """
    rnd = folds.rounds[round_index]
    train_records = manifest.load_records(rnd.train)
    val_records = manifest.load_records(rnd.val)
    if not train_records or not val_records:
        raise InputError(f"round {round_index} has an empty train or val split")

    augmented = augment_cohort(train_records, seed=(seed * 1000 + round_index), n_copies=hyper.n_copies)
    held_out = set(rnd.val) | set(rnd.test)
    for rec in augmented:
        if rec.source_id is not None and rec.subject_id in held_out:
            raise InputError(f"augmented copy {rec.subject_id!r} leaked into val/test")

    x0, x1, y2 = _stack_triplets(augmented, config.dims)
    v0, v1, vy2 = _stack_triplets(val_records, config.dims)

    init_seed = int(np.random.SeedSequence((int(seed), 307, round_index)).generate_state(1)[0])
    params = init_model(config, seed=init_seed)
    report = TrainReport(round_index=round_index, seed=seed)
    if hyper.epochs == 0:
        return params, report

    state = None
    best = None
    n = x0.shape[0]
    for epoch in range(hyper.epochs):
        rng = np.random.default_rng((int(seed), 401, round_index, epoch))
        order = rng.permutation(n)
        losses = []
        weights = []
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            params.zero_grad()
            pred = forward_batch(params, x0[idx], x1[idx], config, mode="train")
            loss = ad.mae_loss(pred, ad.Tensor(y2[idx][..., None]))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"training diverged: round {round_index}, epoch {epoch + 1}, "
                    f"batch at {lo}, loss {loss_value}"
                )
            loss.backward()
            grads = {name: t.grad for name, t in params.params.items()}
            state = ad.adam_step(params, grads, state, lr=hyper.lr)
            losses.append(loss_value)
            weights.append(len(idx))
        report.train_loss.append(float(np.average(losses, weights=weights)))

        val_pred = _infer_batched(params, v0, v1, config, hyper.batch_size)
        val_mae = float(np.mean([np.mean(np.abs(val_pred[i] - vy2[i])) for i in range(len(val_records))]))
        report.val_mae.append(val_mae)
        if best is None or val_mae < best[0]:
            best = (val_mae, params.copy())
            report.best_epoch = epoch + 1

    return best[1], report


def write_train_report(report: TrainReport, path) -> Path:
    path = Path(path)
    lines = ["epoch,train_loss,val_mae,is_best"]
    for i, (tl, vm) in enumerate(zip(report.train_loss, report.val_mae)):
        lines.append(f"{i + 1},{tl!r},{vm!r},{1 if i + 1 == report.best_epoch else 0}")
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class CrossValResult:
    folds: FoldAssignment
    reports: List[TrainReport]
    predictions: Dict[str, Volume3D]
    model_paths: Dict[int, Path]


def cross_validate(
    manifest: CohortManifest,
    config: I2IModelConfig,
    hyper: Hyper,
    seed: int,
    out_dir: Optional[Path] = None,
) -> CrossValResult:
    """Run every round; predict year 2 for each held-out test subject with
    the model that never saw it.

    Predictions always come from the serialized (float32) parameters so
    in-memory results match what a later load of the model file produces.
    """
    folds = make_folds(manifest, seed, hyper.n_folds)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_folds(folds, out_dir / "folds.json")
    reports = []
    predictions: Dict[str, Volume3D] = {}
    model_paths: Dict[int, Path] = {}
    for rnd in folds.rounds:
        params, report = train_fold(manifest, folds, rnd.index, config, hyper, seed)
        reports.append(report)
        if out_dir is not None:
            model_path = out_dir / f"model_{rnd.index}.bin"
            save_model(params, config, model_path)
            write_train_report(report, out_dir / f"train_report_{rnd.index}.csv")
            params, config_loaded = load_model(model_path)
            config = config_loaded
            model_paths[rnd.index] = model_path
        else:
            params = params.quantize()
        test_records = manifest.load_records(rnd.test)
        if test_records:
            t0 = np.stack([r.scans[0].data for r in test_records])
            t1 = np.stack([r.scans[1].data for r in test_records])
            preds = _infer_batched(params, t0, t1, config, hyper.batch_size)
            for i, rec in enumerate(test_records):
                predictions[rec.subject_id] = Volume3D(preds[i], rec.scans[1].affine.copy())
    return CrossValResult(folds, reports, predictions, model_paths)
