"""Recursive multi-year forecasting with leakage-safe model routing.

Year 2 is predicted from the observed year-0 and year-1 scans; year 3 from
the observed year 1 and the predicted year 2; every later year from the two
preceding predictions.  For the learned predictor, each subject must be
routed to the cross-validation round in which it was a test subject, so the
model weights never saw that subject during training or validation.  The
audit verifies exactly that and refuses to predict when it fails.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import FormatError, InputError, ParameterError, PlanError
from .linear import predict_linear
from .model import forward, load_model
from .parallel import pool_map
from .training import FoldAssignment
from .volume_io import SubjectRecord, Volume3D

PREDICTORS = ("linear", "i2i")


@dataclass
class PlanEntry:
    subject_id: str
    predictor: str
    round_index: Optional[int] = None  # cross-validation round, i2i only
    model_path: Optional[Path] = None

    def __post_init__(self):
        if self.predictor not in PREDICTORS:
            raise ParameterError(f"unknown predictor {self.predictor!r}")
        if self.predictor == "i2i" and (self.round_index is None or self.model_path is None):
            raise PlanError(
                f"subject {self.subject_id!r}: learned predictor needs a round and model path"
            )


@dataclass
class ForecastPlan:
    entries: Dict[str, PlanEntry]
    to_year: int = 2


@dataclass
class AuditItem:
    subject_id: str
    ok: bool
    detail: str


@dataclass
class AuditReport:
    items: List[AuditItem] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(item.ok for item in self.items)

    def failures(self) -> List[AuditItem]:
        return [item for item in self.items if not item.ok]


def plan_from_folds(
    folds: FoldAssignment,
    models_dir,
    predictor: str = "i2i",
    subject_ids=None,
    to_year: int = 2,
) -> ForecastPlan:
    """Route each subject to the round whose test fold contains it."""
    models_dir = Path(models_dir) if models_dir is not None else None
    entries = {}
    ids = subject_ids if subject_ids is not None else sorted(folds.fold_of)
    for sid in ids:
        if predictor == "linear":
            entries[sid] = PlanEntry(sid, "linear")
            continue
        if sid not in folds.fold_of:
            raise PlanError(f"subject {sid!r} has no fold assignment")
        k = folds.fold_of[sid]
        entries[sid] = PlanEntry(sid, "i2i", k, models_dir / f"model_{k}.bin")
    return ForecastPlan(entries, to_year=to_year)


def audit_leakage(plan: ForecastPlan, folds: FoldAssignment) -> AuditReport:
    """Check that every learned-predictor subject is routed to the round
    whose training and validation sets exclude it."""
    report = AuditReport()
    for sid in sorted(plan.entries):
        entry = plan.entries[sid]
        if entry.predictor != "i2i":
            report.items.append(AuditItem(sid, True, "linear predictor, no weights"))
            continue
        k = entry.round_index
        if k is None or k < 0 or k >= len(folds.rounds):
            report.items.append(AuditItem(sid, False, f"routed to unknown round {k}"))
            continue
        rnd = folds.rounds[k]
        if sid in rnd.train:
            report.items.append(
                AuditItem(sid, False, f"subject is in the training set of round {k}")
            )
        elif sid in rnd.val:
            report.items.append(
                AuditItem(sid, False, f"subject is in the validation set of round {k}")
            )
        elif sid not in rnd.test:
            report.items.append(
                AuditItem(sid, False, f"subject is not in the test fold of round {k}")
            )
        else:
            report.items.append(AuditItem(sid, True, f"test subject of round {k}"))
    return report


class _ModelCache:
    def __init__(self):
        self._loaded = {}

    def get(self, path: Path):
        key = str(path)
        if key not in self._loaded:
            if not Path(path).exists():
                raise PlanError(f"model file {path} does not exist")
            self._loaded[key] = load_model(path)
        return self._loaded[key]


def forecast_recursive(
    record: SubjectRecord,
    entry: PlanEntry,
    to_year: int,
    model_cache: Optional[_ModelCache] = None,
    clamp_nonnegative: bool = False,
) -> Dict[int, Volume3D]:
    """Predict years 2..to_year for one subject.

    Requires observed year-0 and year-1 scans.  Only inference-mode forward
    passes are used; no parameter ever updates here.
    """
    if to_year < 2:
        raise ParameterError(f"to_year must be >= 2, got {to_year}")
    if 0 not in record.scans or 1 not in record.scans:
        raise InputError(
            f"subject {record.subject_id!r} needs year 0 and 1 scans to forecast"
        )
    if entry.predictor == "i2i":
        if model_cache is None:
            model_cache = _ModelCache()
        params, config = model_cache.get(entry.model_path)

        def step(a: Volume3D, b: Volume3D) -> Volume3D:
            return forward(params, a, b, config, mode="infer")

    else:

        def step(a: Volume3D, b: Volume3D) -> Volume3D:
            return predict_linear(a, b, clamp_nonnegative=clamp_nonnegative)

    out: Dict[int, Volume3D] = {}
    prev2, prev1 = record.scans[0], record.scans[1]
    for year in range(2, to_year + 1):
        pred = step(prev2, prev1)
        out[year] = pred
        prev2, prev1 = prev1, pred
    return out


def forecast_cohort(
    records: List[SubjectRecord],
    plan: ForecastPlan,
    folds: Optional[FoldAssignment] = None,
    clamp_nonnegative: bool = False,
    max_workers: int = 1,
) -> Dict[str, Dict[int, Volume3D]]:
    """Forecast every planned subject after a mandatory leakage audit.

    ``folds`` may be omitted only when no subject uses the learned
    predictor; an audit failure is a hard error naming the subjects.
    Subjects are independent, so ``max_workers`` only changes wall time,
    never the results.
    """
    uses_i2i = any(e.predictor == "i2i" for e in plan.entries.values())
    if uses_i2i:
        if folds is None:
            raise PlanError("learned-predictor forecasts require fold assignments to audit")
        report = audit_leakage(plan, folds)
        if not report.passed:
            names = ", ".join(
                f"{item.subject_id} ({item.detail})" for item in report.failures()
            )
            raise PlanError(f"leakage audit failed: {names}")
    cache = _ModelCache()
    planned = [r for r in records if r.subject_id in plan.entries]
    # Load weights up front; afterwards the cache is read-only and safe to
    # share across workers.
    for record in planned:
        entry = plan.entries[record.subject_id]
        if entry.predictor == "i2i":
            cache.get(entry.model_path)

    def run(record: SubjectRecord):
        entry = plan.entries[record.subject_id]
        return forecast_recursive(
            record, entry, plan.to_year, cache, clamp_nonnegative=clamp_nonnegative
        )

    results = pool_map(run, planned, max_workers=max_workers)
    return {r.subject_id: res for r, res in zip(planned, results)}


def save_plan(plan: ForecastPlan, path) -> Path:
    path = Path(path)
    doc = {
        "version": 1,
        "to_year": plan.to_year,
        "entries": {
            sid: {
                "predictor": e.predictor,
                "round": e.round_index,
                "model": str(e.model_path) if e.model_path else None,
            }
            for sid, e in sorted(plan.entries.items())
        },
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_plan(path) -> ForecastPlan:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"plan file {path} is not valid JSON: {exc}") from exc
    try:
        entries = {}
        for sid, e in doc["entries"].items():
            entries[sid] = PlanEntry(
                sid,
                e["predictor"],
                e.get("round"),
                Path(e["model"]) if e.get("model") else None,
            )
        return ForecastPlan(entries, to_year=int(doc["to_year"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"plan file {path} violates its schema: {exc}") from exc
