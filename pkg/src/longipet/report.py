"""Forecast evaluation tables and a static SVG summary.

``evaluate_forecasts`` scores predicted volumes against ground truth and
produces one row per (subject, predictor, year) plus a gap list naming
every prediction that could not be scored.  Rows serialize to CSV with a
fixed column order so downstream parsing never guesses:

    subject_id, year, predictor, mae, ssim, group,
    meta_roi_suvr_pred, meta_roi_suvr_true, region_<label>...

The SVG report is a pure function of the rows: same rows, same bytes.  It
draws two bar panels (MAE and SSIM), one bar group per year, one bar per
predictor.  No plotting library is used.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import FormatError, InputError
from .metrics import RoiDefinition, mae, meta_roi_suvr, regional_mae, ssim3d
from .parallel import pool_map
from .volume_io import SubjectRecord, Volume3D

CSV_FIXED_COLUMNS = (
    "subject_id",
    "year",
    "predictor",
    "mae",
    "ssim",
    "group",
    "meta_roi_suvr_pred",
    "meta_roi_suvr_true",
)


@dataclass
class EvalRow:
    subject_id: str
    group: str
    year: int
    predictor: str
    mae: float
    ssim: float
    meta_roi_suvr_pred: Optional[float] = None
    meta_roi_suvr_true: Optional[float] = None
    regional: Dict[int, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    rows: List[EvalRow]
    gaps: List[str]


def evaluate_forecasts(
    records: Sequence[SubjectRecord],
    forecasts: Dict[str, Dict[str, Dict[int, Volume3D]]],
    atlas: Optional[Volume3D] = None,
    roi: Optional[RoiDefinition] = None,
    mask: Optional[Volume3D] = None,
    max_workers: int = 1,
) -> EvalReport:
    """Score ``forecasts[predictor][subject][year]`` against ground truth.

    Predictions without a matching ground-truth scan are listed in
    ``gaps`` instead of being scored.  Regional and ROI columns appear
    only when an atlas (and ROI) are supplied.  Row order is
    deterministic (predictor, then subject, then year) and independent of
    ``max_workers``.
    """
    rec_map = {r.subject_id: r for r in records}
    tasks = [
        (predictor, sid)
        for predictor in sorted(forecasts)
        for sid in sorted(forecasts[predictor])
    ]

    def score(task) -> Tuple[List[EvalRow], List[str]]:
        predictor, sid = task
        t_rows: List[EvalRow] = []
        t_gaps: List[str] = []
        if sid not in rec_map:
            t_gaps.append(f"{predictor}: subject {sid} has predictions but no record")
            return t_rows, t_gaps
        rec = rec_map[sid]
        for year in sorted(forecasts[predictor][sid]):
            pred = forecasts[predictor][sid][year]
            if year not in rec.scans:
                t_gaps.append(
                    f"{predictor}: subject {sid} year {year} has no ground-truth scan"
                )
                continue
            true = rec.scans[year]
            regional = regional_mae(pred, true, atlas) if atlas is not None else {}
            suvr_p = suvr_t = None
            if atlas is not None and roi is not None:
                suvr_p = meta_roi_suvr(pred, atlas, roi)
                suvr_t = meta_roi_suvr(true, atlas, roi)
            t_rows.append(
                EvalRow(
                    subject_id=sid,
                    group=rec.group,
                    year=year,
                    predictor=predictor,
                    mae=mae(pred, true, mask=mask),
                    ssim=ssim3d(pred, true),
                    meta_roi_suvr_pred=suvr_p,
                    meta_roi_suvr_true=suvr_t,
                    regional=regional,
                )
            )
        return t_rows, t_gaps

    rows: List[EvalRow] = []
    gaps: List[str] = []
    for t_rows, t_gaps in pool_map(score, tasks, max_workers=max_workers):
        rows.extend(t_rows)
        gaps.extend(t_gaps)
    return EvalReport(rows, gaps)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def _cell(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def write_metrics_csv(rows: Sequence[EvalRow], path) -> Path:
    path = Path(path)
    labels = sorted({label for r in rows for label in r.regional})
    header = list(CSV_FIXED_COLUMNS) + [f"region_{label}" for label in labels]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            cells = [
                r.subject_id,
                str(int(r.year)),
                r.predictor,
                repr(float(r.mae)),
                repr(float(r.ssim)),
                r.group,
                _cell(r.meta_roi_suvr_pred),
                _cell(r.meta_roi_suvr_true),
            ]
            cells += [_cell(r.regional.get(label)) for label in labels]
            writer.writerow(cells)
    return path


def read_metrics_csv(path) -> List[EvalRow]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[: len(CSV_FIXED_COLUMNS)]) != CSV_FIXED_COLUMNS:
            raise FormatError(
                f"{path} is not a metrics CSV; expected columns {CSV_FIXED_COLUMNS}"
            )
        labels = []
        for name in header[len(CSV_FIXED_COLUMNS):]:
            if not name.startswith("region_"):
                raise FormatError(f"{path} has unexpected column {name!r}")
            try:
                labels.append(int(name[len("region_"):]))
            except ValueError as exc:
                raise FormatError(f"{path} has bad region column {name!r}") from exc
        rows = []
        for i, cells in enumerate(reader):
            if len(cells) != len(header):
                raise FormatError(f"{path} row {i + 2} has {len(cells)} cells, want {len(header)}")
            regional = {}
            for label, cell in zip(labels, cells[len(CSV_FIXED_COLUMNS):]):
                if cell != "":
                    regional[label] = float(cell)
            rows.append(
                EvalRow(
                    subject_id=cells[0],
                    group=cells[5],
                    year=int(cells[1]),
                    predictor=cells[2],
                    mae=float(cells[3]),
                    ssim=float(cells[4]),
                    meta_roi_suvr_pred=float(cells[6]) if cells[6] != "" else None,
                    meta_roi_suvr_true=float(cells[7]) if cells[7] != "" else None,
                    regional=regional,
                )
            )
    return rows


def summarize(rows: Sequence[EvalRow], metric: str) -> Dict[int, Dict[str, float]]:
    """Mean of ``metric`` ('mae' or 'ssim') per (year, predictor)."""
    if metric not in ("mae", "ssim"):
        raise InputError(f"unknown metric {metric!r}")
    sums: Dict[Tuple[int, str], List[float]] = {}
    for r in rows:
        sums.setdefault((r.year, r.predictor), []).append(getattr(r, metric))
    out: Dict[int, Dict[str, float]] = {}
    for (year, predictor), vals in sorted(sums.items()):
        out.setdefault(year, {})[predictor] = sum(vals) / len(vals)
    return out


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

_PALETTE = ("#4472c4", "#ed7d31", "#70ad47", "#ffc000", "#a5a5a5", "#264478")

_PANEL_W = 860
_PANEL_H = 330
_MARGIN_L = 70
_MARGIN_R = 20
_TITLE_H = 34


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _bar_panel(out: List[str], y0: int, title: str,
               data: Dict[int, Dict[str, float]], predictors: List[str]) -> None:
    plot_x = _MARGIN_L
    plot_w = _PANEL_W - _MARGIN_L - _MARGIN_R
    plot_y = y0 + _TITLE_H
    plot_h = _PANEL_H - _TITLE_H - 46
    years = sorted(data)
    vmax = max((v for per in data.values() for v in per.values()), default=0.0)
    if vmax <= 0:
        vmax = 1.0
    vmax *= 1.12  # headroom for value labels
    out.append(
        f'<text x="{plot_x}" y="{y0 + 20}" font-size="15" font-weight="bold" '
        f'fill="#222">{title}</text>'
    )
    # y axis with 5 ticks
    for i in range(6):
        val = vmax * i / 5.0
        ty = plot_y + plot_h - plot_h * i / 5.0
        out.append(
            f'<line x1="{plot_x}" y1="{_fmt(ty)}" x2="{plot_x + plot_w}" y2="{_fmt(ty)}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{plot_x - 6}" y="{_fmt(ty + 4)}" font-size="10" fill="#555" '
            f'text-anchor="end">{val:.3g}</text>'
        )
    group_w = plot_w / max(1, len(years))
    bar_w = group_w * 0.8 / max(1, len(predictors))
    for gi, year in enumerate(years):
        gx = plot_x + gi * group_w
        out.append(
            f'<text x="{_fmt(gx + group_w / 2)}" y="{plot_y + plot_h + 18}" '
            f'font-size="11" fill="#222" text-anchor="middle">year {year}</text>'
        )
        for pi, predictor in enumerate(predictors):
            if predictor not in data[year]:
                continue
            v = data[year][predictor]
            h = plot_h * v / vmax
            bx = gx + group_w * 0.1 + pi * bar_w
            by = plot_y + plot_h - h
            color = _PALETTE[pi % len(_PALETTE)]
            out.append(
                f'<rect x="{_fmt(bx)}" y="{_fmt(by)}" width="{_fmt(bar_w * 0.92)}" '
                f'height="{_fmt(h)}" fill="{color}"/>'
            )
            out.append(
                f'<text x="{_fmt(bx + bar_w * 0.46)}" y="{_fmt(by - 3)}" font-size="9" '
                f'fill="#333" text-anchor="middle">{v:.4g}</text>'
            )
    # axis lines
    out.append(
        f'<line x1="{plot_x}" y1="{plot_y}" x2="{plot_x}" y2="{plot_y + plot_h}" '
        f'stroke="#333" stroke-width="1"/>'
    )
    out.append(
        f'<line x1="{plot_x}" y1="{plot_y + plot_h}" x2="{plot_x + plot_w}" '
        f'y2="{plot_y + plot_h}" stroke="#333" stroke-width="1"/>'
    )


def render_report_svg(rows: Sequence[EvalRow], title: str = "Forecast evaluation") -> str:
    """Render MAE and SSIM panels as a standalone SVG string."""
    if not rows:
        raise InputError("no evaluation rows to report")
    predictors = sorted({r.predictor for r in rows})
    n_subj = len({r.subject_id for r in rows})
    height = 40 + 2 * _PANEL_H
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PANEL_W}" '
        f'height="{height}" viewBox="0 0 {_PANEL_W} {height}" font-family="sans-serif">',
        f'<rect width="{_PANEL_W}" height="{height}" fill="#ffffff"/>',
        f'<text x="{_MARGIN_L}" y="24" font-size="18" font-weight="bold" '
        f'fill="#111">{title}</text>',
        f'<text x="{_PANEL_W - _MARGIN_R}" y="24" font-size="11" fill="#555" '
        f'text-anchor="end">{n_subj} subjects, mean over subjects per year</text>',
    ]
    # legend
    lx = _MARGIN_L
    ly = 36
    for pi, predictor in enumerate(predictors):
        color = _PALETTE[pi % len(_PALETTE)]
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="11" height="11" fill="{color}"/>')
        out.append(
            f'<text x="{lx + 15}" y="{ly}" font-size="11" fill="#222">{predictor}</text>'
        )
        lx += 15 + 9 * len(predictor) + 24
    _bar_panel(out, 46, "Mean absolute error (lower is better)",
               summarize(rows, "mae"), predictors)
    _bar_panel(out, 46 + _PANEL_H, "Structural similarity (higher is better)",
               summarize(rows, "ssim"), predictors)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report_svg(rows: Sequence[EvalRow], path, title: str = "Forecast evaluation") -> Path:
    path = Path(path)
    path.write_text(render_report_svg(rows, title=title), encoding="utf-8")
    return path
