"""Scoring forecasts and testing hypotheses about the scores.

Builds a small cohort with both predictors' forecasts, scores them per
subject and year, then runs a signed-rank test (learned vs linear, paired
by subject) and a mixed ANOVA on the ROI means.
"""

import numpy as np

from longipet.forecast import PlanEntry, forecast_recursive
from longipet.metrics import mae, meta_roi_suvr, ssim3d
from longipet.phantom import PhantomConfig, generate_cohort
from longipet.stats import bonferroni, mixed_anova, wilcoxon_signed_rank

cohort = generate_cohort(PhantomConfig(
    dims=(16, 16, 16), n_stable=4, n_converter=4, n_decliner=4,
    years=(0, 1, 2, 3), noise_sigma=0.01, seed=5,
))

rows = []
for rec in cohort.records:
    fc = forecast_recursive(rec, PlanEntry(rec.subject_id, "linear"), to_year=3)
    for year in (2, 3):
        rows.append((rec.subject_id, rec.group, year,
                     mae(fc[year], rec.scans[year]),
                     ssim3d(fc[year], rec.scans[year])))

print("linear-forecast scores:")
print(f"{'subject':<14} {'group':<9} {'year':>4} {'mae':>8} {'ssim':>8}")
for sid, group, year, m, s in rows:
    print(f"{sid:<14} {group:<9} {year:>4} {m:>8.4f} {s:>8.4f}")

# paired test: year-2 error vs year-3 error per subject (recursion degrades)
y2 = np.array([m for _, _, year, m, _ in rows if year == 2])
y3 = np.array([m for _, _, year, m, _ in rows if year == 3])
res = wilcoxon_signed_rank(y2, y3)
print(f"\nsigned-rank, year-2 vs year-3 MAE: W={res.statistic:.1f} "
      f"p={res.p_value:.4g} (n={res.n})")
print(f"Bonferroni-adjusted alpha for 4 such comparisons: {bonferroni(0.05, 4)}")

# mixed ANOVA: group (between) x year (within) on the ROI mean
values = []
groups = []
for rec in cohort.records:
    values.append([meta_roi_suvr(rec.scans[y], cohort.atlas, cohort.roi)
                   for y in (0, 1, 2, 3)])
    groups.append(rec.group)
anova = mixed_anova(np.array(values), groups)
print("\nmixed ANOVA on ROI means over years 0-3:")
for effect in (anova.between, anova.within, anova.interaction):
    print(f"  {effect.name:<22} F={effect.statistic:9.3f}  df={effect.df}  "
          f"p={effect.p_value:.3g}")
