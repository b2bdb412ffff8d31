"""Where the linear baseline is exact and where it breaks.

Voxelwise linear extrapolation reproduces any trajectory that is linear in
time to machine precision, recursively out to any year. On a quadratic
decline it misses the curvature: forecasting year k from years 0 and 1
accumulates an ROI error of exactly k*(k-1)*rate.
"""

from longipet.forecast import PlanEntry, forecast_recursive
from longipet.metrics import mae, meta_roi_suvr
from longipet.phantom import PhantomConfig, generate_cohort

RATE = 0.004
cohort = generate_cohort(PhantomConfig(
    dims=(16, 16, 16),
    n_stable=1, n_converter=1, n_decliner=1,
    years=tuple(range(8)),
    noise_sigma=0.0,
    decline_quadratic=RATE,
    seed=1,
))
by_group = {rec.group: rec for rec in cohort.records}

rec = by_group["Dementia"]
fc = forecast_recursive(rec, PlanEntry(rec.subject_id, "linear"), to_year=7)
print("linear decline, recursive linear forecast:")
for year in range(2, 8):
    print(f"  year {year}: volume MAE {mae(fc[year], rec.scans[year]):.2e}")

rec = by_group["MCI"]
fc = forecast_recursive(rec, PlanEntry(rec.subject_id, "linear"), to_year=7)
print(f"\nquadratic decline at rate {RATE}: ROI error follows k*(k-1)*rate")
print(f"{'year':>6} {'measured':>12} {'k*(k-1)*rate':>14}")
for year in range(2, 8):
    got = abs(
        meta_roi_suvr(fc[year], cohort.atlas, cohort.roi)
        - meta_roi_suvr(rec.scans[year], cohort.atlas, cohort.roi)
    )
    print(f"{year:>6} {got:>12.6f} {year * (year - 1) * RATE:>14.6f}")
