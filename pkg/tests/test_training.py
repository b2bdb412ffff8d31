"""Cross-validation protocol: stratified folds, nested splits, training
determinism, divergence detection, and round-trip of fold files."""

from pathlib import Path

import numpy as np
import pytest

from longipet.errors import DivergenceError, FormatError, InputError, ShapeError
from longipet.model import I2IModelConfig, forward_batch, load_model
from longipet.training import (
    CrossValResult,
    FoldAssignment,
    Hyper,
    cross_validate,
    load_folds,
    make_folds,
    save_folds,
    train_fold,
    write_train_report,
)
from longipet import autodiff as ad
from longipet.volume_io import (
    CohortManifest,
    ManifestEntry,
    Volume3D,
    load_manifest,
    write_manifest,
    write_volume,
)

TINY = I2IModelConfig(dims=(4, 4, 4), lstm_filters=1, decoder_filters=1, kernel_size=1)


def fake_manifest(counts, years=(0, 1, 2)):
    """Entries only; paths never touched. counts = (n_cn, n_mci, n_dem)."""
    entries = []
    for group, n in zip(("CN", "MCI", "Dementia"), counts):
        for i in range(n):
            paths = {y: Path(f"/nowhere/{group}_{i:03d}_{y}.vol") for y in years}
            entries.append(ManifestEntry(f"{group}_{i:03d}", group, paths))
    return CohortManifest(entries)


def cohort_on_disk(tmp_path, counts=(4, 4, 2), dims=(4, 4, 4), sigma=0.02):
    """Small synthetic cohort with voxelwise linear decline plus noise."""
    vols = tmp_path / "vols"
    vols.mkdir()
    entries = []
    rng = np.random.default_rng(99)
    for group, n in zip(("CN", "MCI", "Dementia"), counts):
        for i in range(n):
            sid = f"{group}_{i:03d}"
            base = rng.uniform(0.8, 1.2, size=dims)
            paths = {}
            for year in (0, 1, 2):
                data = base - 0.05 * year + rng.normal(0, sigma, size=dims)
                p = vols / f"{sid}_y{year}.vol"
                write_volume(Volume3D(np.clip(data, 0.05, None)), p)
                paths[year] = p
            entries.append(ManifestEntry(sid, group, paths))
    return load_manifest(write_manifest(entries, tmp_path / "manifest.json"))


# ---------------------------------------------------------------------------
# fold construction
# ---------------------------------------------------------------------------

def test_hyper_defaults():
    h = Hyper()
    assert h.batch_size == 8
    assert h.epochs == 70
    assert h.n_copies == 2
    assert h.lr == 1e-3
    assert h.n_folds == 5


def test_fold_sizes_large_cohort():
    m = fake_manifest((51, 95, 15))
    folds = make_folds(m, seed=0)
    sizes = sorted(len(r.test) for r in folds.rounds)
    assert sizes == [32, 32, 32, 32, 33]
    assert sum(sizes) == 161


def test_fold_sizes_small_cohort():
    m = fake_manifest((8, 12, 4))
    folds = make_folds(m, seed=1)
    sizes = sorted(len(r.test) for r in folds.rounds)
    assert sizes == [3, 4, 5, 6, 6]


def test_folds_stratified_within_one():
    m = fake_manifest((13, 27, 6))
    folds = make_folds(m, seed=7)
    for group, n in (("CN", 13), ("MCI", 27), ("Dementia", 6)):
        per_fold = [0] * folds.n_folds
        for sid, f in folds.fold_of.items():
            if sid.startswith(group):
                per_fold[f] += 1
        assert sum(per_fold) == n
        assert max(per_fold) - min(per_fold) <= 1


def test_rounds_partition_cohort():
    m = fake_manifest((8, 12, 4))
    folds = make_folds(m, seed=3)
    all_ids = {e.subject_id for e in m.entries}
    seen = []
    for rnd in folds.rounds:
        test, val, train = set(rnd.test), set(rnd.val), set(rnd.train)
        assert test | val | train == all_ids
        assert not test & val and not test & train and not val & train
        seen.extend(rnd.test)
    assert sorted(seen) == sorted(all_ids)


def test_validation_fraction_rounds_half_up():
    m = fake_manifest((8, 12, 4))
    folds = make_folds(m, seed=5)
    by_group = {
        g: sorted(e.subject_id for e in m.entries if e.group == g)
        for g in ("CN", "MCI", "Dementia")
    }
    for rnd in folds.rounds:
        for g, ids in by_group.items():
            rest = [sid for sid in ids if folds.fold_of[sid] != rnd.index]
            if not rest:
                continue
            expected_val = max(1, int(len(rest) * 0.2 + 0.5))
            got_val = sum(1 for sid in rnd.val if sid.startswith(g))
            assert got_val == expected_val


def test_folds_ignore_incomplete_subjects():
    m = fake_manifest((8, 12, 4))
    m.entries.append(
        ManifestEntry("CN_xxx", "CN", {0: Path("/nowhere/a.vol"), 1: Path("/nowhere/b.vol")})
    )
    folds = make_folds(m, seed=0)
    assert "CN_xxx" not in folds.fold_of
    assert all("CN_xxx" not in r.test + r.val + r.train for r in folds.rounds)


def test_folds_need_enough_subjects():
    with pytest.raises(InputError):
        make_folds(fake_manifest((2, 1, 1)), seed=0)


def test_folds_deterministic_and_order_free():
    m1 = fake_manifest((8, 12, 4))
    m2 = CohortManifest(list(reversed(m1.entries)))
    f1 = make_folds(m1, seed=9)
    f2 = make_folds(m2, seed=9)
    assert f1.fold_of == f2.fold_of
    for a, b in zip(f1.rounds, f2.rounds):
        assert (a.test, a.val, a.train) == (b.test, b.val, b.train)
    f3 = make_folds(m1, seed=10)
    assert f3.fold_of != f1.fold_of


def test_folds_save_load_roundtrip(tmp_path):
    folds = make_folds(fake_manifest((8, 12, 4)), seed=2)
    p = save_folds(folds, tmp_path / "folds.json")
    back = load_folds(p)
    assert back.seed == folds.seed
    assert back.n_folds == folds.n_folds
    assert back.fold_of == folds.fold_of
    for a, b in zip(back.rounds, folds.rounds):
        assert (a.index, a.test, a.val, a.train) == (b.index, b.test, b.val, b.train)


def test_load_folds_rejects_garbage(tmp_path):
    p = tmp_path / "folds.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_folds(p)
    p.write_text('{"seed": 1}')
    with pytest.raises(FormatError):
        load_folds(p)


# ---------------------------------------------------------------------------
# single-round training
# ---------------------------------------------------------------------------

def test_zero_epochs_returns_untouched_init(tmp_path):
    m = cohort_on_disk(tmp_path)
    folds = make_folds(m, seed=0)
    params, report = train_fold(m, folds, 0, TINY, Hyper(epochs=0, n_copies=0), seed=0)
    assert report.best_epoch == 0
    assert report.train_loss == [] and report.val_mae == []
    assert np.isnan(report.best_val_mae)
    np.testing.assert_array_equal(params.params["convlstm.bias"].data, 0.0)
    np.testing.assert_array_equal(params.params["bn.gamma"].data, 1.0)
    params2, _ = train_fold(m, folds, 0, TINY, Hyper(epochs=0, n_copies=0), seed=0)
    for name, t in params.params.items():
        np.testing.assert_array_equal(t.data, params2.params[name].data)


def test_train_fold_runs_and_is_deterministic(tmp_path):
    m = cohort_on_disk(tmp_path)
    folds = make_folds(m, seed=0)
    hyper = Hyper(batch_size=8, epochs=2, n_copies=1)
    p1, r1 = train_fold(m, folds, 0, TINY, hyper, seed=4)
    p2, r2 = train_fold(m, folds, 0, TINY, hyper, seed=4)
    assert r1.train_loss == r2.train_loss
    assert r1.val_mae == r2.val_mae
    assert len(r1.train_loss) == 2 and len(r1.val_mae) == 2
    assert all(np.isfinite(r1.train_loss)) and all(np.isfinite(r1.val_mae))
    assert r1.best_epoch in (1, 2)
    assert r1.best_val_mae == min(r1.val_mae)
    for name, t in p1.params.items():
        np.testing.assert_array_equal(t.data, p2.params[name].data)
    # a different seed trains a different model
    _, r3 = train_fold(m, folds, 0, TINY, hyper, seed=5)
    assert r3.train_loss != r1.train_loss


def test_train_fold_wrong_dims(tmp_path):
    m = cohort_on_disk(tmp_path)
    folds = make_folds(m, seed=0)
    big = I2IModelConfig(dims=(8, 8, 8), lstm_filters=1, decoder_filters=1, kernel_size=1)
    with pytest.raises(ShapeError):
        train_fold(m, folds, 0, big, Hyper(epochs=1, n_copies=0), seed=0)


def test_train_fold_diverges_on_absurd_lr(tmp_path):
    # linear activations let the blown-up magnitudes reach the loss instead
    # of being silenced by a dead relu
    cfg = I2IModelConfig(
        dims=(4, 4, 4), lstm_filters=1, decoder_filters=1, kernel_size=1,
        decoder_activation="linear", output_activation="linear",
    )
    m = cohort_on_disk(tmp_path)
    folds = make_folds(m, seed=0)
    with pytest.raises(DivergenceError):
        train_fold(m, folds, 0, cfg, Hyper(batch_size=4, epochs=4, n_copies=1, lr=1e300), seed=0)


def test_write_train_report(tmp_path):
    rep_path = tmp_path / "report.csv"
    m = cohort_on_disk(tmp_path)
    folds = make_folds(m, seed=0)
    _, report = train_fold(m, folds, 0, TINY, Hyper(epochs=3, n_copies=0, batch_size=8), seed=1)
    write_train_report(report, rep_path)
    lines = rep_path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_mae,is_best"
    assert len(lines) == 4
    flags = [int(line.split(",")[3]) for line in lines[1:]]
    assert sum(flags) == 1
    assert flags.index(1) + 1 == report.best_epoch
    # losses survive the text round trip exactly
    assert float(lines[1].split(",")[1]) == report.train_loss[0]


# ---------------------------------------------------------------------------
# full cross-validation
# ---------------------------------------------------------------------------

def test_cross_validate_covers_every_subject(tmp_path):
    m = cohort_on_disk(tmp_path)
    out = tmp_path / "cv"
    res = cross_validate(m, TINY, Hyper(epochs=1, n_copies=0, batch_size=8), seed=0, out_dir=out)
    assert isinstance(res, CrossValResult)
    assert sorted(res.predictions) == sorted(m.subject_ids)
    assert len(res.reports) == 5
    assert (out / "folds.json").exists()
    for k in range(5):
        assert (out / f"model_{k}.bin").exists()
        assert (out / f"train_report_{k}.csv").exists()
    assert set(res.model_paths) == set(range(5))
    for sid, vol in res.predictions.items():
        assert vol.dims == TINY.dims
        assert np.all(vol.data >= 0.0)


def test_cross_validate_predictions_match_saved_models(tmp_path):
    m = cohort_on_disk(tmp_path)
    out = tmp_path / "cv"
    hyper = Hyper(epochs=1, n_copies=0, batch_size=8)
    res = cross_validate(m, TINY, hyper, seed=0, out_dir=out)
    folds = load_folds(out / "folds.json")
    for rnd in folds.rounds:
        params, cfg = load_model(out / f"model_{rnd.index}.bin")
        recs = m.load_records(rnd.test)
        if not recs:
            continue
        t0 = np.stack([r.scans[0].data for r in recs])
        t1 = np.stack([r.scans[1].data for r in recs])
        with ad.no_grad():
            pred = forward_batch(params, t0, t1, cfg, mode="infer").data[..., 0]
        for i, rec in enumerate(recs):
            np.testing.assert_array_equal(res.predictions[rec.subject_id].data, pred[i])


def test_cross_validate_deterministic(tmp_path):
    m = cohort_on_disk(tmp_path)
    hyper = Hyper(epochs=1, n_copies=1, batch_size=8)
    r1 = cross_validate(m, TINY, hyper, seed=6, out_dir=tmp_path / "a")
    r2 = cross_validate(m, TINY, hyper, seed=6, out_dir=tmp_path / "b")
    for sid in r1.predictions:
        np.testing.assert_array_equal(r1.predictions[sid].data, r2.predictions[sid].data)
    assert [r.train_loss for r in r1.reports] == [r.train_loss for r in r2.reports]
    a = (tmp_path / "a" / "model_0.bin").read_bytes()
    b = (tmp_path / "b" / "model_0.bin").read_bytes()
    assert a == b


def test_cross_validate_without_out_dir(tmp_path):
    m = cohort_on_disk(tmp_path)
    res = cross_validate(m, TINY, Hyper(epochs=1, n_copies=0, batch_size=8), seed=0)
    assert res.model_paths == {}
    assert sorted(res.predictions) == sorted(m.subject_ids)
