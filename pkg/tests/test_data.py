import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pasturefuse.autodiff import RngStream
from pasturefuse.data import (
    HEADER, AugmentParams, AugmentPolicy, FoldAssignment, ManifestError, SampleRecord, SynthSpec,
    Targets, apply_params, augment_pair, draw_params, expm1_inverse, load_manifest,
    log1p_transform, quintile_bins, stratified_group_kfold, summary_stats, synth_dataset,
    target_matrix, write_manifest, write_synth,
)
from pasturefuse.data.synth import count_classes, targets_from_labels
from pasturefuse.metadata import SampleMeta
from pasturefuse.metrics import r2


def rec(image_id, total, dead=None):
    dead = total / 3 if dead is None else dead
    green = (total - dead) / 2
    t = Targets(green, dead, green, 2 * green, 2 * green + dead)
    return SampleRecord(image_id, f"images/{image_id}.png", t,
                        SampleMeta("NSW", "Ryegrass", 0.5, 3.0, dt.date(2015, 4, 1)))


# -- manifest ------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    records = [rec(f"ID{i}", 10.0 + i) for i in range(5)]
    p = tmp_path / "m.csv"
    write_manifest(p, records)
    raw = p.read_bytes()
    assert raw.startswith((",".join(HEADER) + "\n").encode()) and b"\r" not in raw
    assert load_manifest(p) == records


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(",".join(HEADER) + "\n")
    assert load_manifest(p) == []


def test_manifest_errors_itemized(tmp_path):
    p = tmp_path / "m.csv"
    good = rec("ok", 30.0).row()
    bad_comp = rec("comp", 30.0).row()
    bad_comp[5] = "999"
    bad_num = rec("num", 30.0).row()
    bad_num[2] = "abc"
    lines = [",".join(HEADER), ",".join(good), ",".join(bad_comp), ",".join(bad_num)]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ManifestError) as exc:
        load_manifest(p)
    lines_hit = [ln for ln, _ in exc.value.problems]
    assert 3 in lines_hit and 4 in lines_hit and 2 not in lines_hit
    assert any("gdm" in m for ln, m in exc.value.problems if ln == 3)


def test_manifest_missing_column(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(",".join(HEADER[:-1]) + "\n")
    with pytest.raises(ManifestError, match="date"):
        load_manifest(p)


def test_summary_stats():
    records = [rec(f"ID{i}", float(i)) for i in range(1, 11)]
    s = summary_stats(records)
    assert math.isclose(s["dry_total"]["mean"], 5.5)
    assert s["dry_total"]["zero_pct"] == 0.0


# -- transforms ------------------------------------------------------------

def test_log1p_fixtures():
    assert log1p_transform(0.0) == 0.0
    assert math.isclose(log1p_transform(math.e - 1), 1.0)
    with pytest.raises(ValueError):
        log1p_transform(-0.1)
    y = RngStream(3).uniform(0, 500, 1000)
    assert (np.abs(y - expm1_inverse(log1p_transform(y))) <= 1e-9 * (1 + y)).all()


# -- quintile bins -----------------------------------------------------------

def test_quintile_fixtures():
    assert quintile_bins(np.arange(1, 11)).tolist() == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
    assert (quintile_bins(np.full(12, 3.0)) == 0).all()
    with pytest.raises(ValueError):
        quintile_bins([1, 2, 3, 4])
    counts = np.bincount(quintile_bins(RngStream(1).random(357)), minlength=5)
    assert (np.abs(counts - 357 / 5) <= 4).all()


# -- splitter ----------------------------------------------------------------

def test_splitter_perfectly_divisible():
    records = [rec(f"g{i}", float(i < 5) * 10 + i) for i in range(10)]
    fa = stratified_group_kfold(records, 5, seed=17)
    hist = fa.bin_histograms(records)
    bins = quintile_bins([r.targets.dry_total for r in records])
    assert set(bins.tolist()) == {0, 1, 2, 3, 4}
    assert (hist.sum(axis=1) == 2).all()


def test_splitter_two_bins_one_each():
    # 10 singleton groups in two value clusters of 5
    records = [rec(f"g{i}", 1.0 + 0.01 * i if i < 5 else 100.0 + i) for i in range(10)]
    fa = stratified_group_kfold(records, 5, seed=17)
    low = {r.image_id for r in records[:5]}
    for k in range(5):
        members = [gid for gid, f in fa.assignment.items() if f == k]
        assert len(members) == 2 and len(low & set(members)) == 1


def test_splitter_groups_and_disjoint():
    records = [rec(f"g{i // 3}", float(i)) for i in range(60)]
    fa = stratified_group_kfold(records, 5, seed=17)
    val_sets = []
    for k in range(5):
        tr, va = fa.split(records, k)
        tr_g = {records[i].image_id for i in tr}
        va_g = {records[i].image_id for i in va}
        assert not tr_g & va_g
        assert len(tr) + len(va) == 60
        val_sets.append(set(va))
    assert set().union(*val_sets) == set(range(60))
    assert sum(len(s) for s in val_sets) == 60


def test_splitter_too_few_groups():
    with pytest.raises(ValueError):
        stratified_group_kfold([rec("a", 1.0)] * 4 + [rec("b", 2.0)], 5)


def test_splitter_order_independent_and_seeded():
    records = [rec(f"g{i}", float(i * 7 % 31)) for i in range(40)]
    a = stratified_group_kfold(records, 5, seed=17)
    b = stratified_group_kfold(records[::-1], 5, seed=17)
    assert a.to_csv() == b.to_csv()
    c = stratified_group_kfold(records, 5, seed=18)
    assert c.to_csv() != a.to_csv()


def test_fold_csv_roundtrip():
    records = [rec(f"g{i}", float(i)) for i in range(20)]
    fa = stratified_group_kfold(records, 4, seed=1)
    back = FoldAssignment.from_csv(fa.to_csv())
    assert back.assignment == fa.assignment
    assert fa.to_csv().splitlines()[0] == "image_id,fold"


@given(n=st.integers(25, 120), seed=st.integers(0, 10_000), folds=st.integers(2, 6))
@settings(max_examples=25, deadline=None)
def test_splitter_balance_property(n, seed, folds):
    vals = np.exp(RngStream(seed).normal(2.0, 1.0, n))
    records = [rec(f"s{i}", float(v)) for i, v in enumerate(vals)]
    fa = stratified_group_kfold(records, folds, seed)
    sizes = fa.fold_sizes(records)
    assert max(sizes) - min(sizes) <= 1
    hist = fa.bin_histograms(records)
    assert (hist.max(axis=0) - hist.min(axis=0) <= 1).all()


def test_splitter_357_synthetic():
    records, _ = synth_dataset(SynthSpec(n=357))
    fa = stratified_group_kfold(records, 5, 17)
    assert sorted(fa.fold_sizes(records)) == [71, 71, 71, 72, 72]
    hist = fa.bin_histograms(records)
    glob = hist.sum(axis=0) / 5
    assert (np.abs(hist - glob) <= 2).all()


# -- augmentation --------------------------------------------------------------

def _view(seed):
    return RngStream(seed).random((12, 12, 3))


def test_augment_identical_views_identical_outputs():
    v = _view(0)
    for s in range(10):
        l, r, p = augment_pair(v, v.copy(), AugmentPolicy(), RngStream(s))
        assert np.array_equal(l, r)


def test_augment_noop_policy():
    v, w = _view(1), _view(2)
    l, r, _ = augment_pair(v, w, AugmentPolicy(0.0, 0.0, 0.0, 0.0), RngStream(4))
    assert np.array_equal(l, v) and np.array_equal(r, w)


def test_augment_shared_draw():
    rng = RngStream(11)
    p = draw_params(AugmentPolicy(), RngStream(11))
    _, _, used = augment_pair(_view(1), _view(2), AugmentPolicy(), rng)
    assert used == p


def test_augment_ranges():
    pol = AugmentPolicy()
    for s in range(200):
        p = draw_params(pol, RngStream(s))
        assert abs(p.angle) <= 15 and abs(p.brightness) <= 0.2 and abs(p.contrast) <= 0.2


def test_rotation_near_inverse():
    yy, xx = np.mgrid[0:32, 0:32] / 31.0
    img = np.stack([0.5 + 0.4 * np.sin(3 * xx), 0.5 + 0.4 * np.cos(2 * yy), 0.5 * (xx + yy)], -1)
    there = apply_params(img, AugmentParams(angle=15.0))
    back = apply_params(there, AugmentParams(angle=-15.0))
    core = (slice(8, 24), slice(8, 24))
    assert np.abs(back[core] - img[core]).max() < 0.02


def test_flip_and_clip():
    v = _view(3)
    assert np.array_equal(apply_params(v, AugmentParams(flip=True)), v[:, ::-1])
    bright = apply_params(np.full((4, 4, 3), 0.95), AugmentParams(brightness=0.2))
    assert bright.max() <= 1.0


# -- synthetic generator ---------------------------------------------------------

def test_synth_composition_and_determinism(tmp_path):
    spec = SynthSpec(n=60, height=16, width=32)
    records, images = synth_dataset(spec)
    for r in records:
        assert r.targets.composition_errors() == []
        assert r.targets.gdm > 0 and r.targets.dry_total > 0
    a = write_synth(spec, tmp_path / "a")
    b = write_synth(spec, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert load_manifest(a) == records


def test_synth_clover_zero_rate():
    records, _ = synth_dataset(SynthSpec(n=1000, height=8, width=16))
    rate = np.mean([r.targets.dry_clover == 0 for r in records])
    assert abs(rate - 0.378) <= 0.03


def test_synth_pixel_oracle_recovers_targets():
    spec = SynthSpec(n=80, height=16, width=32, boundary_weight=1.5)
    records, images = synth_dataset(spec)
    truth = target_matrix(records)
    pred = np.array([targets_from_labels(count_classes(images[r.image_id]), spec) for r in records])
    for j in range(3):
        assert r2(np.log1p(pred[:, j]), np.log1p(truth[:, j])) == 1.0


def test_synth_right_skew():
    from scipy.stats import skew
    records, _ = synth_dataset(SynthSpec(n=400, height=8, width=16))
    assert skew(target_matrix(records)[:, 4]) > 0


def test_synth_metadata_strength():
    from pasturefuse.metrics import spearman
    off, _ = synth_dataset(SynthSpec(n=200, height=8, width=16, metadata_strength=0.0))
    on, _ = synth_dataset(SynthSpec(n=200, height=8, width=16, metadata_strength=1.0))
    rho = lambda recs: spearman([r.meta.height for r in recs], [r.targets.dry_total for r in recs])
    assert rho(on) > 0.99 and abs(rho(off)) < 0.2
