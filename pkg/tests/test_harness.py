from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from angiocorr import harness
from angiocorr import dataset as ds_mod
from angiocorr.curves import fit_bezier
from angiocorr.errors import (
    DatasetNotFound,
    ManifestMissing,
    MissingModel,
    SchemaVersionMismatch,
)


@pytest.fixture()
def ds(dataset_1subject):
    return ds_mod.load_dataset(dataset_1subject)


# --- dataset handle -----------------------------------------------------------

def test_load_dataset_indexes_126_views(ds):
    assert len(ds.view_ids()) == 126
    assert ds.image_px == 128
    ds.validate_sample(seed=0)


def test_load_dataset_missing_manifest(tmp_path):
    with pytest.raises(ManifestMissing):
        ds_mod.load_dataset(tmp_path)
    with pytest.raises(DatasetNotFound):
        ds_mod.load_dataset(tmp_path / "nope")


def test_load_dataset_schema_version(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(SchemaVersionMismatch):
        ds_mod.load_dataset(tmp_path)


def test_corrupt_labels_reports_path(ds):
    path = ds.root / "subject_000" / "lca" / "00.labels.json"
    original = path.read_text()
    try:
        path.write_text("{broken json")
        with pytest.raises(DatasetNotFound) as err:
            ds.load_labels(0, "lca", 0)
        assert "00.labels.json" in str(err.value)
    finally:
        path.write_text(original)


def test_labels_round_trip_exact(ds, dataset_1subject):
    # coordinates written by make_dataset load back bit-identically
    from angiocorr import geometry, phantom

    manifest = json.loads((dataset_1subject / "manifest.json").read_text())
    subject_seed = manifest["subjects"][0]["seed"]
    tree = phantom.generate_tree(
        phantom.PhantomConfig(seed=subject_seed * 2, side="lca")
    )
    view_rec = manifest["views"][7]
    geo = geometry.GeometryConfig().scaled(128)
    view = geometry.build_view(
        geometry.Angulation(view_rec["alpha_deg"], view_rec["beta_deg"]), geo
    )
    fresh = phantom.project_labels(tree, view)
    loaded = ds.load_labels(0, "lca", 7)
    for k in fresh.polylines:
        np.testing.assert_array_equal(loaded.polylines[k], fresh.polylines[k])


def test_checksum_verification(ds):
    assert ds.verify_checksums() == []
    path = ds.root / "subject_000" / "lca" / "01.camera.json"
    original = path.read_bytes()
    try:
        path.write_bytes(original + b" ")
        failures = ds.verify_checksums()
        assert any("01.camera.json" in f for f in failures)
    finally:
        path.write_bytes(original)


# --- eval pairs ------------------------------------------------------------------

def test_make_eval_pairs_counts_and_determinism(ds):
    pairs = ds_mod.make_eval_pairs(ds, seed=3, split="test")
    assert len(pairs) == 126  # one subject, both sides, every view once as ref
    assert all(p.ref_view != p.tgt_view for p in pairs)
    again = ds_mod.make_eval_pairs(ds, seed=3, split="test")
    assert [(p.ref_view, p.tgt_view) for p in again] == [
        (p.ref_view, p.tgt_view) for p in pairs
    ]
    assert any(p.angle_deg > 50 for p in pairs)


# --- evaluate_points ---------------------------------------------------------------

def test_oracle_stub_all_zero_table(ds):
    pairs = ds_mod.make_eval_pairs(ds, seed=1)[:12]
    table = harness.evaluate_points(
        ds, pairs, harness.oracle_point_method, None, max_queries=32, seed=0
    )
    assert table.counts_are_cumulative()
    populated = 0
    for (kind, method, b), vals in table.cells.items():
        populated += 1
        assert np.max(np.abs(vals)) == 0.0, (kind, method, b)
    assert populated >= 2 * len(harness.ANGLE_BINS)  # centerline P and C at least


def test_missing_point_method_raises(ds):
    with pytest.raises(MissingModel):
        harness.evaluate_points(ds, [], None, None)


def test_center_stub_matches_direct_computation(ds):
    pairs = ds_mod.make_eval_pairs(ds, seed=2)[:8]
    recorded = []

    def recording_center(sample):
        recorded.append((sample.pair.angle_deg, sample.targets, sample.mm_per_unit))
        return harness.center_point_method(sample)

    table = harness.evaluate_points(
        ds, pairs, recording_center, None, kinds=("centerline",), max_queries=16, seed=5
    )
    for b in harness.ANGLE_BINS:
        expected = [
            np.linalg.norm(t - 0.5, axis=1) * mm
            for angle, t, mm in recorded
            if angle <= b
        ]
        got_mean, _, got_n = table.stats("centerline", "P", b)
        if not expected:
            assert got_n == 0
            continue
        flat = np.concatenate(expected)
        assert got_n == len(flat)
        assert got_mean == pytest.approx(flat.mean(), abs=1e-12)


# --- evaluate_curves -----------------------------------------------------------------

def test_oracle_curve_method_near_zero(ds):
    pairs = ds_mod.make_eval_pairs(ds, seed=4)[:3]
    table = harness.evaluate_curves(
        ds,
        pairs,
        harness.oracle_point_method,
        {10: harness.oracle_curve_method, 20: harness.oracle_curve_method},
        max_windows=6,
        seed=0,
    )
    assert table.sizes == (10, 20)
    assert table.p2p_mm == pytest.approx(0.0, abs=1e-9)
    for n in (10, 20):
        assert table.chamfer_mm[n] < 0.2  # fit residual only
        assert table.endpoint_mm[n] < 0.05  # endpoints interpolated by the fit
        assert table.refined_mm[n] < table.chamfer_mm[n] + 0.5


def test_folded_curve_flagged(ds):
    pairs = ds_mod.make_eval_pairs(ds, seed=6)[:2]

    def folded(sample, ref_windows, tgt_windows):
        out = []
        for w in tgt_windows:
            mid = w[len(w) // 2]
            # out-and-back sweep: covers the segment, endpoints at the middle
            p1 = mid + 2.5 * (w[0] - mid)
            p2 = mid + 2.5 * (w[-1] - mid)
            out.append(np.stack([mid, p1, p2, mid]))
        return np.stack(out)

    table = harness.evaluate_curves(
        ds, pairs, harness.oracle_point_method, {10: folded}, max_windows=6, seed=0
    )
    assert table.fold_flags[10] > 0


def test_c2cr_short_branch_falls_back_to_p2p(ds):
    from angiocorr.corrmodel import CorrespondenceModel, ModelConfig
    from angiocorr.corrmodel.infer import Predictor

    predictor = Predictor(
        p2p=CorrespondenceModel(ModelConfig.tiny("p2p"), seed=0),
        c2c=CorrespondenceModel(ModelConfig.tiny("c2c", waypoint_n=10), seed=0),
    )
    method = harness.make_c2cr_method(predictor)
    rng = np.random.default_rng(0)
    short = np.sort(rng.uniform(0.2, 0.8, (5, 2)), axis=0)  # < waypoint size
    long = np.sort(rng.uniform(0.2, 0.8, (30, 2)), axis=0)
    sample = harness.EvalSample(
        pair=ds_mod.make_eval_pairs(ds, seed=0)[0],
        ref_img=rng.uniform(0, 1, (128, 128)),
        tgt_img=rng.uniform(0, 1, (128, 128)),
        queries=np.stack([short[2], long[15]]),
        targets=np.zeros((2, 2)),
        query_ids=np.array([[0, 2], [1, 15]]),
        ref_polylines={0: short, 1: long},
        tgt_polylines={0: short, 1: long},
        mm_per_unit=128 * 2.32,
        pair_key=("t", 0),
    )
    refined, fallback = method(sample)
    assert fallback.tolist() == [True, False]
    raw = predictor.predict_points(
        ds_mod.pool_image(sample.ref_img, 32),
        ds_mod.pool_image(sample.tgt_img, 32),
        sample.queries,
    )
    np.testing.assert_array_equal(refined[0], raw[0])  # fallback kept the P2P point


def test_window_around_clamps():
    assert harness.window_around(30, 0, 10) == (0, 10)
    assert harness.window_around(30, 29, 10) == (20, 30)
    assert harness.window_around(30, 15, 10) == (10, 20)
    assert harness.window_around(8, 4, 10) is None


# --- report ------------------------------------------------------------------------------

def _small_tables(ds):
    pairs = ds_mod.make_eval_pairs(ds, seed=7)[:6]
    table = harness.evaluate_points(
        ds, pairs, harness.center_point_method, None, max_queries=8, seed=0
    )
    return [table]


def test_emit_report_deterministic(ds, tmp_path):
    tables = _small_tables(ds)
    a = harness.emit_report(tables, tmp_path / "r1.md", fmt="markdown")
    b = harness.emit_report(tables, tmp_path / "r2.md", fmt="markdown")
    assert (tmp_path / "r1.md").read_bytes() == (tmp_path / "r2.md").read_bytes()
    assert a == b
    for b_ in harness.ANGLE_BINS:
        assert f"≤{int(b_)}°" in a


def test_emit_report_csv_round_trip(ds, tmp_path):
    tables = _small_tables(ds)
    text = harness.emit_report(tables, None, fmt="csv")
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    assert header[:3] == ["statistic", "query", "method"]
    for row in rows[1:]:
        if not row:
            continue
        for cell in row[3:]:
            if cell:
                reparsed = f"{float(cell):.2f}"
                assert reparsed == cell


def test_pool_image_average():
    img = np.arange(16, dtype=float).reshape(4, 4)
    pooled = ds_mod.pool_image(img, 2)
    np.testing.assert_allclose(
        pooled, [[img[:2, :2].mean(), img[:2, 2:].mean()],
                 [img[2:, :2].mean(), img[2:, 2:].mean()]]
    )
