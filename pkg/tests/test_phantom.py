from __future__ import annotations

import json
from collections import Counter

import numpy as np
import pytest

from angiocorr import geometry, phantom
from angiocorr.errors import InvalidConfig, OutOfFrustum
from angiocorr.geometry import Angulation, GeometryConfig

from conftest import straight_tube_tree


def test_generate_tree_deterministic():
    cfg = phantom.PhantomConfig(seed=7, side="lca")
    t1 = phantom.generate_tree(cfg)
    t2 = phantom.generate_tree(cfg)
    assert len(t1.branches) == len(t2.branches)
    for a, b in zip(t1.branches, t2.branches):
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.radii, b.radii)
    assert [
        (s.branch_id, s.start_index, s.end_index) for s in t1.stenoses
    ] == [(s.branch_id, s.start_index, s.end_index) for s in t2.stenoses]


def test_generate_tree_branch_count_bounds():
    cfg = phantom.PhantomConfig(seed=7, side="lca", depth=4)
    tree = phantom.generate_tree(cfg)
    lo, hi = cfg.branch_bounds
    assert lo <= len(tree.branches) <= hi


def test_generate_tree_invariants_over_seeds():
    for seed in range(25):
        for side in ("lca", "rca"):
            cfg = phantom.PhantomConfig(seed=seed, side=side)
            phantom.check_tree(phantom.generate_tree(cfg), cfg)


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        phantom.PhantomConfig(depth=1)
    with pytest.raises(InvalidConfig):
        phantom.PhantomConfig(depth=6)
    with pytest.raises(InvalidConfig):
        phantom.PhantomConfig(side="left")
    with pytest.raises(InvalidConfig):
        phantom.PhantomConfig(branch_bounds=(5, 2))


def test_render_zero_density_uniform_background():
    tree = straight_tube_tree()
    view = geometry.build_view(Angulation(0.0, 0.0))
    img = phantom.render_view(tree, view, density=0.0)
    assert np.all(img.values == 1.0)


def test_render_straight_tube_band_follows_centerline():
    tree = straight_tube_tree(x_mm=3.0)
    view = geometry.build_view(Angulation(0.0, 0.0))
    img = phantom.render_view(tree, view)
    pix = geometry.project_many(view, tree.branches[0].points)
    col = pix[0, 0]
    np.testing.assert_allclose(pix[:, 0], col, atol=1e-9)  # vertical line
    rows = np.arange(int(pix[:, 1].min()) + 2, int(pix[:, 1].max()) - 1)
    hits = sum(abs(np.argmin(img.values[r]) - col) <= 1.0 for r in rows)
    assert hits / len(rows) >= 0.95


def test_render_attenuation_linear_in_density():
    tree = phantom.generate_tree(phantom.PhantomConfig(seed=3, side="rca"))
    view = geometry.build_view(Angulation(10.0, -20.0), GeometryConfig().scaled(128))
    a1 = phantom.render_attenuation(tree, view, density=1.0)
    a2 = phantom.render_attenuation(tree, view, density=2.0)
    np.testing.assert_allclose(a2, 2.0 * a1, atol=1e-12)


def test_render_out_of_frustum():
    tree = straight_tube_tree()
    shifted = phantom.CoronaryTree(
        branches=[
            phantom.Branch(
                id=0,
                parent_id=None,
                attach_index=0,
                points=tree.branches[0].points + np.array([0.0, 800.0, 0.0]),
                radii=tree.branches[0].radii,
            )
        ],
        side="lca",
        stenoses=[],
        seed=0,
    )
    view = geometry.build_view(Angulation(0.0, 0.0))
    with pytest.raises(OutOfFrustum):
        phantom.render_view(shifted, view)


def test_project_labels_cardinality_and_keys():
    tree = phantom.generate_tree(phantom.PhantomConfig(seed=5, side="lca"))
    view = geometry.build_view(Angulation(20.0, 10.0))
    labels = phantom.project_labels(tree, view)
    assert set(labels.polylines) == {b.id for b in tree.branches}
    for b in tree.branches:
        assert len(labels.polylines[b.id]) == len(b.points)
    assert len(labels.bifurcations) == len(tree.bifurcation_points())
    assert len(labels.stenosis_endpoints) == len(tree.stenoses)


def test_project_labels_epipolar_consistency():
    tree = phantom.generate_tree(phantom.PhantomConfig(seed=11, side="rca"))
    v1 = geometry.build_view(Angulation(30.0, 25.0))
    v2 = geometry.build_view(Angulation(-35.0, -30.0))
    f = geometry.fundamental_matrix(v1, v2)
    l1 = phantom.project_labels(tree, v1)
    l2 = phantom.project_labels(tree, v2)
    for k in l1.polylines:
        res = geometry.epipolar_residuals(f, l1.polylines[k], l2.polylines[k])
        assert np.max(np.abs(res)) <= 1e-6


def test_rendered_vessels_darker_than_background():
    tree = phantom.generate_tree(phantom.PhantomConfig(seed=2, side="lca"))
    view = geometry.build_view(Angulation(0.0, 0.0), GeometryConfig().scaled(128))
    img = phantom.render_view(tree, view)
    labels = phantom.project_labels(tree, view)
    bg = img.values.mean()
    total = dark = 0
    for pts in labels.polylines.values():
        cols = np.clip(np.rint(pts[:, 0]).astype(int), 0, 127)
        rows = np.clip(np.rint(pts[:, 1]).astype(int), 0, 127)
        total += len(pts)
        dark += int(np.sum(img.values[rows, cols] < bg))
    assert dark / total >= 0.95


def test_labels_json_round_trip():
    tree = phantom.generate_tree(phantom.PhantomConfig(seed=4, side="rca"))
    view = geometry.build_view(Angulation(45.0, 0.0))
    labels = phantom.project_labels(tree, view)
    rec = json.loads(json.dumps(labels.to_json()))
    back = phantom.ViewLabels.from_json(rec)
    for k in labels.polylines:
        np.testing.assert_array_equal(back.polylines[k], labels.polylines[k])
    np.testing.assert_array_equal(back.bifurcations, labels.bifurcations)
    np.testing.assert_array_equal(back.bifurcation_ids, labels.bifurcation_ids)
    np.testing.assert_array_equal(back.stenosis_endpoints, labels.stenosis_endpoints)
    np.testing.assert_array_equal(back.stenosis_ids, labels.stenosis_ids)


def test_bifurcation_labels_lie_on_parent_polylines():
    tree = phantom.generate_tree(phantom.PhantomConfig(seed=6, side="lca"))
    view = geometry.build_view(Angulation(-30.0, -35.0))
    labels = phantom.project_labels(tree, view)
    for (bid, idx), pix in zip(labels.bifurcation_ids, labels.bifurcations):
        np.testing.assert_array_equal(labels.polylines[bid][idx], pix)


def test_projection_groups_counts():
    groups = phantom.enumerate_projection_groups()
    assert len(groups) == 63
    counter = Counter(g for g, _ in groups)
    assert counter == {"A": 12, "B": 3, "C": 12, "D": 6, "E": 12, "F": 10, "G": 4, "H": 4}


def test_projection_group_g():
    got = {
        (a.alpha_deg, a.beta_deg)
        for g, a in phantom.enumerate_projection_groups()
        if g == "G"
    }
    assert got == {(45.0, 0.0), (50.0, 0.0), (55.0, 0.0), (60.0, 0.0)}


def test_projection_group_b():
    got = [a for g, a in phantom.enumerate_projection_groups() if g == "B"]
    assert len(got) == 3
    assert all(a.beta_deg == -30.0 for a in got)
    assert sorted(a.alpha_deg for a in got) == [-15.0, -10.0, -5.0]


def test_make_dataset_one_subject(dataset_1subject):
    pgms = sorted(dataset_1subject.glob("subject_000/*/*.pgm"))
    assert len(pgms) == 126
    manifest = json.loads((dataset_1subject / "manifest.json").read_text())
    assert manifest["schema_version"] == 1
    assert len(manifest["views"]) == 63
    assert manifest["subjects"][0]["split"] == "test"


def test_make_dataset_regeneration_byte_identical(tmp_path):
    cfgs = [
        phantom.DatasetConfig(
            out_dir=str(tmp_path / name), n_subjects=1, seed=9, image_px=64
        )
        for name in ("a", "b")
    ]
    for cfg in cfgs:
        phantom.make_dataset(cfg)
    files_a = sorted((tmp_path / "a").rglob("*"))
    files_b = sorted((tmp_path / "b").rglob("*"))
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        if fa.is_file():
            assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_split_proportions_for_99_subjects():
    cfg = phantom.DatasetConfig(out_dir="unused", n_subjects=99, seed=1)
    splits = phantom._split_assignment(cfg, np.random.default_rng(0))
    counts = Counter(splits)
    assert counts == {"train": 84, "val": 5, "test": 10}
