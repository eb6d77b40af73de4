from __future__ import annotations

import numpy as np
import pytest

from angiocorr import phantom


@pytest.fixture(scope="session")
def dataset_1subject(tmp_path_factory):
    """One-subject dataset at 128 px, shared across harness/service tests."""
    out = tmp_path_factory.mktemp("data") / "ds1"
    cfg = phantom.DatasetConfig(
        out_dir=str(out),
        n_subjects=1,
        seed=123,
        image_px=128,
        split_counts=(0, 0, 1),
    )
    phantom.make_dataset(cfg)
    return out


def straight_tube_tree(x_mm: float = 3.0, radius: float = 1.0) -> phantom.CoronaryTree:
    """Single straight branch along world z, used by rendering tests."""
    z = np.arange(-40.0, 40.0 + 1e-9, 0.5)
    pts = np.stack([np.full_like(z, x_mm), np.zeros_like(z), z], axis=1)
    branch = phantom.Branch(
        id=0, parent_id=None, attach_index=0, points=pts, radii=np.full(len(z), radius)
    )
    return phantom.CoronaryTree(branches=[branch], side="lca", stenoses=[], seed=0)


def make_overlap_phantom():
    """Adversarial two-branch scene: an arc whose chord is bridged by a
    second branch in the frontal view, while the branches separate in an
    oblique view. Returns (tree, arc_points, view1, view2, seed_a, seed_b).

    The frontal geodesic between the arc endpoints provably rides the
    bridging branch (chord ~40 mm vs arc ~63 mm at equal darkness)."""
    from angiocorr.geometry import Angulation, GeometryConfig, build_view, project_many

    radius_mm = 20.0
    n_arc = int(round(np.pi * radius_mm / 0.5))
    theta = np.linspace(0.0, np.pi, n_arc + 1)
    arc = np.stack(
        [radius_mm * np.cos(theta), np.zeros_like(theta), -radius_mm * np.sin(theta)],
        axis=1,
    )
    n_line = int(round(56.0 / 0.5))
    x = np.linspace(-28.0, 28.0, n_line + 1)
    line = np.stack([x, np.full_like(x, 12.0), np.zeros_like(x)], axis=1)
    tree = phantom.CoronaryTree(
        branches=[
            phantom.Branch(
                id=0, parent_id=None, attach_index=0, points=arc,
                radii=np.full(len(arc), 1.0),
            ),
            phantom.Branch(
                id=1, parent_id=None, attach_index=0, points=line,
                radii=np.full(len(line), 1.0),
            ),
        ],
        side="lca",
        stenoses=[],
        seed=0,
    )
    geo = GeometryConfig()
    view1 = build_view(Angulation(0.0, 0.0), geo)
    view2 = build_view(Angulation(40.0, 30.0), geo)
    arc_pix = project_many(view1, arc)
    seed_a = tuple(np.rint(arc_pix[0]).astype(int))
    seed_b = tuple(np.rint(arc_pix[-1]).astype(int))
    return tree, arc, view1, view2, seed_a, seed_b


def hausdorff_to_points(path: np.ndarray, points: np.ndarray) -> float:
    """Directed Hausdorff distance from path pixels to a point set."""
    d = np.sqrt(((path[:, None, :] - points[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return float(d.max())
