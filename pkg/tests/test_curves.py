from __future__ import annotations

import numpy as np
import pytest

from angiocorr.curves import (
    CHAMFER_SAMPLES,
    CubicBezier,
    Waypoint,
    bezier_eval,
    bezier_sample,
    chamfer_c2c,
    control_point_loss,
    extract_waypoints,
    fit_bezier,
    nearest_point_on_curve,
    paired_waypoints,
)
from angiocorr.errors import DegenerateInput, DomainError


def random_curve(rng: np.random.Generator) -> CubicBezier:
    return CubicBezier(rng.uniform(0.0, 1.0, size=(4, 2)))


# --- independent oracles -------------------------------------------------

def chamfer_oracle(b: CubicBezier, segment: np.ndarray, m: int = 10_000) -> float:
    """Plain dense-grid discretization of the curve-to-segment Chamfer."""
    u = np.linspace(0.0, 1.0, m)
    v = 1.0 - u
    w = np.stack([v**3, 3 * u * v**2, 3 * u**2 * v, u**3], axis=-1)
    samples = w @ b.control_points
    seg = np.atleast_2d(segment)
    d = np.sum((seg[:, None, :] - samples[None, :, :]) ** 2, axis=2)
    return float(d.min(axis=1).sum() + d.min(axis=0).mean())


def grid_nearest(b: CubicBezier, p: np.ndarray, m: int = 100_000) -> float:
    u = np.linspace(0.0, 1.0, m)
    v = 1.0 - u
    w = np.stack([v**3, 3 * u * v**2, 3 * u**2 * v, u**3], axis=-1)
    samples = w @ b.control_points
    return float(np.min(np.linalg.norm(samples - p, axis=1)))


# --- evaluation / sampling -----------------------------------------------

def test_eval_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    b = random_curve(rng)
    cp = b.control_points
    np.testing.assert_allclose(bezier_eval(b, 0.0), cp[0], atol=1e-15)
    np.testing.assert_allclose(bezier_eval(b, 1.0), cp[3], atol=1e-15)
    np.testing.assert_allclose(
        bezier_eval(b, 0.5), (cp[0] + 3 * cp[1] + 3 * cp[2] + cp[3]) / 8.0, atol=1e-15
    )


def test_eval_outside_domain():
    b = random_curve(np.random.default_rng(1))
    with pytest.raises(DomainError):
        bezier_eval(b, -0.01)
    with pytest.raises(DomainError):
        bezier_eval(b, 1.01)


def test_eval_collinear_equals_linear_interpolation():
    p0 = np.array([0.2, -0.3])
    p3 = np.array([1.4, 0.9])
    cp = np.stack([p0 + t * (p3 - p0) for t in (0.0, 1 / 3, 2 / 3, 1.0)])
    b = CubicBezier(cp)
    for u in np.linspace(0.0, 1.0, 100):
        np.testing.assert_allclose(bezier_eval(b, u), p0 + u * (p3 - p0), atol=1e-12)


def test_sample_endpoints_and_degenerate():
    b = random_curve(np.random.default_rng(2))
    two = bezier_sample(b, 2)
    np.testing.assert_allclose(two, b.control_points[[0, 3]], atol=1e-15)
    flat = CubicBezier(np.tile([0.3, 0.4], (4, 1)))
    np.testing.assert_allclose(bezier_sample(flat, 10), np.tile([0.3, 0.4], (10, 1)))
    with pytest.raises(DomainError):
        bezier_sample(b, 1)


# --- fitting ---------------------------------------------------------------

def test_fit_round_trip_on_exact_cubics():
    rng = np.random.default_rng(3)
    for _ in range(20):
        b = random_curve(rng)
        refit = fit_bezier(bezier_sample(b, 10))
        assert np.max(np.abs(refit.control_points - b.control_points)) <= 1e-6


def test_fit_collinear_points():
    p0 = np.array([0.0, 0.0])
    d = np.array([2.0, 1.0])
    pts = np.stack([p0 + t * d for t in np.linspace(0, 1, 12) ** 1.3])
    b = fit_bezier(pts)
    n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    assert np.max(np.abs((b.control_points - p0) @ n)) <= 1e-9


def test_fit_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        fit_bezier(np.zeros((3, 2)))
    with pytest.raises(DegenerateInput):
        fit_bezier(np.tile([1.0, 1.0], (6, 1)))


def test_fit_batch_matches_scalar_and_round_trips():
    from angiocorr.curves import fit_bezier_batch

    rng = np.random.default_rng(13)
    curves = [random_curve(rng) for _ in range(12)]
    samples = np.stack([bezier_sample(c, 10) for c in curves])
    refit = fit_bezier_batch(samples)
    for c, cp in zip(curves, refit):
        assert np.max(np.abs(cp - c.control_points)) <= 1e-6

    # tame waypoint-like windows: agree with the scalar fit
    t = np.linspace(0, 1, 10)
    tame = np.stack(
        [np.stack([t + 0.02 * rng.normal(size=10) * 0, np.sin(2 * t + p)], axis=1)
         for p in rng.uniform(0, 3, 6)]
    )
    batch = fit_bezier_batch(tame)
    for i in range(len(tame)):
        single = fit_bezier(tame[i]).control_points
        assert np.max(np.abs(batch[i] - single)) <= 1e-6


def test_fit_batch_degenerate():
    from angiocorr.curves import fit_bezier_batch

    with pytest.raises(DegenerateInput):
        fit_bezier_batch(np.zeros((2, 3, 2)))
    flat = np.tile([0.5, 0.5], (1, 6, 1))
    with pytest.raises(DegenerateInput):
        fit_bezier_batch(flat)


def test_fit_rigid_invariance():
    rng = np.random.default_rng(4)
    pts = bezier_sample(random_curve(rng), 15) + rng.normal(0, 0.01, (15, 2))
    theta = 0.7
    r = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    t = np.array([3.0, -1.5])
    direct = fit_bezier(pts @ r.T + t)
    moved = fit_bezier(pts).control_points @ r.T + t
    assert np.max(np.abs(direct.control_points - moved)) <= 1e-9


# --- chamfer ---------------------------------------------------------------

def test_chamfer_self_distance():
    b = random_curve(np.random.default_rng(5))
    assert chamfer_c2c(b, bezier_sample(b, CHAMFER_SAMPLES)) <= 1e-6


def test_chamfer_hand_case():
    degenerate = CubicBezier(np.zeros((4, 2)))
    segment = np.array([[0.0, 0.0], [1.0, 0.0]])
    value = chamfer_c2c(degenerate, segment)
    assert abs(value - 1.0) <= 1e-3
    assert abs(chamfer_oracle(degenerate, segment) - 1.0) <= 1e-9


def test_chamfer_translation_invariance():
    rng = np.random.default_rng(6)
    b = random_curve(rng)
    seg = rng.uniform(0, 1, size=(7, 2))
    shift = np.array([2.5, -1.25])
    v0 = chamfer_c2c(b, seg)
    v1 = chamfer_c2c(CubicBezier(b.control_points + shift), seg + shift)
    assert abs(v0 - v1) <= 1e-9


def test_chamfer_matches_dense_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        b = random_curve(rng)
        seg = rng.uniform(0, 1, size=(10, 2))
        got = chamfer_c2c(b, seg)
        want = chamfer_oracle(b, seg)
        assert abs(got - want) <= 2e-3 * max(1.0, want)


# --- control point loss -----------------------------------------------------

def test_control_point_loss_cases():
    b = random_curve(np.random.default_rng(8))
    assert control_point_loss(b, b) == 0.0
    shifted = CubicBezier(b.control_points + [0.1, 0.0])
    assert abs(control_point_loss(shifted, b) - 0.04) <= 1e-12


def test_control_point_loss_matches_brute_force():
    rng = np.random.default_rng(9)
    a, b = random_curve(rng), random_curve(rng)
    want = sum(
        float(np.sum((a.control_points[i] - b.control_points[i]) ** 2))
        for i in range(4)
    )
    assert abs(control_point_loss(a, b) - want) <= 1e-12


# --- nearest point -----------------------------------------------------------

def test_nearest_point_on_curve_point_on_curve():
    b = random_curve(np.random.default_rng(10))
    p = bezier_eval(b, 0.3)
    u, pt = nearest_point_on_curve(b, p)
    assert np.linalg.norm(pt - p) <= 1e-6
    assert abs(u - 0.3) <= 1e-5


def test_nearest_point_perpendicular_foot():
    cp = np.array([[0.0, 0.0], [1 / 3, 0.0], [2 / 3, 0.0], [1.0, 0.0]])
    u, pt = nearest_point_on_curve(CubicBezier(cp), np.array([0.5, 1.0]))
    np.testing.assert_allclose(pt, [0.5, 0.0], atol=1e-9)
    assert abs(u - 0.5) <= 1e-9


def test_nearest_point_matches_grid_search():
    rng = np.random.default_rng(11)
    for _ in range(20):
        b = random_curve(rng)
        p = rng.uniform(-0.5, 1.5, size=2)
        _, pt = nearest_point_on_curve(b, p)
        assert np.linalg.norm(pt - p) <= grid_nearest(b, p) + 1e-4


def test_nearest_point_beats_coarse_grid():
    rng = np.random.default_rng(12)
    b = random_curve(rng)
    p = rng.uniform(0, 1, size=2)
    _, pt = nearest_point_on_curve(b, p)
    coarse = grid_nearest(b, p, m=1000)
    assert np.linalg.norm(pt - p) <= coarse + 1e-12


# --- waypoints ----------------------------------------------------------------

def _polyline(n: int, offset: float = 0.0) -> np.ndarray:
    t = np.arange(n, dtype=float)
    return np.stack([t * 0.01 + offset, np.sin(t * 0.1)], axis=1)


def test_extract_waypoints_window_arithmetic():
    wps = extract_waypoints({0: _polyline(50)}, size=10, stride=5)
    assert len(wps) == 9
    assert wps[0].arc_range == (0, 10)
    assert wps[-1].arc_range == (40, 50)
    assert all(len(w) == 10 for w in wps)


def test_extract_waypoints_short_branch_skipped():
    wps = extract_waypoints({0: _polyline(8), 1: _polyline(25)}, size=10)
    assert all(w.branch_id == 1 for w in wps)


def test_paired_waypoints_share_keys():
    ref = {0: _polyline(30), 1: _polyline(14)}
    tgt = {0: _polyline(30, offset=1.0), 1: _polyline(14, offset=1.0)}
    pairs = paired_waypoints(ref, tgt, size=10)
    assert pairs
    for a, b in pairs:
        assert a.branch_id == b.branch_id
        assert a.arc_range == b.arc_range


def test_waypoint_rejects_duplicate_consecutive_points():
    with pytest.raises(ValueError):
        Waypoint(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), 0, (0, 3))
