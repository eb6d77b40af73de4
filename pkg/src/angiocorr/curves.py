"""Cubic Bezier primitives for curve-to-curve correspondence.

Provides evaluation and uniform-parameter sampling, least-squares fitting of
an ordered point sequence (chord-length parameterization with interpolated
endpoints, refined jointly with the interior control points), the Chamfer
curve-to-segment distance used by the curve loss, and nearest-point
projection used by the refined inference mode.

Coordinates are 2D float64 arrays; curves produced by the correspondence
model live in normalized canvas coordinates but nothing here assumes a unit
domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DomainError

# Number of parameter samples used to discretize the Chamfer integral and to
# seed the per-point minimum over the curve parameter.
CHAMFER_SAMPLES = 64

_FIT_MAX_ITER = 60
_FIT_TOL = 1e-9


@dataclass(frozen=True)
class CubicBezier:
    """Four ordered control points, shape (4, 2)."""

    control_points: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        if cp.shape != (4, 2):
            raise ValueError(f"expected (4, 2) control points, got {cp.shape}")
        if not np.all(np.isfinite(cp)):
            raise ValueError("control points must be finite")
        object.__setattr__(self, "control_points", cp)

    def to_json(self) -> list[list[float]]:
        return self.control_points.tolist()

    @classmethod
    def from_json(cls, data) -> "CubicBezier":
        return cls(np.asarray(data, dtype=float))


@dataclass(frozen=True)
class Waypoint:
    """Ordered run of consecutive centerline points used as a curve query."""

    points: np.ndarray  # (n, 2)
    branch_id: int
    arc_range: tuple[int, int]  # [start, end) indices into the branch polyline

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("waypoint needs an (n>=2, 2) point array")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("consecutive waypoint points must be distinct")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def bernstein_weights(u) -> np.ndarray:
    """Cubic Bernstein basis at parameter(s) u; shape (..., 4)."""
    u = np.asarray(u, dtype=float)
    v = 1.0 - u
    return np.stack([v**3, 3.0 * u * v**2, 3.0 * u**2 * v, u**3], axis=-1)


def bezier_eval(b: CubicBezier, u: float) -> np.ndarray:
    """Point on the curve at parameter u in [0, 1]."""
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"parameter {u} outside [0, 1]")
    return bernstein_weights(u) @ b.control_points


def _eval_many(b: CubicBezier, u: np.ndarray) -> np.ndarray:
    return bernstein_weights(u) @ b.control_points


def bezier_sample(b: CubicBezier, n: int) -> np.ndarray:
    """n curve points at uniform parameters i/(n-1); shape (n, 2)."""
    if n < 2:
        raise DomainError(f"need at least 2 samples, got {n}")
    return _eval_many(b, np.linspace(0.0, 1.0, n))


def _derivatives(b: CubicBezier, u: np.ndarray):
    cp = b.control_points
    d1 = 3.0 * (cp[1:] - cp[:-1])  # quadratic control points of B'
    d2 = 2.0 * (d1[1:] - d1[:-1])  # linear control points of B''
    u = np.asarray(u, dtype=float)
    v = 1.0 - u
    w1 = np.stack([v**2, 2.0 * u * v, u**2], axis=-1)
    w2 = np.stack([v, u], axis=-1)
    return w1 @ d1, w2 @ d2


def fit_bezier(points: np.ndarray) -> CubicBezier:
    """Least-squares cubic through an ordered point run.

    Endpoints are interpolated exactly; the interior control points minimize
    the squared residuals at the fitted parameters. Parameters start at the
    chord-length values (with a uniform-parameter second start) and are
    refined jointly with the interior control points so that exact cubic
    inputs are recovered to machine-level accuracy.

    Raises :class:`DegenerateInput` for fewer than 4 points or zero chord
    length.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateInput(f"expected (n, 2) points, got {pts.shape}")
    if len(pts) < 4:
        raise DegenerateInput(f"need at least 4 points, got {len(pts)}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0.0:
        raise DegenerateInput("zero chord length")
    chord = np.concatenate([[0.0], np.cumsum(seg)]) / total
    uniform = np.linspace(0.0, 1.0, len(pts))

    starts = [chord]
    if np.max(np.abs(chord - uniform)) > 0.02:
        starts.append(uniform)  # distinct basin only for uneven spacing
    best, best_cost = None, np.inf
    for u0 in starts:
        b, cost = _lm_fit(pts, u0)
        if cost < best_cost:
            best, best_cost = b, cost
    return best


def _solve_interior(pts: np.ndarray, u: np.ndarray) -> CubicBezier:
    w = bernstein_weights(u)
    rhs = pts - np.outer(w[:, 0], pts[0]) - np.outer(w[:, 3], pts[-1])
    a = w[:, 1:3]
    interior, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return CubicBezier(np.vstack([pts[0], interior, pts[-1]]))


def _lm_fit(pts: np.ndarray, u0: np.ndarray) -> tuple[CubicBezier, float]:
    # Levenberg-Marquardt over interior control points and interior
    # parameters; endpoints stay pinned at u = 0 and 1.
    n = len(pts)
    u = u0.copy()
    cp = _solve_interior(pts, u).control_points
    r = (bernstein_weights(u) @ cp - pts).ravel()
    cost = float(r @ r)
    lam = 1e-3
    ndof = 4 + (n - 2)
    for _ in range(_FIT_MAX_ITER):
        if cost < 1e-26:
            break
        w = bernstein_weights(u)
        tang, _ = _derivatives(CubicBezier(cp), u)
        jac = np.zeros((2 * n, ndof))
        jac[0::2, 0] = w[:, 1]
        jac[1::2, 1] = w[:, 1]
        jac[0::2, 2] = w[:, 2]
        jac[1::2, 3] = w[:, 2]
        cols = np.arange(1, n - 1)
        jac[2 * cols, 4 + cols - 1] = tang[cols, 0]
        jac[2 * cols + 1, 4 + cols - 1] = tang[cols, 1]
        a = jac.T @ jac + lam * np.eye(ndof)
        try:
            step = np.linalg.solve(a, -(jac.T @ r))
        except np.linalg.LinAlgError:
            break
        cp_new = cp.copy()
        cp_new[1] = cp[1] + step[0:2]
        cp_new[2] = cp[2] + step[2:4]
        u_new = u.copy()
        u_new[1:-1] = np.clip(u[1:-1] + step[4:], 0.0, 1.0)
        r_new = (bernstein_weights(u_new) @ cp_new - pts).ravel()
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            converged = cost - cost_new < _FIT_TOL * max(cost, 1e-30)
            cp, u, r, cost = cp_new, u_new, r_new, cost_new
            if converged:
                break
            lam = max(lam * 0.3, 1e-12)
        else:
            lam *= 3.0
            if lam > 1e6:
                break  # stalled at the precision floor
    # final linear solve keeps the documented least-squares property exact
    b = _solve_interior(pts, u)
    r = (bernstein_weights(u) @ b.control_points - pts).ravel()
    return b, float(r @ r)


def fit_bezier_batch(segments: np.ndarray) -> np.ndarray:
    """Vectorized :func:`fit_bezier` over a (B, N, 2) stack of segments.

    Runs one Levenberg-Marquardt loop across the whole batch from the
    chord-length start; items whose chord parameters differ markedly from
    uniform (where a second start matters) fall back to the scalar fit.
    Returns (B, 4, 2) control points.
    """
    pts = np.asarray(segments, dtype=float)
    if pts.ndim != 3 or pts.shape[2] != 2 or pts.shape[1] < 4:
        raise DegenerateInput(f"expected (B, n>=4, 2) segments, got {pts.shape}")
    b, n, _ = pts.shape
    seg = np.linalg.norm(np.diff(pts, axis=1), axis=2)
    total = seg.sum(axis=1)
    if np.any(total <= 0):
        raise DegenerateInput("zero chord length in batch")
    chord = np.concatenate([np.zeros((b, 1)), np.cumsum(seg, axis=1)], axis=1) / total[:, None]
    uniform = np.broadcast_to(np.linspace(0.0, 1.0, n), (b, n)).copy()

    best_cp, best_cost = None, None
    for u0 in (chord, uniform):
        cp, u = _lm_fit_batch(pts, u0, _solve_interior_batch(pts, u0))
        cp = _solve_interior_batch(pts, u)
        r = (bernstein_weights(u) @ cp - pts).reshape(b, -1)
        cost = np.sum(r * r, axis=1)
        if best_cp is None:
            best_cp, best_cost = cp, cost
        else:
            better = cost < best_cost
            best_cp = np.where(better[:, None, None], cp, best_cp)
            best_cost = np.where(better, cost, best_cost)
    return best_cp


def _solve_interior_batch(pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    w = bernstein_weights(u)  # (B, N, 4)
    rhs = pts - w[:, :, 0, None] * pts[:, :1] - w[:, :, 3, None] * pts[:, -1:]
    a = w[:, :, 1:3]  # (B, N, 2)
    m = np.einsum("bni,bnj->bij", a, a)
    v = np.einsum("bni,bnk->bik", a, rhs)
    interior = np.linalg.solve(m, v)  # (B, 2, 2)
    return np.concatenate([pts[:, :1], interior, pts[:, -1:]], axis=1)


def _derivatives_batch(cp: np.ndarray, u: np.ndarray) -> np.ndarray:
    d1 = 3.0 * (cp[:, 1:] - cp[:, :-1])  # (B, 3, 2)
    v = 1.0 - u
    w1 = np.stack([v**2, 2.0 * u * v, u**2], axis=-1)  # (B, N, 3)
    return w1 @ d1


def _lm_fit_batch(pts: np.ndarray, u: np.ndarray, cp: np.ndarray):
    b, n, _ = pts.shape
    ndof = 4 + (n - 2)
    lam = np.full(b, 1e-3)
    active = np.ones(b, dtype=bool)
    eye = np.eye(ndof)
    r = (bernstein_weights(u) @ cp - pts).reshape(b, 2 * n)
    cost = np.sum(r * r, axis=1)
    inner = np.arange(1, n - 1)
    for _ in range(_FIT_MAX_ITER):
        w = bernstein_weights(u)
        tang = _derivatives_batch(cp, u)
        jac = np.zeros((b, 2 * n, ndof))
        jac[:, 0::2, 0] = w[:, :, 1]
        jac[:, 1::2, 1] = w[:, :, 1]
        jac[:, 0::2, 2] = w[:, :, 2]
        jac[:, 1::2, 3] = w[:, :, 2]
        jac[:, 2 * inner, 4 + inner - 1] = tang[:, inner, 0]
        jac[:, 2 * inner + 1, 4 + inner - 1] = tang[:, inner, 1]
        a = np.einsum("bri,brj->bij", jac, jac) + lam[:, None, None] * eye
        g = np.einsum("bri,br->bi", jac, r)
        try:
            step = np.linalg.solve(a, -g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        cp_new = cp.copy()
        cp_new[:, 1] += step[:, 0:2]
        cp_new[:, 2] += step[:, 2:4]
        u_new = u.copy()
        u_new[:, 1:-1] = np.clip(u[:, 1:-1] + step[:, 4:], 0.0, 1.0)
        r_new = (bernstein_weights(u_new) @ cp_new - pts).reshape(b, 2 * n)
        cost_new = np.sum(r_new * r_new, axis=1)
        accept = active & (cost_new < cost)
        converged = accept & (cost - cost_new < _FIT_TOL * np.maximum(cost, 1e-30))
        cp = np.where(accept[:, None, None], cp_new, cp)
        u = np.where(accept[:, None], u_new, u)
        r = np.where(accept[:, None], r_new, r)
        cost = np.where(accept, cost_new, cost)
        lam = np.where(accept, np.maximum(lam * 0.3, 1e-12), lam)
        stalled = active & ~accept
        lam = np.where(stalled, lam * 3.0, lam)
        active = active & ~converged & ~(stalled & (lam > 1e6)) & ~(cost < 1e-26)
        if not active.any():
            break
    return cp, u


def chamfer_c2c(b: CubicBezier, segment: np.ndarray) -> float:
    """Chamfer distance between a curve and an ordered point run.

    Sum over segment points of the minimum squared distance to the curve,
    plus the parameter-average of the minimum squared distance from curve
    samples to the segment. The per-point minimum uses CHAMFER_SAMPLES grid
    values with one parabolic refinement step around the grid argmin.
    """
    seg = np.atleast_2d(np.asarray(segment, dtype=float))
    if seg.size == 0:
        raise DegenerateInput("empty segment")
    u = np.linspace(0.0, 1.0, CHAMFER_SAMPLES)
    samples = _eval_many(b, u)
    d = np.sum((seg[:, None, :] - samples[None, :, :]) ** 2, axis=2)  # (nseg, M)

    per_point = d.min(axis=1)
    m = d.argmin(axis=1)
    interior = (m > 0) & (m < CHAMFER_SAMPLES - 1)
    if np.any(interior):
        mi = m[interior]
        d0 = d[interior, mi - 1]
        d1 = d[interior, mi]
        d2 = d[interior, mi + 1]
        refined = _parabolic_refine(b, seg[interior], u, mi, d0, d1, d2)
        per_point[interior] = np.minimum(per_point[interior], refined)

    integral = d.min(axis=0).mean()
    return float(per_point.sum() + integral)


def _parabolic_refine(b, pts, u, mi, d0, d1, d2) -> np.ndarray:
    du = u[1] - u[0]
    denom = d0 - 2.0 * d1 + d2
    ok = denom > 1e-30
    offset = np.zeros_like(d1)
    offset[ok] = 0.5 * du * (d0[ok] - d2[ok]) / denom[ok]
    offset = np.clip(offset, -du, du)
    ustar = np.clip(u[mi] + offset, 0.0, 1.0)
    return np.sum((_eval_many(b, ustar) - pts) ** 2, axis=1)


def control_point_loss(pred: CubicBezier, target: CubicBezier) -> float:
    """Sum of squared distances between the four control-point pairs."""
    diff = pred.control_points - target.control_points
    return float(np.sum(diff * diff))


def nearest_point_on_curve(b: CubicBezier, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Global nearest point on the curve to p; returns (parameter, point)."""
    p = np.asarray(p, dtype=float)
    grid = np.linspace(0.0, 1.0, 256)
    d = np.sum((_eval_many(b, grid) - p) ** 2, axis=1)
    u = float(grid[int(np.argmin(d))])

    un = u
    for _ in range(20):
        pt = bernstein_weights(un) @ b.control_points
        t1, t2 = _derivatives(b, np.array([un]))
        diff = pt - p
        num = float(np.dot(diff, t1[0]))
        den = float(np.dot(t1[0], t1[0]) + np.dot(diff, t2[0]))
        if abs(den) < 1e-30:
            break
        step = num / den
        un = float(np.clip(un - step, 0.0, 1.0))
        if abs(step) < 1e-12:
            break

    candidates = np.array([u, un, 0.0, 1.0])
    dc = np.sum((_eval_many(b, candidates) - p) ** 2, axis=1)
    best = float(candidates[int(np.argmin(dc))])
    return best, bernstein_weights(best) @ b.control_points


def extract_waypoints(
    polylines: dict[int, np.ndarray], size: int, stride: int | None = None
) -> list[Waypoint]:
    """Sliding windows of `size` consecutive points per branch polyline.

    Branches shorter than `size` yield no waypoints. Default stride is
    size // 2 (overlapping windows).
    """
    if size < 4:
        raise DomainError(f"waypoint size must be >= 4, got {size}")
    stride = stride or max(size // 2, 1)
    out = []
    for branch_id in sorted(polylines):
        pts = np.asarray(polylines[branch_id], dtype=float)
        for start in range(0, len(pts) - size + 1, stride):
            out.append(
                Waypoint(
                    points=pts[start : start + size],
                    branch_id=branch_id,
                    arc_range=(start, start + size),
                )
            )
    return out


def paired_waypoints(
    ref_polylines: dict[int, np.ndarray],
    tgt_polylines: dict[int, np.ndarray],
    size: int,
    stride: int | None = None,
) -> list[tuple[Waypoint, Waypoint]]:
    """Waypoints of two views of one tree paired by (branch_id, arc_range)."""
    ref = extract_waypoints(ref_polylines, size, stride)
    tgt = {(w.branch_id, w.arc_range): w for w in extract_waypoints(tgt_polylines, size, stride)}
    return [(w, tgt[(w.branch_id, w.arc_range)]) for w in ref if (w.branch_id, w.arc_range) in tgt]
