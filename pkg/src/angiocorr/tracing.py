"""Vesselness cost maps and one/two-view shortest-path centerline tracing.

The two-view trace combines per-pixel costs: an edge into pixel q costs
``(cost1[q] + w * cost2[corr(q)]) * step_length`` where ``corr`` transfers a
view-1 pixel into view 2 (trained model or the ground-truth projector
below). Correspondence failures fall back to the maximum view-2 cost at that
pixel rather than aborting.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import geometry
from .errors import SeedOutOfBounds
from .geometry import ProjectionView

SQRT2 = float(np.sqrt(2.0))

# 8-connected neighborhood and step lengths
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_STEPLEN = [SQRT2, 1.0, SQRT2, 1.0, 1.0, SQRT2, 1.0, SQRT2]


@dataclass(frozen=True)
class CostMap:
    width: int
    height: int
    costs: np.ndarray  # (height, width), all >= cost_floor
    cost_floor: float

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float)
        if c.shape != (self.height, self.width):
            raise ValueError(f"costs shape {c.shape} != (h={self.height}, w={self.width})")
        if self.cost_floor <= 0 or c.min() < self.cost_floor - 1e-12:
            raise ValueError("costs must be >= cost_floor > 0")
        object.__setattr__(self, "costs", c)


@dataclass(frozen=True)
class TraceResult:
    path: np.ndarray  # (n, 2) integer (x, y) pixels
    total_cost: float
    per_step: np.ndarray  # (n-1, 2) cost contributions (view1, view2) per step


def frangi_vesselness(
    img: np.ndarray, scales=(1.0, 2.0, 3.0, 4.0), beta: float = 0.5
) -> np.ndarray:
    """Multiscale dark-tube vesselness in [0, 1].

    Per scale: scale-normalized Gaussian Hessian, eigenvalues with
    |l1| <= |l2|; response exp(-Rb^2 / 2 beta^2) (1 - exp(-S^2 / 2 c^2))
    where Rb = l1/l2, S is the Frobenius norm and c is half the maximum S of
    the image at that scale. Dark polarity: pixels with l2 <= 0 give 0.
    """
    img = np.asarray(img, dtype=float)
    if not scales:
        raise ValueError("scales must be non-empty")
    best = np.zeros_like(img)
    for sigma in scales:
        if sigma < 0.5:
            raise ValueError(f"scale {sigma} below 0.5 px")
        s2 = sigma * sigma
        hxx = s2 * gaussian_filter(img, sigma, order=(0, 2))
        hyy = s2 * gaussian_filter(img, sigma, order=(2, 0))
        hxy = s2 * gaussian_filter(img, sigma, order=(1, 1))
        half_trace = (hxx + hyy) / 2.0
        root = np.sqrt(((hxx - hyy) / 2.0) ** 2 + hxy * hxy)
        la = half_trace + root
        lb = half_trace - root
        swap = np.abs(la) < np.abs(lb)
        l1 = np.where(swap, la, lb)  # smaller magnitude
        l2 = np.where(swap, lb, la)
        s_norm = np.sqrt(l1 * l1 + l2 * l2)
        c = max(s_norm.max() / 2.0, 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            rb2 = np.where(l2 != 0.0, (l1 / l2) ** 2, 0.0)
        resp = np.exp(-rb2 / (2.0 * beta * beta)) * (1.0 - np.exp(-(s_norm**2) / (2.0 * c * c)))
        resp = np.where(l2 > 0.0, resp, 0.0)  # dark vessels only
        best = np.maximum(best, resp)
    peak = best.max()
    return best / peak if peak > 0 else best


def build_cost(vesselness: np.ndarray, cost_floor: float = 1e-3) -> CostMap:
    """Affine decreasing map: cost = 1 - vesselness + cost_floor."""
    v = np.asarray(vesselness, dtype=float)
    h, w = v.shape
    return CostMap(width=w, height=h, costs=1.0 - v + cost_floor, cost_floor=cost_floor)


def _check_seed(cost: CostMap, seed) -> tuple[int, int]:
    x, y = int(seed[0]), int(seed[1])
    if not (0 <= x < cost.width and 0 <= y < cost.height):
        raise SeedOutOfBounds(f"seed {seed} outside {cost.width}x{cost.height}")
    return x, y


def _dijkstra_core(combined: np.ndarray, start: int, goal: int | None):
    h, w = combined.shape
    dist = np.full(h * w, np.inf)
    parent = np.full(h * w, -1, dtype=np.int64)
    settled = np.zeros(h * w, dtype=bool)
    dist[start] = 0.0
    heap = [(0.0, start)]
    flat = combined.ravel()
    while heap:
        d, node = heapq.heappop(heap)
        if settled[node]:
            continue
        settled[node] = True
        if node == goal:
            break
        ny_, nx_ = divmod(node, w)
        for (dy, dx), step in zip(_OFFSETS, _STEPLEN):
            yy, xx = ny_ + dy, nx_ + dx
            if not (0 <= yy < h and 0 <= xx < w):
                continue
            nxt = yy * w + xx
            if settled[nxt]:
                continue
            nd = d + flat[nxt] * step
            if nd < dist[nxt]:
                dist[nxt] = nd
                parent[nxt] = node
                heapq.heappush(heap, (nd, nxt))
    return dist, parent


def shortest_path_costs(cost: CostMap, source) -> np.ndarray:
    """Minimal path cost from a source pixel to every pixel, (h, w)."""
    sx, sy = _check_seed(cost, source)
    dist, _ = _dijkstra_core(cost.costs, sy * cost.width + sx, None)
    return dist.reshape(cost.height, cost.width)


def _dijkstra(combined: np.ndarray, seed_a, seed_b):
    """Shortest path on the 8-connected grid; edge cost combined[q] * len."""
    h, w = combined.shape
    ax, ay = seed_a
    bx, by = seed_b
    start = ay * w + ax
    goal = by * w + bx
    dist, parent = _dijkstra_core(combined, start, goal)
    nodes = [goal]
    while nodes[-1] != start:
        prev = parent[nodes[-1]]
        if prev < 0:
            raise RuntimeError("goal not reached")  # grid is connected; unreachable
        nodes.append(prev)
    nodes.reverse()
    path = np.array([(n % w, n // w) for n in nodes], dtype=int)
    return path, float(dist[goal])


def _step_lengths(path: np.ndarray) -> np.ndarray:
    steps = np.abs(np.diff(path, axis=0)).max(axis=1)
    diag = np.all(np.diff(path, axis=0) != 0, axis=1)
    return np.where(diag, SQRT2, 1.0)


def dijkstra_trace(cost: CostMap, seed_a, seed_b) -> TraceResult:
    """Globally minimal 8-connected path between two seed pixels."""
    a = _check_seed(cost, seed_a)
    b = _check_seed(cost, seed_b)
    if a == b:
        return TraceResult(path=np.array([a]), total_cost=0.0, per_step=np.zeros((0, 2)))
    path, total = _dijkstra(cost.costs, a, b)
    lens = _step_lengths(path)
    entered = cost.costs[path[1:, 1], path[1:, 0]]
    per_step = np.stack([entered * lens, np.zeros_like(lens)], axis=1)
    return TraceResult(path=path, total_cost=total, per_step=per_step)


def fused_trace(
    cost1: CostMap,
    cost2: CostMap,
    corr,
    seed_a,
    seed_b,
    weight: float = 1.0,
) -> TraceResult:
    """Two-view trace on cost1 with per-pixel view-2 cost via ``corr``.

    ``corr`` maps an (n, 2) array of view-1 pixels to (n, 2) view-2 pixels
    (NaN rows allowed). Out-of-bounds or NaN correspondences cost the view-2
    maximum at that pixel.
    """
    a = _check_seed(cost1, seed_a)
    b = _check_seed(cost1, seed_b)
    view2_cost = _corr_cost_map(cost1, cost2, corr)
    combined = cost1.costs + weight * view2_cost
    if a == b:
        return TraceResult(path=np.array([a]), total_cost=0.0, per_step=np.zeros((0, 2)))
    path, total = _dijkstra(combined, a, b)
    lens = _step_lengths(path)
    rows, cols = path[1:, 1], path[1:, 0]
    per_step = np.stack(
        [cost1.costs[rows, cols] * lens, weight * view2_cost[rows, cols] * lens], axis=1
    )
    return TraceResult(path=path, total_cost=total, per_step=per_step)


def _corr_cost_map(cost1: CostMap, cost2: CostMap, corr, chunk: int = 8192) -> np.ndarray:
    h, w = cost1.costs.shape
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    fallback = float(cost2.costs.max())
    out = np.full(len(pixels), fallback)
    for lo in range(0, len(pixels), chunk):
        block = pixels[lo : lo + chunk]
        mapped = np.asarray(corr(block), dtype=float)
        finite = np.isfinite(mapped).all(axis=1)
        cols = np.zeros(len(block), dtype=np.int64)
        rows = np.zeros(len(block), dtype=np.int64)
        cols[finite] = np.rint(mapped[finite, 0])
        rows[finite] = np.rint(mapped[finite, 1])
        ok = (
            finite
            & (cols >= 0)
            & (cols < cost2.width)
            & (rows >= 0)
            & (rows < cost2.height)
        )
        vals = np.full(len(block), fallback)
        vals[ok] = cost2.costs[rows[ok], cols[ok]]
        out[lo : lo + chunk] = vals
    return out.reshape(h, w)


def ground_truth_corr(branch_points: np.ndarray, view1: ProjectionView, view2: ProjectionView):
    """Ground-truth pixel transfer conditioned on one traced branch.

    Lifts each view-1 pixel to the point of its viewing ray closest to the
    branch polyline (the best branch-consistent 3D estimate), then projects
    that point into view 2. Pixels truly on the branch map onto its view-2
    projection; pixels elsewhere land wherever their ray passes, typically
    off the vasculature.
    """
    pts = np.asarray(branch_points, dtype=float)
    c1 = view1.camera_center
    rot_t = view1.extrinsics.rotation.T
    f = view1.intrinsics.focal_px
    cx, cy = view1.intrinsics.principal_point
    rel = pts - c1  # (m, 3)
    rel_sq = np.sum(rel * rel, axis=1)

    def corr(pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float)
        d_cam = np.stack(
            [
                (pixels[:, 0] - cx) / f,
                (pixels[:, 1] - cy) / f,
                np.ones(len(pixels)),
            ],
            axis=1,
        )
        d = d_cam @ rot_t.T
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = d @ rel.T  # (n, m) ray parameter of each branch point's foot
        miss = rel_sq[None, :] - t * t
        best = np.argmin(miss, axis=1)
        lifted = c1 + t[np.arange(len(pixels)), best, None] * d
        out = np.full((len(pixels), 2), np.nan)
        depths = geometry.depths(view2, lifted)
        ok = depths > 1e-9
        if np.any(ok):
            out[ok] = geometry.project_many(view2, lifted[ok])
        return out

    return corr
