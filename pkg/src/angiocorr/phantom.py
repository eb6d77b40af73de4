"""Procedural coronary tree phantoms and X-ray style view rendering.

Trees grow on a spherical "heart surface" shell around the isocenter:
branches are great-circle walks with smoothly drifting tangents (in-surface
tortuosity) plus a cubic-spline radial perturbation (out-of-surface
tortuosity), recursively bifurcating with tapering radii. Rendering
composites Gaussian-profile tube attenuation along projected centerlines and
negates, giving dark vessels on a bright background.

Everything is a pure function of (seed, config); the dataset writer below
lays files out as

    subject_{k}/{side}/{view:02d}.pgm          rendered view (P5, 8-bit)
    subject_{k}/{side}/{view:02d}.labels.json  projected labels
    subject_{k}/{side}/{view:02d}.camera.json  camera parameters
    manifest.json                              subjects, splits, view groups
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import geometry
from .errors import InvalidConfig, NonPositiveDepth, OutOfFrustum
from .geometry import Angulation, GeometryConfig, ProjectionView
from .pgm import write_pgm

SIDES = ("lca", "rca")

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Branch:
    id: int
    parent_id: int | None
    attach_index: int  # index on the parent polyline; 0 for the root
    points: np.ndarray  # (n, 3) mm
    radii: np.ndarray  # (n,) mm

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float))


@dataclass(frozen=True)
class StenosisMarker:
    branch_id: int
    start_index: int
    end_index: int

    def __post_init__(self):
        if not self.start_index < self.end_index:
            raise ValueError("stenosis start_index must precede end_index")


@dataclass(frozen=True)
class CoronaryTree:
    branches: list[Branch]
    side: str
    stenoses: list[StenosisMarker]
    seed: int

    def branch_by_id(self, branch_id: int) -> Branch:
        return self.branches[branch_id]

    def bifurcation_points(self) -> np.ndarray:
        """3D attach points of all non-root branches, (m, 3)."""
        pts = [
            self.branches[b.parent_id].points[b.attach_index]
            for b in self.branches
            if b.parent_id is not None
        ]
        return np.array(pts) if pts else np.zeros((0, 3))

    def all_points(self) -> np.ndarray:
        return np.vstack([b.points for b in self.branches])


@dataclass(frozen=True)
class Image2D:
    width: int
    height: int
    values: np.ndarray  # (height, width) in [0, 1]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.height, self.width):
            raise ValueError(f"values shape {v.shape} != (h={self.height}, w={self.width})")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ViewLabels:
    """Projected 2D labels of one view, pixel coordinates.

    polylines maps branch id to an ordered (n, 2) array whose row index is
    the arc index shared across views of the same tree. Bifurcations and
    stenosis endpoints also carry their (branch_id, arc_index) identity so
    they can be located on the polylines.
    """

    polylines: dict[int, np.ndarray]
    bifurcations: np.ndarray  # (m, 2) pixels
    bifurcation_ids: np.ndarray  # (m, 2) int (branch_id, arc_index) on the parent
    stenosis_endpoints: np.ndarray  # (k, 2, 2) pixels
    stenosis_ids: np.ndarray  # (k, 2, 2) int

    def to_json(self) -> dict:
        return {
            "branches": [
                {"id": int(k), "points": self.polylines[k].tolist()}
                for k in sorted(self.polylines)
            ],
            "bifurcations": self.bifurcations.tolist(),
            "bifurcation_ids": self.bifurcation_ids.tolist(),
            "stenoses": self.stenosis_endpoints.tolist(),
            "stenosis_ids": self.stenosis_ids.tolist(),
        }

    @classmethod
    def from_json(cls, rec: dict) -> "ViewLabels":
        polylines = {
            int(b["id"]): np.asarray(b["points"], dtype=float) for b in rec["branches"]
        }
        return cls(
            polylines=polylines,
            bifurcations=np.asarray(rec["bifurcations"], dtype=float).reshape(-1, 2),
            bifurcation_ids=np.asarray(rec["bifurcation_ids"], dtype=int).reshape(-1, 2),
            stenosis_endpoints=np.asarray(rec["stenoses"], dtype=float).reshape(-1, 2, 2),
            stenosis_ids=np.asarray(rec["stenosis_ids"], dtype=int).reshape(-1, 2, 2),
        )


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    side: str = "lca"
    depth: int = 4
    branch_bounds: tuple[int, int] = (8, 24)
    shell_radius_mm: float = 45.0
    spacing_mm: float = 0.5
    root_radius_mm: float = 1.7
    radius_decay: float = 0.75
    branch_angle_deg: tuple[float, float] = (25.0, 60.0)
    tortuosity_mm: float = 1.5
    max_stenoses: int = 2

    def __post_init__(self):
        if self.side not in SIDES:
            raise InvalidConfig(f"side must be one of {SIDES}, got {self.side!r}")
        if not 2 <= self.depth <= 5:
            raise InvalidConfig(f"depth {self.depth} outside [2, 5]")
        lo, hi = self.branch_bounds
        if not 1 <= lo <= hi:
            raise InvalidConfig(f"bad branch bounds {self.branch_bounds}")
        if not 0 <= self.max_stenoses <= 2:
            raise InvalidConfig("max_stenoses must be 0, 1 or 2")


# --- tree synthesis ---------------------------------------------------------

def _smooth_noise(rng, n: int, scale: float, wavelength: int) -> np.ndarray:
    """Cubic-spline noise: random knots every `wavelength` samples."""
    if scale == 0.0 or n < 2:
        return np.zeros(n)
    knots = np.arange(0, n + wavelength, wavelength, dtype=float)
    values = rng.normal(0.0, scale, size=len(knots))
    return CubicSpline(knots, values)(np.arange(n))


def _rotate_in_tangent_plane(t: np.ndarray, normal: np.ndarray, angle: float) -> np.ndarray:
    return t * np.cos(angle) + np.cross(normal, t) * np.sin(angle)


def _resample_polyline(points: np.ndarray, spacing: float):
    d = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(d)])
    total = s[-1]
    n_seg = max(int(round(total / spacing)), 1)
    si = np.linspace(0.0, total, n_seg + 1)
    out = np.stack([np.interp(si, s, points[:, k]) for k in range(3)], axis=1)
    out[0] = points[0]
    out[-1] = points[-1]
    return out, si / total


def _grow_branch(rng, cfg: PhantomConfig, start_point, start_tangent, length_mm, radius_mm):
    """Great-circle walk on the shell with tangent drift and radial noise."""
    shell = cfg.shell_radius_mm
    step = 1.0
    n = max(int(round(length_mm / step)), 3)
    u = start_point / np.linalg.norm(start_point)
    rho0 = np.linalg.norm(start_point) - shell
    t = start_tangent - np.dot(start_tangent, u) * u
    t /= np.linalg.norm(t)

    drift = _smooth_noise(rng, n, scale=0.10, wavelength=8)
    radial = rho0 + _smooth_noise(rng, n + 1, scale=cfg.tortuosity_mm, wavelength=15)
    radial[0] = rho0

    pts = np.empty((n + 1, 3))
    pts[0] = start_point
    dtheta = step / shell
    for k in range(n):
        t = _rotate_in_tangent_plane(t, u, drift[k])
        u_next = u * np.cos(dtheta) + t * np.sin(dtheta)
        u_next /= np.linalg.norm(u_next)
        t = t - np.dot(t, u_next) * u_next
        t /= np.linalg.norm(t)
        u = u_next
        pts[k + 1] = (shell + radial[k + 1]) * u

    points, frac = _resample_polyline(pts, cfg.spacing_mm)
    points[0] = start_point
    radii = radius_mm * (1.0 - 0.28 * frac)
    radii = np.minimum.accumulate(radii)
    end_tangent = t
    return points, radii, end_tangent


_SIDE_PARAMS = {
    # start direction on the shell, mean branch count, root length (mm)
    "lca": (np.array([0.35, 0.45, 0.82]), 17.0, 110.0),
    "rca": (np.array([-0.55, 0.55, 0.63]), 11.0, 120.0),
}


def generate_tree(cfg: PhantomConfig) -> CoronaryTree:
    """Deterministic procedural tree for (seed, config)."""
    rng = np.random.default_rng(cfg.seed)
    start_dir, mean_branches, root_len = _SIDE_PARAMS[cfg.side]
    start_u = start_dir / np.linalg.norm(start_dir)
    start_u = _rotate_in_tangent_plane(
        start_u, np.array([0.0, 0.0, 1.0]), rng.uniform(-0.25, 0.25)
    )
    start_u /= np.linalg.norm(start_u)

    lo, hi = cfg.branch_bounds
    target = int(np.clip(round(rng.normal(mean_branches, 2.0)), lo, hi))

    # initial tangent: roughly "down" the heart surface
    down = np.array([0.0, 0.0, -1.0])
    t0 = down - np.dot(down, start_u) * start_u
    t0 /= np.linalg.norm(t0)
    t0 = _rotate_in_tangent_plane(t0, start_u, rng.uniform(-0.4, 0.4))

    branches: list[Branch] = []
    generations: list[int] = []

    def add_branch(parent_id, attach_index, start_point, tangent, length, radius, gen):
        pts, radii, _ = _grow_branch(rng, cfg, start_point, tangent, length, radius)
        branches.append(
            Branch(
                id=len(branches),
                parent_id=parent_id,
                attach_index=attach_index,
                points=pts,
                radii=radii,
            )
        )
        generations.append(gen)
        return branches[-1]

    root = add_branch(
        None, 0, cfg.shell_radius_mm * start_u, t0, root_len * rng.uniform(0.9, 1.1),
        cfg.root_radius_mm, 0
    )

    used_attach: dict[int, list[int]] = {root.id: []}
    min_attach_gap = 10  # indices (~5 mm) between sibling take-offs
    while len(branches) < target:
        candidates = [
            b.id
            for b in branches
            if generations[b.id] + 1 < cfg.depth and len(b.points) > 2 * min_attach_gap
        ]
        candidates = [
            bid for bid in candidates if len(used_attach.get(bid, [])) < 6
        ]
        if not candidates:
            break
        # favor shallow branches so the crown stays wide
        weights = np.array([0.55 ** generations[bid] for bid in candidates])
        parent_id = int(rng.choice(candidates, p=weights / weights.sum()))
        parent = branches[parent_id]
        n_pts = len(parent.points)
        low, high = int(0.12 * n_pts), int(0.88 * n_pts)
        taken = used_attach.setdefault(parent_id, [])
        idx = -1
        for _ in range(12):
            cand = int(rng.integers(low, high))
            if all(abs(cand - u) >= min_attach_gap for u in taken):
                idx = cand
                break
        if idx < 0:
            used_attach[parent_id] = [0] * 6  # exhausted; drop from candidates
            continue
        u_at = parent.points[idx] / np.linalg.norm(parent.points[idx])
        seg = parent.points[min(idx + 1, n_pts - 1)] - parent.points[max(idx - 1, 0)]
        tang = seg - np.dot(seg, u_at) * u_at
        norm = np.linalg.norm(tang)
        if norm < 1e-9:
            taken.append(idx)
            continue
        tang /= norm
        ang = np.radians(rng.uniform(*cfg.branch_angle_deg)) * rng.choice([-1.0, 1.0])
        child_tangent = _rotate_in_tangent_plane(tang, u_at, ang)
        remaining_mm = (n_pts - 1 - idx) * cfg.spacing_mm
        length = max(remaining_mm * rng.uniform(0.55, 0.9), 12.0)
        radius = max(parent.radii[idx] * cfg.radius_decay * rng.uniform(0.9, 1.05), 0.35)
        child = add_branch(
            parent.id, idx, parent.points[idx], child_tangent, length, radius,
            generations[parent_id] + 1,
        )
        taken.append(idx)
        used_attach[child.id] = []

    stenoses: list[StenosisMarker] = []
    n_sten = int(rng.integers(0, cfg.max_stenoses + 1))
    proximal = [b for b, g in zip(branches, generations) if g <= 1 and len(b.points) > 30]
    for _ in range(n_sten if proximal else 0):
        b = proximal[int(rng.integers(0, len(proximal)))]
        start = int(rng.integers(5, len(b.points) - 20))
        extent = int(rng.integers(8, 16))
        stenoses.append(
            StenosisMarker(
                branch_id=b.id,
                start_index=start,
                end_index=min(start + extent, len(b.points) - 1),
            )
        )

    return CoronaryTree(branches=branches, side=cfg.side, stenoses=stenoses, seed=cfg.seed)


def check_tree(tree: CoronaryTree, cfg: PhantomConfig | None = None) -> None:
    """Raise AssertionError when a tree violates its documented invariants."""
    assert len(tree.branches) >= 1
    roots = [b for b in tree.branches if b.parent_id is None]
    assert len(roots) == 1, f"expected one root, found {len(roots)}"
    for b in tree.branches:
        assert len(b.points) >= 2
        spacing = np.linalg.norm(np.diff(b.points, axis=0), axis=1)
        assert spacing.min() >= 0.2 - 1e-9 and spacing.max() <= 1.0 + 1e-9, (
            f"branch {b.id} spacing range [{spacing.min():.3f}, {spacing.max():.3f}]"
        )
        assert np.all(b.radii > 0)
        assert np.all(np.diff(b.radii) <= 1e-12), f"branch {b.id} radii increase"
        if b.parent_id is not None:
            parent = tree.branches[b.parent_id]
            assert b.parent_id < b.id, "parent references must be acyclic"
            assert 0 <= b.attach_index < len(parent.points)
            np.testing.assert_array_equal(b.points[0], parent.points[b.attach_index])
    for s in tree.stenoses:
        b = tree.branches[s.branch_id]
        assert 0 <= s.start_index < s.end_index < len(b.points)
    if cfg is not None:
        lo, hi = cfg.branch_bounds
        assert lo <= len(tree.branches) <= hi


# --- rendering and labels -----------------------------------------------------

def render_attenuation(
    tree: CoronaryTree, view: ProjectionView, density: float = 1.0
) -> np.ndarray:
    """Pre-normalization attenuation accumulator; linear in `density`."""
    w, h = view.intrinsics.image_size
    acc = np.zeros((h, w))
    f = view.intrinsics.focal_px
    for b in tree.branches:
        try:
            pix = geometry.project_many(view, b.points)
        except NonPositiveDepth as exc:
            raise OutOfFrustum(f"branch {b.id}: {exc}") from exc
        depth = geometry.depths(view, b.points)
        radius_px = b.radii * f / depth
        sigma = np.maximum(radius_px * 0.6, 0.4)
        # chord length through a tube scales with its radius
        seg = np.linalg.norm(np.diff(b.points, axis=0), axis=1)
        ds = np.concatenate([seg[:1], (seg[:-1] + seg[1:]) / 2.0, seg[-1:]])
        amp = density * b.radii * ds
        _stamp_gaussians(acc, pix, sigma, amp)
    return acc


def _stamp_gaussians(acc, centers, sigma, amp):
    h, w = acc.shape
    extent = np.ceil(3.0 * sigma).astype(int)
    for (cx, cy), s, e, a in zip(centers, sigma, extent, amp):
        x0, x1 = int(np.floor(cx)) - e, int(np.floor(cx)) + e + 1
        y0, y1 = int(np.floor(cy)) - e, int(np.floor(cy)) + e + 1
        x0c, x1c = max(x0, 0), min(x1, w)
        y0c, y1c = max(y0, 0), min(y1, h)
        if x0c >= x1c or y0c >= y1c:
            continue
        xs = np.arange(x0c, x1c) - cx
        ys = np.arange(y0c, y1c) - cy
        g = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * s * s))
        acc[y0c:y1c, x0c:x1c] += a * g


def render_view(tree: CoronaryTree, view: ProjectionView, density: float = 1.0) -> Image2D:
    """Rendered view: negated min-max normalized tube attenuation."""
    acc = render_attenuation(tree, view, density)
    peak = acc.max()
    if peak <= 0.0:
        values = np.ones_like(acc)
    else:
        lo = acc.min()
        values = 1.0 - (acc - lo) / (peak - lo)
    w, h = view.intrinsics.image_size
    return Image2D(width=w, height=h, values=values)


def project_labels(tree: CoronaryTree, view: ProjectionView) -> ViewLabels:
    """All centerline points, bifurcations and stenosis endpoints in pixels."""
    polylines = {b.id: geometry.project_many(view, b.points) for b in tree.branches}
    bif_ids = np.array(
        [(b.parent_id, b.attach_index) for b in tree.branches if b.parent_id is not None],
        dtype=int,
    ).reshape(-1, 2)
    bifurcations = (
        np.stack([polylines[bid][idx] for bid, idx in bif_ids])
        if len(bif_ids)
        else np.zeros((0, 2))
    )
    sten_ids = np.array(
        [
            [(s.branch_id, s.start_index), (s.branch_id, s.end_index)]
            for s in tree.stenoses
        ],
        dtype=int,
    ).reshape(-1, 2, 2)
    stenosis = (
        np.stack(
            [
                np.stack([polylines[b0][i0], polylines[b1][i1]])
                for (b0, i0), (b1, i1) in sten_ids
            ]
        )
        if len(sten_ids)
        else np.zeros((0, 2, 2))
    )
    return ViewLabels(
        polylines=polylines,
        bifurcations=bifurcations,
        bifurcation_ids=bif_ids,
        stenosis_endpoints=stenosis,
        stenosis_ids=sten_ids,
    )


# --- clinical projection groups ------------------------------------------------

def _span(lo: float, hi: float) -> list[float]:
    return list(np.arange(lo, hi + 1e-9, 5.0))


def enumerate_projection_groups() -> list[tuple[str, Angulation]]:
    """The 63 clinical angulations of groups A-H at 5 degree increments.

    Counts per group: A 12, B 3, C 12, D 6, E 12, F 10, G 4, H 4 (63 total,
    so that one subject yields 63 x 2 rendered views).
    """
    groups: list[tuple[str, Angulation]] = []
    for a in _span(40, 50):  # LAO 40-50, caudal 25-40
        for b in _span(25, 40):
            groups.append(("A", Angulation(a, -b)))
    for a in _span(5, 15):  # RAO 5-15, caudal 30
        groups.append(("B", Angulation(-a, -30.0)))
    for a in _span(30, 45):  # RAO 30-45, caudal 30-40
        for b in _span(30, 40):
            groups.append(("C", Angulation(-a, -b)))
    for a in _span(5, 10):  # RAO 5-10, cranial 30-40
        for b in _span(30, 40):
            groups.append(("D", Angulation(-a, b)))
    for a in _span(30, 45):  # LAO 30-45, cranial 25-35
        for b in _span(25, 35):
            groups.append(("E", Angulation(a, b)))
    for b in _span(10, 30):  # lateral, cranial and caudal 10-30
        groups.append(("F", Angulation(90.0, b)))
    for b in _span(10, 30):
        groups.append(("F", Angulation(-90.0, -b)))
    for a in _span(45, 60):  # LAO 45-60
        groups.append(("G", Angulation(a, 0.0)))
    for a in _span(30, 45):  # RAO 30-45
        groups.append(("H", Angulation(-a, 0.0)))
    return groups


# --- dataset writer -------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    out_dir: str
    n_subjects: int = 1
    seed: int = 0
    image_px: int = 512
    density: float = 1.0
    split_counts: tuple[int, int, int] | None = None  # (train, val, test)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)

    def __post_init__(self):
        if self.n_subjects < 1:
            raise InvalidConfig("subject count must be >= 1")
        if self.image_px < 16:
            raise InvalidConfig("image_px too small")
        if self.split_counts is not None and sum(self.split_counts) != self.n_subjects:
            raise InvalidConfig("split_counts must sum to n_subjects")


def _split_assignment(cfg: DatasetConfig, rng) -> list[str]:
    if cfg.split_counts is not None:
        n_train, n_val, n_test = cfg.split_counts
    else:
        # 84/5/10 proportions of the reference 99-subject protocol
        n_val = int(round(cfg.n_subjects * 5 / 99))
        n_test = int(round(cfg.n_subjects * 10 / 99))
        n_train = cfg.n_subjects - n_val - n_test
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    order = rng.permutation(cfg.n_subjects)
    out = [""] * cfg.n_subjects
    for lab, idx in zip(labels, order):
        out[idx] = lab
    return out


def make_dataset(cfg: DatasetConfig) -> Path:
    """Render all subjects over the 63 angulations x 2 sides; returns the path."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    splits = _split_assignment(cfg, rng)
    groups = enumerate_projection_groups()
    geo = GeometryConfig().scaled(cfg.image_px)

    views = []
    for view_idx, (gid, ang) in enumerate(groups):
        views.append(
            {
                "view_idx": view_idx,
                "group": gid,
                "alpha_deg": ang.alpha_deg,
                "beta_deg": ang.beta_deg,
            }
        )

    seed_seq = np.random.SeedSequence(cfg.seed)
    subject_seeds = [int(s.generate_state(1)[0]) for s in seed_seq.spawn(cfg.n_subjects)]

    subjects = []
    checksums: dict[str, str] = {}

    def write(path: Path, data: bytes) -> None:
        path.write_bytes(data)
        checksums[str(path.relative_to(out))] = hashlib.sha256(data).hexdigest()

    for k in range(cfg.n_subjects):
        subject_dir = out / f"subject_{k:03d}"
        for side_idx, side in enumerate(SIDES):
            tree_seed = subject_seeds[k] * 2 + side_idx
            tree = generate_tree(replace(cfg.phantom, seed=tree_seed, side=side))
            side_dir = subject_dir / side
            side_dir.mkdir(parents=True, exist_ok=True)
            for view_idx, (gid, ang) in enumerate(groups):
                view = geometry.build_view(ang, geo)
                img = render_view(tree, view, cfg.density)
                labels = project_labels(tree, view)
                write_pgm(side_dir / f"{view_idx:02d}.pgm", img.values)
                pgm_path = side_dir / f"{view_idx:02d}.pgm"
                checksums[str(pgm_path.relative_to(out))] = hashlib.sha256(
                    pgm_path.read_bytes()
                ).hexdigest()
                write(
                    side_dir / f"{view_idx:02d}.labels.json",
                    json.dumps(labels.to_json()).encode(),
                )
                write(
                    side_dir / f"{view_idx:02d}.camera.json",
                    json.dumps(geometry.camera_to_json(view)).encode(),
                )
        subjects.append({"id": k, "seed": subject_seeds[k], "split": splits[k]})

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "seed": cfg.seed,
        "image_px": cfg.image_px,
        "sides": list(SIDES),
        "views": views,
        "subjects": subjects,
        "checksums": checksums,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out
