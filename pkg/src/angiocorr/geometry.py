"""Angulation-parameterized C-arm camera model.

Conventions
-----------
World frame: right-handed, millimeters, isocenter at the origin.
LAO/RAO rotation ``alpha`` (LAO positive) and cranial/caudal rotation
``beta`` (cranial positive), both in degrees on public interfaces.

The detector plane normal for an angulation (alpha, beta) is the unit
direction of

    [sin(a)cos(b), -cos(a)cos(b), -cos(a)sin(b)]

which is normalized here because the raw bracket is not unit length when
both angles are nonzero.

Camera frame: x right, y down (image rows), z forward along the detector
normal. The source sits at ``-source_isocenter_mm * n`` so the isocenter
projects to the principal point. Points are 1D/2D float64 arrays: 3-vectors
in world mm, 2-vectors in pixel coordinates unless a function says
normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import cosdg, sindg

from .errors import GimbalLockError, IdenticalViews, NonPositiveDepth

WORLD_UP = np.array([0.0, 0.0, 1.0])

_DEPTH_EPS = 1e-9


@dataclass(frozen=True)
class Angulation:
    """C-arm angulation: LAO(+)/RAO(-) and cranial(+)/caudal(-) in degrees."""

    alpha_deg: float
    beta_deg: float

    def __post_init__(self):
        if not -180.0 <= self.alpha_deg <= 180.0:
            raise ValueError(f"alpha_deg {self.alpha_deg} outside [-180, 180]")
        if not -90.0 <= self.beta_deg <= 90.0:
            raise ValueError(f"beta_deg {self.beta_deg} outside [-90, 90]")


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_px: float
    principal_point: tuple[float, float]
    image_size: tuple[int, int]  # (width, height)
    pixel_spacing_mm: float

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError("focal_px must be positive")
        if self.pixel_spacing_mm <= 0:
            raise ValueError("pixel_spacing_mm must be positive")
        cx, cy = self.principal_point
        w, h = self.image_size
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ValueError("principal point outside image domain")

    @property
    def matrix(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array(
            [[self.focal_px, 0.0, cx], [0.0, self.focal_px, cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CameraExtrinsics:
    rotation: np.ndarray  # 3x3, world -> camera
    translation: np.ndarray  # 3, mm

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal (tol 1e-9)")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class GeometryConfig:
    """Acquisition geometry defaults for the simulated C-arm."""

    source_isocenter_mm: float = 765.0
    source_detector_mm: float = 1100.0
    image_size: tuple[int, int] = (512, 512)
    pixel_spacing_mm: float = 0.58

    def __post_init__(self):
        if not 0 < self.source_isocenter_mm < self.source_detector_mm:
            raise ValueError("require 0 < source_isocenter_mm < source_detector_mm")

    def scaled(self, image_px: int) -> "GeometryConfig":
        """Same physical field of view at a different detector resolution."""
        scale = self.image_size[0] / image_px
        return GeometryConfig(
            source_isocenter_mm=self.source_isocenter_mm,
            source_detector_mm=self.source_detector_mm,
            image_size=(image_px, image_px),
            pixel_spacing_mm=self.pixel_spacing_mm * scale,
        )


@dataclass(frozen=True)
class ProjectionView:
    angulation: Angulation
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    source_isocenter_mm: float
    source_detector_mm: float

    def __post_init__(self):
        if not 0 < self.source_isocenter_mm < self.source_detector_mm:
            raise ValueError("require 0 < source_isocenter_mm < source_detector_mm")
        axis = self.extrinsics.rotation[2]
        if np.max(np.abs(axis - detector_normal(self.angulation))) > 1e-9:
            raise ValueError("extrinsics optical axis disagrees with angulation")

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix K[R|t]."""
        rt = np.hstack(
            [self.extrinsics.rotation, self.extrinsics.translation[:, None]]
        )
        return self.intrinsics.matrix @ rt

    @property
    def camera_center(self) -> np.ndarray:
        return self.extrinsics.camera_center


def detector_normal(a: Angulation) -> np.ndarray:
    """Unit normal of the detector plane for an angulation.

    The direction follows the clinical LAO/RAO, cranial/caudal bracket;
    the result is normalized to unit length. Degree-based trig keeps the
    cardinal angulations exact (sin 90 deg = 1, cos 90 deg = 0).
    """
    sa, ca = sindg(a.alpha_deg), cosdg(a.alpha_deg)
    sb, cb = sindg(a.beta_deg), cosdg(a.beta_deg)
    n = np.array([sa * cb, -ca * cb, -ca * sb])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        # alpha = +-90 with beta = +-90 collapses the bracket to zero
        raise GimbalLockError(f"degenerate angulation {a}")
    return n / norm


def build_view(a: Angulation, geo: GeometryConfig | None = None) -> ProjectionView:
    """Construct an isocentric view for an angulation.

    The camera center sits at ``-source_isocenter_mm * n`` with optical axis
    ``+n``; the detector up-vector is world +z projected onto the detector
    plane. Raises :class:`GimbalLockError` when the axis is parallel to +z.
    """
    geo = geo or GeometryConfig()
    n = detector_normal(a)
    up = WORLD_UP - np.dot(WORLD_UP, n) * n
    up_norm = np.linalg.norm(up)
    if up_norm < 1e-9:
        raise GimbalLockError(
            f"optical axis parallel to the reference up-vector for {a}"
        )
    up /= up_norm
    y_cam = -up  # image y grows downward
    x_cam = np.cross(y_cam, n)
    r = np.vstack([x_cam, y_cam, n])
    center = -geo.source_isocenter_mm * n
    t = -r @ center

    w, h = geo.image_size
    intr = CameraIntrinsics(
        focal_px=geo.source_detector_mm / geo.pixel_spacing_mm,
        principal_point=(w / 2.0, h / 2.0),
        image_size=geo.image_size,
        pixel_spacing_mm=geo.pixel_spacing_mm,
    )
    return ProjectionView(
        angulation=a,
        intrinsics=intr,
        extrinsics=CameraExtrinsics(rotation=r, translation=t),
        source_isocenter_mm=geo.source_isocenter_mm,
        source_detector_mm=geo.source_detector_mm,
    )


def project(v: ProjectionView, x: np.ndarray) -> np.ndarray:
    """Project a world point (mm) to pixel coordinates.

    Raises :class:`NonPositiveDepth` if the point is not strictly in front
    of the camera.
    """
    xc = v.extrinsics.rotation @ np.asarray(x, dtype=float) + v.extrinsics.translation
    if xc[2] <= _DEPTH_EPS:
        raise NonPositiveDepth(f"depth {xc[2]:.3g} mm for point {x}")
    f = v.intrinsics.focal_px
    cx, cy = v.intrinsics.principal_point
    return np.array([f * xc[0] / xc[2] + cx, f * xc[1] / xc[2] + cy])


def project_many(v: ProjectionView, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`project` for an (N, 3) array; returns (N, 2) pixels."""
    pts = np.asarray(pts, dtype=float)
    xc = pts @ v.extrinsics.rotation.T + v.extrinsics.translation
    depth = xc[:, 2]
    if np.any(depth <= _DEPTH_EPS):
        bad = int(np.argmin(depth))
        raise NonPositiveDepth(f"depth {depth[bad]:.3g} mm at index {bad}")
    f = v.intrinsics.focal_px
    cx, cy = v.intrinsics.principal_point
    return np.stack(
        [f * xc[:, 0] / depth + cx, f * xc[:, 1] / depth + cy], axis=1
    )


def depths(v: ProjectionView, pts: np.ndarray) -> np.ndarray:
    """Camera-frame depth (mm) of each world point."""
    pts = np.asarray(pts, dtype=float)
    return pts @ v.extrinsics.rotation[2] + v.extrinsics.translation[2]


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def fundamental_matrix(v1: ProjectionView, v2: ProjectionView) -> np.ndarray:
    """Fundamental matrix F with p2' F p1 = 0, unit Frobenius norm.

    Raises :class:`IdenticalViews` when the camera centers coincide.
    """
    c1 = v1.camera_center
    c2 = v2.camera_center
    if np.linalg.norm(c1 - c2) < 1e-6:
        raise IdenticalViews("camera centers coincide within 1e-6 mm")
    p1 = v1.projection_matrix
    p2 = v2.projection_matrix
    e2 = p2 @ np.append(c1, 1.0)
    f = _skew(e2) @ p2 @ np.linalg.pinv(p1)
    return f / np.linalg.norm(f)


def epipolar_residuals(
    f: np.ndarray, pix1: np.ndarray, pix2: np.ndarray
) -> np.ndarray:
    """Algebraic residuals p2' F p1 for (N, 2) pixel arrays."""
    pix1 = np.asarray(pix1, dtype=float)
    pix2 = np.asarray(pix2, dtype=float)
    h1 = np.hstack([pix1, np.ones((len(pix1), 1))])
    h2 = np.hstack([pix2, np.ones((len(pix2), 1))])
    return np.einsum("ni,ij,nj->n", h2, f, h1)


def angle_between_views(v1: ProjectionView, v2: ProjectionView) -> float:
    """Angle in degrees between the two detector normals, in [0, 180]."""
    n1 = detector_normal(v1.angulation)
    n2 = detector_normal(v2.angulation)
    if np.array_equal(n1, n2):
        return 0.0
    d = float(np.clip(np.dot(n1, n2), -1.0, 1.0))
    return math.degrees(math.acos(d))


def camera_to_json(v: ProjectionView) -> dict:
    """Per-view camera record for the dataset's ``*.camera.json`` files."""
    return {
        "alpha_deg": v.angulation.alpha_deg,
        "beta_deg": v.angulation.beta_deg,
        "K": v.intrinsics.matrix.reshape(-1).tolist(),
        "R": v.extrinsics.rotation.reshape(-1).tolist(),
        "t": v.extrinsics.translation.tolist(),
        "image_size": list(v.intrinsics.image_size),
        "pixel_spacing_mm": v.intrinsics.pixel_spacing_mm,
        "source_isocenter_mm": v.source_isocenter_mm,
        "source_detector_mm": v.source_detector_mm,
    }


def camera_from_json(rec: dict) -> ProjectionView:
    k = np.array(rec["K"], dtype=float).reshape(3, 3)
    intr = CameraIntrinsics(
        focal_px=float(k[0, 0]),
        principal_point=(float(k[0, 2]), float(k[1, 2])),
        image_size=tuple(rec["image_size"]),
        pixel_spacing_mm=float(rec["pixel_spacing_mm"]),
    )
    extr = CameraExtrinsics(
        rotation=np.array(rec["R"], dtype=float).reshape(3, 3),
        translation=np.array(rec["t"], dtype=float),
    )
    return ProjectionView(
        angulation=Angulation(float(rec["alpha_deg"]), float(rec["beta_deg"])),
        intrinsics=intr,
        extrinsics=extr,
        source_isocenter_mm=float(rec["source_isocenter_mm"]),
        source_detector_mm=float(rec["source_detector_mm"]),
    )
