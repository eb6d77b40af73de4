"""Dataset handle: lazy loading of rendered views, labels and cameras.

Consumes the directory layout written by :func:`angiocorr.phantom.make_dataset`
and provides seeded evaluation pairing. View ids are strings like
``s000_lca_v07``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, phantom
from .errors import DatasetNotFound, ManifestMissing, SchemaVersionMismatch
from .geometry import ProjectionView
from .pgm import read_pgm

_VIEW_ID_RE = re.compile(r"^s(\d{3})_(lca|rca)_v(\d{2})$")


def view_id(subject: int, side: str, view_idx: int) -> str:
    return f"s{subject:03d}_{side}_v{view_idx:02d}"


def parse_view_id(vid: str) -> tuple[int, str, int]:
    m = _VIEW_ID_RE.match(vid)
    if not m:
        raise KeyError(f"bad view id {vid!r}")
    return int(m.group(1)), m.group(2), int(m.group(3))


@dataclass(frozen=True)
class EvalPair:
    subject: int
    side: str
    ref_view: int
    tgt_view: int
    angle_deg: float
    ref_group: str
    tgt_group: str


class Dataset:
    def __init__(self, root: Path, manifest: dict):
        self.root = root
        self.manifest = manifest
        self.image_px = int(manifest["image_px"])
        self.view_groups = {v["view_idx"]: v["group"] for v in manifest["views"]}
        self.n_views = len(manifest["views"])
        self._images: dict[tuple, np.ndarray] = {}
        self._labels: dict[tuple, phantom.ViewLabels] = {}
        self._cameras: dict[tuple, ProjectionView] = {}

    # --- indexing -----------------------------------------------------

    def subjects(self, split: str | None = None) -> list[int]:
        return [
            s["id"]
            for s in self.manifest["subjects"]
            if split is None or s["split"] == split
        ]

    def trees(self, split: str | None = None) -> list[tuple[int, str]]:
        return [
            (s, side) for s in self.subjects(split) for side in self.manifest["sides"]
        ]

    def view_ids(self, split: str | None = None) -> list[str]:
        return [
            view_id(s, side, v)
            for s, side in self.trees(split)
            for v in range(self.n_views)
        ]

    def _side_dir(self, subject: int, side: str) -> Path:
        return self.root / f"subject_{subject:03d}" / side

    # --- lazy loaders ----------------------------------------------------

    def image_path(self, subject: int, side: str, view: int) -> Path:
        return self._side_dir(subject, side) / f"{view:02d}.pgm"

    def load_image(self, subject: int, side: str, view: int) -> np.ndarray:
        key = (subject, side, view)
        if key not in self._images:
            self._images[key] = read_pgm(self.image_path(*key))
        return self._images[key]

    def load_labels(self, subject: int, side: str, view: int) -> phantom.ViewLabels:
        key = (subject, side, view)
        if key not in self._labels:
            path = self._side_dir(subject, side) / f"{view:02d}.labels.json"
            try:
                rec = json.loads(path.read_text())
            except (json.JSONDecodeError, OSError) as exc:
                raise DatasetNotFound(f"unreadable labels file {path}: {exc}") from exc
            self._labels[key] = phantom.ViewLabels.from_json(rec)
        return self._labels[key]

    def load_camera(self, subject: int, side: str, view: int) -> ProjectionView:
        key = (subject, side, view)
        if key not in self._cameras:
            path = self._side_dir(subject, side) / f"{view:02d}.camera.json"
            try:
                rec = json.loads(path.read_text())
            except (json.JSONDecodeError, OSError) as exc:
                raise DatasetNotFound(f"unreadable camera file {path}: {exc}") from exc
            self._cameras[key] = geometry.camera_from_json(rec)
        return self._cameras[key]

    def mm_per_px(self, subject: int, side: str, view: int) -> float:
        return self.load_camera(subject, side, view).intrinsics.pixel_spacing_mm

    # --- validation --------------------------------------------------------

    def validate_sample(self, seed: int = 0, n_views: int = 4) -> None:
        """Spot-check invariants on a seeded sample of views."""
        rng = np.random.default_rng(seed)
        trees = self.trees()
        for _ in range(min(n_views, len(trees) * self.n_views)):
            subject, side = trees[int(rng.integers(len(trees)))]
            view = int(rng.integers(self.n_views))
            img = self.load_image(subject, side, view)
            if img.shape != (self.image_px, self.image_px):
                raise SchemaVersionMismatch(
                    f"{self.image_path(subject, side, view)}: image is {img.shape}, "
                    f"manifest says {self.image_px}"
                )
            cam = self.load_camera(subject, side, view)
            axis = cam.extrinsics.rotation[2]
            expected = geometry.detector_normal(cam.angulation)
            if np.max(np.abs(axis - expected)) > 1e-9:
                raise SchemaVersionMismatch(
                    f"camera axis disagrees with angulation for "
                    f"{view_id(subject, side, view)}"
                )
            labels = self.load_labels(subject, side, view)
            for pts in labels.polylines.values():
                if len(pts) < 2:
                    raise SchemaVersionMismatch("degenerate label polyline")

    def verify_checksums(self, report=None) -> list[str]:
        """Check per-file sha256 sums; returns a list of per-file failures."""
        failures = []
        for rel, want in self.manifest.get("checksums", {}).items():
            path = self.root / rel
            got = hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else None
            if got != want:
                failures.append(f"{rel}: checksum mismatch")
                if report:
                    report(failures[-1])
        return failures


def load_dataset(path) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise DatasetNotFound(f"{path} is not a directory")
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ManifestMissing(f"{manifest_path} not found")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != phantom.MANIFEST_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"manifest schema {manifest.get('schema_version')} != "
            f"{phantom.MANIFEST_SCHEMA_VERSION}"
        )
    return Dataset(root, manifest)


def make_eval_pairs(ds: Dataset, seed: int, split: str = "test") -> list[EvalPair]:
    """Each view of the split serves once as reference, paired with a seeded
    random other view of the same tree."""
    rng = np.random.default_rng(seed)
    pairs = []
    for subject, side in ds.trees(split):
        for ref in range(ds.n_views):
            tgt = int(rng.integers(ds.n_views - 1))
            if tgt >= ref:
                tgt += 1
            angle = geometry.angle_between_views(
                ds.load_camera(subject, side, ref), ds.load_camera(subject, side, tgt)
            )
            pairs.append(
                EvalPair(
                    subject=subject,
                    side=side,
                    ref_view=ref,
                    tgt_view=tgt,
                    angle_deg=angle,
                    ref_group=ds.view_groups[ref],
                    tgt_group=ds.view_groups[tgt],
                )
            )
    return pairs


def pool_image(img: np.ndarray, out_px: int) -> np.ndarray:
    """Average-pool a square image down to out_px (integer factor)."""
    n = img.shape[0]
    if n == out_px:
        return img
    if n % out_px != 0:
        raise ValueError(f"cannot pool {n} -> {out_px}")
    f = n // out_px
    return img.reshape(out_px, f, out_px, f).mean(axis=(1, 3))
