"""Inference modes: P2P, C2C and curve-refined point prediction (C2C-R)."""

from __future__ import annotations

import threading
from collections import OrderedDict

import numpy as np

from ..curves import CubicBezier, nearest_point_on_curve
from ..errors import MissingModel
from ..tensornet import Tensor
from .model import CorrespondenceModel


def infer_p2p(model: CorrespondenceModel, memory: Tensor, queries: np.ndarray) -> np.ndarray:
    """Predicted target-image coordinates, (n, 2) in [0, 1] units."""
    return model.p2p_forward(memory, np.asarray(queries, dtype=float)).data.copy()


def infer_c2c(model: CorrespondenceModel, memory: Tensor, waypoint: np.ndarray) -> CubicBezier:
    """Predicted target curve for one (N, 2) waypoint."""
    cp = model.c2c_forward(memory, np.asarray(waypoint, dtype=float)[None]).data[0]
    return CubicBezier(cp)


def infer_c2c_refined(p2p_point: np.ndarray, curve: CubicBezier) -> np.ndarray:
    """Project a P2P prediction to the nearest point of the predicted curve."""
    _, pt = nearest_point_on_curve(curve, np.asarray(p2p_point, dtype=float))
    return pt


class Predictor:
    """Loaded checkpoints plus a bounded per-pair context cache.

    Images are (H, W) arrays in [0, 1] at each model's input size; all point
    coordinates are normalized image units.
    """

    def __init__(
        self,
        p2p: CorrespondenceModel | None = None,
        c2c: CorrespondenceModel | None = None,
        cache_pairs: int = 16,
    ):
        self.p2p = p2p
        self.c2c = c2c
        self._cache: OrderedDict[tuple, Tensor] = OrderedDict()
        self._cache_pairs = cache_pairs
        self._lock = threading.Lock()  # concurrent requests share the cache

    def _memory(self, model, tag: str, key, ref_img, tgt_img) -> Tensor:
        if key is None:
            return model.encode_pair(ref_img, tgt_img)
        full_key = (tag, key)
        with self._lock:
            if full_key in self._cache:
                self._cache.move_to_end(full_key)
                return self._cache[full_key]
        mem = model.encode_pair(ref_img, tgt_img)
        with self._lock:
            self._cache[full_key] = mem
            while len(self._cache) > self._cache_pairs:
                self._cache.popitem(last=False)
        return mem

    def predict_points(self, ref_img, tgt_img, queries, pair_key=None) -> np.ndarray:
        if self.p2p is None:
            raise MissingModel("no P2P checkpoint loaded")
        mem = self._memory(self.p2p, "p2p", pair_key, ref_img, tgt_img)
        return infer_p2p(self.p2p, mem, queries)

    def predict_curve(self, ref_img, tgt_img, waypoint, pair_key=None) -> CubicBezier:
        if self.c2c is None:
            raise MissingModel("no C2C checkpoint loaded")
        mem = self._memory(self.c2c, "c2c", pair_key, ref_img, tgt_img)
        return infer_c2c(self.c2c, mem, waypoint)

    def predict_refined(
        self, ref_img, tgt_img, queries, waypoint, pair_key=None
    ) -> tuple[np.ndarray, CubicBezier]:
        """C2C-R: P2P predictions projected onto the predicted curve."""
        points = self.predict_points(ref_img, tgt_img, queries, pair_key)
        curve = self.predict_curve(ref_img, tgt_img, waypoint, pair_key)
        refined = np.stack([infer_c2c_refined(p, curve) for p in points])
        return refined, curve
