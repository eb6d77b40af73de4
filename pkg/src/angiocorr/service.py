"""HTTP facade for interactive correspondence queries.

Serves the dataset's views and the loaded checkpoints to the browser UI.
All request/response coordinates are pixel units of the stored images;
conversion to the models' normalized canvas happens only here. Error bodies
carry {code, message}.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import dataset as ds_mod
from .corrmodel import load_model
from .corrmodel.infer import Predictor, infer_c2c_refined
from .curves import bezier_sample
from .dataset import parse_view_id, pool_image, view_id
from .geometry import angle_between_views

CURVE_SAMPLES = 64


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample an ordered polyline to n points by arc length."""
    pts = np.asarray(points, dtype=float)
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
    pts = pts[keep]
    if len(pts) < 2:
        raise ValueError("need at least two distinct points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    si = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(si, s, pts[:, k]) for k in range(2)], axis=1)


class ServiceState:
    def __init__(self, data_dir=None, p2p_ckpt=None, c2c_ckpt=None, cache_pairs=16):
        self.dataset = ds_mod.load_dataset(data_dir) if data_dir else None
        p2p = load_model(p2p_ckpt, expect_task="p2p") if p2p_ckpt else None
        c2c = load_model(c2c_ckpt, expect_task="c2c") if c2c_ckpt else None
        self.predictor = Predictor(p2p=p2p, c2c=c2c, cache_pairs=cache_pairs)

    def resolve(self, vid: str):
        subject, side, view = parse_view_id(vid)
        if subject not in self.dataset.subjects() or view >= self.dataset.n_views:
            raise KeyError(vid)
        return subject, side, view


def create_app(
    data_dir=None, p2p_ckpt=None, c2c_ckpt=None, static_dir=None
) -> FastAPI:
    app = FastAPI(title="angiocorr service")
    state = ServiceState(data_dir, p2p_ckpt, c2c_ckpt)
    app.state.angiocorr = state

    @app.get("/api/views")
    def views():
        if state.dataset is None:
            return _error(503, "no_dataset", "no dataset loaded")
        ds = state.dataset
        out = []
        for subject, side in ds.trees():
            for v in range(ds.n_views):
                cam = ds.load_camera(subject, side, v)
                out.append(
                    {
                        "id": view_id(subject, side, v),
                        "subject": subject,
                        "side": side,
                        "view_idx": v,
                        "group": ds.view_groups[v],
                        "alpha_deg": cam.angulation.alpha_deg,
                        "beta_deg": cam.angulation.beta_deg,
                        "image_px": ds.image_px,
                    }
                )
        return out

    @app.api_route("/api/views/{vid}/image", methods=["GET", "HEAD"])
    def view_image(vid: str, request: Request):
        if state.dataset is None:
            return _error(503, "no_dataset", "no dataset loaded")
        try:
            subject, side, view = state.resolve(vid)
        except KeyError:
            return _error(404, "unknown_view", f"unknown view id {vid!r}")
        raw = state.dataset.image_path(subject, side, view).read_bytes()
        if request.method == "HEAD":
            return Response(
                content=b"",
                media_type="image/x-portable-graymap",
                headers={"content-length": str(len(raw))},
            )
        return Response(content=raw, media_type="image/x-portable-graymap")

    @app.get("/api/pairs/{ref_id}/{tgt_id}")
    def pair_meta(ref_id: str, tgt_id: str):
        if state.dataset is None:
            return _error(503, "no_dataset", "no dataset loaded")
        try:
            rs, rside, rv = state.resolve(ref_id)
            ts, tside, tv = state.resolve(tgt_id)
        except KeyError as exc:
            return _error(404, "unknown_view", f"unknown view id {exc}")
        ds = state.dataset
        angle = angle_between_views(
            ds.load_camera(rs, rside, rv), ds.load_camera(ts, tside, tv)
        )
        return {
            "ref_id": ref_id,
            "tgt_id": tgt_id,
            "angle_deg": angle,
            "same_tree": (rs, rside) == (ts, tside),
        }

    @app.post("/api/correspond")
    async def correspond(request: Request):
        if state.dataset is None:
            return _error(503, "no_dataset", "no dataset loaded")
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "bad_json", "request body is not valid JSON")
        mode = payload.get("mode")
        if mode not in ("point", "curve", "refined"):
            return _error(400, "bad_mode", f"mode must be point|curve|refined, got {mode!r}")
        try:
            points = np.asarray(payload["points"], dtype=float)
            ref_id, tgt_id = payload["ref_id"], payload["tgt_id"]
        except (KeyError, TypeError, ValueError):
            return _error(400, "bad_body", "body needs ref_id, tgt_id, mode, points")
        if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
            return _error(400, "bad_points", "points must be a non-empty [[x, y], ...] list")
        try:
            rs, rside, rv = state.resolve(ref_id)
            ts, tside, tv = state.resolve(tgt_id)
        except KeyError as exc:
            return _error(404, "unknown_view", f"unknown view id {exc}")

        ds = state.dataset
        px = float(ds.image_px)
        pred = state.predictor
        norm = np.clip(points / px, 0.0, 1.0)
        pair_key = (ref_id, tgt_id)

        def imgs(model):
            size = model.config.input_size
            return (
                pool_image(ds.load_image(rs, rside, rv), size),
                pool_image(ds.load_image(ts, tside, tv), size),
            )

        if mode == "point":
            if pred.p2p is None:
                return _error(409, "missing_checkpoint", "no P2P checkpoint loaded")
            out = pred.predict_points(*imgs(pred.p2p), norm, pair_key=pair_key)
            pix, clamped = _to_pixels(out, px)
            return {"mode": mode, "points": pix.tolist(), "clamped": clamped}

        n = pred.c2c.config.waypoint_n if pred.c2c is not None else None
        if pred.c2c is None:
            return _error(409, "missing_checkpoint", "no C2C checkpoint loaded")
        if len(points) < n:
            return _error(
                400,
                "insufficient_points",
                f"insufficient waypoint points: got {len(points)}, need >= {n}",
            )
        try:
            waypoint = resample_polyline(norm, n)
        except ValueError as exc:
            return _error(400, "bad_points", str(exc))
        curve = pred.predict_curve(*imgs(pred.c2c), waypoint, pair_key=pair_key)
        samples = bezier_sample(curve, CURVE_SAMPLES)
        cp_pix, c1 = _to_pixels(curve.control_points, px)
        smp_pix, c2 = _to_pixels(samples, px)
        curve_payload = {
            "control_points": cp_pix.tolist(),
            "samples": smp_pix.tolist(),
        }
        if mode == "curve":
            return {"mode": mode, "curve": curve_payload, "clamped": c1 or c2}
        if pred.p2p is None:
            return _error(409, "missing_checkpoint", "refined mode needs a P2P checkpoint")
        raw = pred.predict_points(*imgs(pred.p2p), norm, pair_key=pair_key)
        refined = np.stack([infer_c2c_refined(p, curve) for p in raw])
        ref_pix, c3 = _to_pixels(refined, px)
        return {
            "mode": mode,
            "points": ref_pix.tolist(),
            "curve": curve_payload,
            "clamped": c1 or c2 or c3,
        }

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def _to_pixels(norm_points: np.ndarray, px: float) -> tuple[np.ndarray, bool]:
    pix = np.asarray(norm_points) * px
    clipped = np.clip(pix, 0.0, px - 1.0)
    return clipped, bool(np.any(clipped != pix))
