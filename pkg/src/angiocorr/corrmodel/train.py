"""Seeded training loops for the P2P and C2C models."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .. import tensornet as tn
from ..curves import fit_bezier_batch
from ..dataset import Dataset, pool_image
from ..errors import InvalidConfig, NonFiniteLoss
from .checkpoint import save_checkpoint
from .config import ModelConfig, TrainConfig
from .losses import loss_corr, loss_curve, loss_cycle_point
from .model import CorrespondenceModel


class _TreeSampler:
    """Per-tree point/waypoint index banks over the training split."""

    def __init__(self, ds: Dataset, input_size: int, split: str = "train"):
        self.ds = ds
        self.input_size = input_size
        self.trees = ds.trees(split)
        if not self.trees:
            raise InvalidConfig(f"dataset has no {split!r} trees")
        if ds.image_px % input_size != 0:
            raise InvalidConfig(
                f"stored images ({ds.image_px}px) cannot be pooled to {input_size}px"
            )
        self._point_bank: dict[tuple, np.ndarray] = {}
        self._window_bank: dict[tuple, np.ndarray] = {}

    def image(self, tree, view) -> np.ndarray:
        img = self.ds.load_image(tree[0], tree[1], view)
        return pool_image(img, self.input_size)

    def polylines_norm(self, tree, view) -> dict[int, np.ndarray]:
        labels = self.ds.load_labels(tree[0], tree[1], view)
        scale = 1.0 / self.ds.image_px
        return {k: v * scale for k, v in labels.polylines.items()}

    def point_bank(self, tree) -> np.ndarray:
        """(total, 2) array of (branch_id, arc_index) over the tree."""
        if tree not in self._point_bank:
            labels = self.ds.load_labels(tree[0], tree[1], 0)
            rows = [
                (bid, i)
                for bid in sorted(labels.polylines)
                for i in range(len(labels.polylines[bid]))
            ]
            self._point_bank[tree] = np.array(rows, dtype=int)
        return self._point_bank[tree]

    def window_bank(self, tree, n: int) -> np.ndarray:
        """(total, 2) array of (branch_id, start) waypoint windows."""
        key = (tree, n)
        if key not in self._window_bank:
            labels = self.ds.load_labels(tree[0], tree[1], 0)
            rows = [
                (bid, s)
                for bid in sorted(labels.polylines)
                for s in range(0, len(labels.polylines[bid]) - n + 1)
            ]
            self._window_bank[key] = np.array(rows, dtype=int)
        return self._window_bank[key]


def _gather_points(polylines, picks) -> np.ndarray:
    return np.stack([polylines[bid][idx] for bid, idx in picks])


def _gather_windows(polylines, picks, n) -> np.ndarray:
    return np.stack([polylines[bid][s : s + n] for bid, s in picks])


def train(
    ds: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig | None = None,
    out_dir: str | Path | None = None,
    split: str = "train",
) -> tuple[CorrespondenceModel, list[dict]]:
    """Train a model; optionally write checkpoint, loss log and loss figure.

    Deterministic for fixed (dataset, configs). Raises
    :class:`NonFiniteLoss` with step diagnostics if the objective diverges.
    """
    cfg = train_config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    model = CorrespondenceModel(model_config, seed=cfg.seed)
    sampler = _TreeSampler(ds, model_config.input_size, split=split)
    opt = tn.Adam(
        model.params,
        lr_default=cfg.lr_main,
        group_lrs={"encoder.": cfg.lr_encoder},
    )
    curve_cache: dict[tuple, np.ndarray] = {}

    def fitted_batch(tree, view, picks, segments) -> np.ndarray:
        keys = [(tree, view, int(b), int(s)) for b, s in picks]
        missing = [i for i, k in enumerate(keys) if k not in curve_cache]
        if missing:
            fresh = fit_bezier_batch(segments[missing])
            for i, cp in zip(missing, fresh):
                curve_cache[keys[i]] = cp
        return np.stack([curve_cache[k] for k in keys])

    log: list[dict] = []
    for step in range(cfg.steps):
        tree = sampler.trees[int(rng.integers(len(sampler.trees)))]
        ref_view = int(rng.integers(ds.n_views))
        tgt_view = int(rng.integers(ds.n_views - 1))
        if tgt_view >= ref_view:
            tgt_view += 1
        ref_img = sampler.image(tree, ref_view)
        tgt_img = sampler.image(tree, tgt_view)
        ref_poly = sampler.polylines_norm(tree, ref_view)
        tgt_poly = sampler.polylines_norm(tree, tgt_view)

        mem_fwd = model.encode_pair(ref_img, tgt_img)
        mem_bwd = model.encode_pair(tgt_img, ref_img)

        if model_config.task == "p2p":
            bank = sampler.point_bank(tree)
            picks = bank[rng.integers(len(bank), size=cfg.n_queries)]
            queries = _gather_points(ref_poly, picks)
            targets = _gather_points(tgt_poly, picks)
            cycle, pred = loss_cycle_point(model, mem_fwd, mem_bwd, queries)
            corr = loss_corr(pred, targets)
            total = tn.add(corr, tn.mul(tn.as_tensor(cfg.lambda_cycle), cycle))
            parts = {"corr": corr.item(), "cycle": cycle.item()}
        else:
            n = model_config.waypoint_n
            bank = sampler.window_bank(tree, n)
            picks = bank[rng.integers(len(bank), size=cfg.n_queries)]
            ref_seg = _gather_windows(ref_poly, picks, n)
            tgt_seg = _gather_windows(tgt_poly, picks, n)
            ref_cp = fitted_batch(tree, ref_view, picks, ref_seg)
            tgt_cp = fitted_batch(tree, tgt_view, picks, tgt_seg)
            total, parts, _ = loss_curve(
                model,
                mem_fwd,
                mem_bwd,
                ref_seg,
                tgt_seg,
                ref_cp,
                tgt_cp,
                lambda_sup=cfg.lambda_sup,
                lambda_cycle=cfg.lambda_cycle,
            )

        value = total.item()
        if not np.isfinite(value):
            raise NonFiniteLoss(
                f"step {step}: loss {value} (parts {parts}, tree {tree}, "
                f"views {ref_view}/{tgt_view})"
            )
        model.params.zero_grad()
        tn.backward(total)
        tn.clip_grad_norm(model.params, cfg.grad_clip)
        opt.step()

        row = {"step": step, "loss": value, **parts}
        log.append(row)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = model_config.task if model_config.task == "p2p" else (
            f"c2c{model_config.waypoint_n}"
        )
        save_checkpoint(out / f"{tag}.ckpt", model, seed=cfg.seed, step=cfg.steps)
        with open(out / f"{tag}_loss.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(log[0]))
            writer.writeheader()
            writer.writerows(log)
        try:
            from ..plots import loss_curve_figure

            loss_curve_figure(log, out / f"{tag}_loss.png")
        except Exception:
            pass  # figures are best effort; the log is the record
    return model, log
