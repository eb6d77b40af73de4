"""Training objectives for the correspondence models.

All losses are means over the query batch. The curve losses mirror the
geometry of :mod:`angiocorr.curves` exactly (same 64-sample grid and
parabolic refinement), so the differentiable values agree with the numpy
reference to float precision.
"""

from __future__ import annotations

import numpy as np

from .. import tensornet as tn
from ..curves import CHAMFER_SAMPLES, bernstein_weights
from ..errors import ShapeMismatch
from ..tensornet import Tensor


def loss_corr(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared euclidean distance between predictions and targets."""
    targets = np.asarray(targets, dtype=float)
    if pred.shape != targets.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs targets {targets.shape}")
    d = tn.power(tn.sub(pred, Tensor(targets)), 2)
    return tn.mean(tn.sum_(d, axis=1))


def loss_cycle_point(model, mem_fwd: Tensor, mem_bwd: Tensor, queries: np.ndarray):
    """Cycle consistency: re-query predictions with the image roles swapped.

    Returns (cycle_loss, predictions) so the forward predictions can be
    reused for the correspondence term.
    """
    pred = model.p2p_forward(mem_fwd, queries)
    back = model.p2p_forward(mem_bwd, pred)
    return loss_corr(back, queries), pred


def _bezier_eval_batch(cp: Tensor, u: Tensor) -> Tensor:
    """Evaluate batched curves (b, 4, 2) at per-row parameters (b, n)."""
    v = tn.sub(tn.as_tensor(1.0), u)
    weights = [
        tn.power(v, 3),
        tn.mul(tn.mul(tn.as_tensor(3.0), u), tn.power(v, 2)),
        tn.mul(tn.mul(tn.as_tensor(3.0), tn.power(u, 2)), v),
        tn.power(u, 3),
    ]
    b, n = u.shape
    total = None
    for k, w in enumerate(weights):
        cpk = tn.reshape(tn.select(cp, 1, k), (b, 1, 2))
        term = tn.mul(tn.reshape(w, (b, n, 1)), cpk)
        total = term if total is None else tn.add(total, term)
    return total  # (b, n, 2)


def chamfer_loss(pred_cp: Tensor, segments: np.ndarray) -> Tensor:
    """Differentiable curve-to-segment Chamfer distance, mean over curves.

    Per curve: sum over segment points of the min squared distance to the
    curve (64-sample grid plus one parabolic refinement step) plus the
    64-sample average of the min squared distance from curve to segment.
    """
    segments = np.asarray(segments, dtype=float)
    if pred_cp.data.ndim != 3 or pred_cp.shape[1:] != (4, 2):
        raise ShapeMismatch(f"control points must be (b, 4, 2), got {pred_cp.shape}")
    b, nseg, _ = segments.shape
    m = CHAMFER_SAMPLES
    grid = np.linspace(0.0, 1.0, m)
    du = grid[1] - grid[0]
    w64 = bernstein_weights(grid)  # (m, 4)

    samples = tn.matmul(Tensor(w64), pred_cp)  # (b, m, 2)
    diff = tn.sub(
        tn.reshape(samples, (b, 1, m, 2)), Tensor(segments.reshape(b, nseg, 1, 2))
    )
    d = tn.sum_(tn.power(diff, 2), axis=3)  # (b, nseg, m)

    base = tn.min_reduce(d, axis=2)  # (b, nseg)
    idx = np.argmin(d.data, axis=2)
    idxc = np.clip(idx, 1, m - 2)
    d0 = tn.take_along_last(d, idxc - 1)
    d1 = tn.take_along_last(d, idxc)
    d2 = tn.take_along_last(d, idxc + 1)
    denom = tn.add(tn.sub(d0, tn.mul(tn.as_tensor(2.0), d1)), d2)
    interior = (idx > 0) & (idx < m - 1)
    mask = (interior & (denom.data > 1e-30)).astype(float)
    denom_safe = tn.add(tn.mul(denom, Tensor(mask)), Tensor(1.0 - mask))
    offset = tn.div(tn.mul(tn.sub(d0, d2), tn.as_tensor(0.5 * du)), denom_safe)
    offset = tn.mul(tn.clip(offset, -du, du), Tensor(mask))
    ustar = tn.clip(tn.add(Tensor(grid[idxc]), offset), 0.0, 1.0)
    refined_pts = _bezier_eval_batch(pred_cp, ustar)  # (b, nseg, 2)
    refined = tn.sum_(tn.power(tn.sub(refined_pts, Tensor(segments)), 2), axis=2)
    per_point = tn.minimum(base, refined)

    integral = tn.mean(tn.min_reduce(d, axis=1), axis=1)  # (b,)
    per_curve = tn.add(tn.sum_(per_point, axis=1), integral)
    return tn.mean(per_curve)


def control_point_loss_batch(pred_cp: Tensor, target_cp: np.ndarray) -> Tensor:
    """Mean over curves of the summed squared control-point distances."""
    target_cp = np.asarray(target_cp, dtype=float)
    if pred_cp.shape != target_cp.shape:
        raise ShapeMismatch(f"pred {pred_cp.shape} vs target {target_cp.shape}")
    d = tn.power(tn.sub(pred_cp, Tensor(target_cp)), 2)
    return tn.mean(tn.sum_(tn.sum_(d, axis=2), axis=1))


def sample_curves(cp: Tensor, n: int) -> Tensor:
    """Sample batched curves (b, 4, 2) at n uniform parameters -> (b, n, 2)."""
    w = bernstein_weights(np.linspace(0.0, 1.0, n))
    return tn.matmul(Tensor(w), cp)


def loss_curve(
    model,
    mem_fwd: Tensor,
    mem_bwd: Tensor,
    ref_segments: np.ndarray,
    tgt_segments: np.ndarray,
    ref_curves: np.ndarray,
    tgt_curves: np.ndarray,
    lambda_sup: float,
    lambda_cycle: float,
):
    """Full curve objective: forward chamfer + supervised control points,
    plus the curve cycle term with swapped image roles.

    ref/tgt_segments: (b, N, 2); ref/tgt_curves: fitted control points
    (b, 4, 2). Returns (total, parts dict, predicted control points).
    """
    pred = model.c2c_forward(mem_fwd, ref_segments)
    l_c2c = chamfer_loss(pred, tgt_segments)
    l_sup = control_point_loss_batch(pred, tgt_curves)

    n = model.config.waypoint_n
    resampled = sample_curves(pred, n)  # queries for the reverse pass
    pred_cyc = model.c2c_forward(mem_bwd, resampled)
    l_cyc = tn.add(
        chamfer_loss(pred_cyc, ref_segments),
        tn.mul(tn.as_tensor(lambda_sup), control_point_loss_batch(pred_cyc, ref_curves)),
    )

    total = tn.add(
        tn.add(l_c2c, tn.mul(tn.as_tensor(lambda_sup), l_sup)),
        tn.mul(tn.as_tensor(lambda_cycle), l_cyc),
    )
    parts = {
        "c2c": l_c2c.item(),
        "sup": l_sup.item(),
        "cycle": l_cyc.item(),
    }
    return total, parts, pred
