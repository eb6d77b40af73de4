from __future__ import annotations

import numpy as np
import pytest

import angiocorr.tensornet as tn
from angiocorr.errors import MissingGrad, ShapeMismatch


def test_matmul_shape_rule():
    a = tn.Tensor(np.ones((2, 3)))
    b = tn.Tensor(np.ones((3, 4)))
    assert tn.matmul(a, b).shape == (2, 4)
    with pytest.raises(ShapeMismatch):
        tn.matmul(a, tn.Tensor(np.ones((4, 2))))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    y = tn.softmax(tn.Tensor(rng.normal(size=(6, 9)) * 4)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_conv2d_matches_sliding_window_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 1, 5, 5))
    w = np.ones((1, 1, 3, 3))
    out = tn.conv2d(tn.Tensor(x), tn.Tensor(w), stride=1, padding=1).data

    padded = np.pad(x[0, 0], 1)
    oracle = np.empty((5, 5))
    for i in range(5):
        for j in range(5):
            oracle[i, j] = padded[i : i + 3, j : j + 3].sum()
    np.testing.assert_allclose(out[0, 0], oracle, atol=1e-12)


def test_conv2d_stride_output_shape():
    x = tn.Tensor(np.zeros((2, 3, 16, 16)))
    w = tn.Tensor(np.zeros((8, 3, 3, 3)))
    assert tn.conv2d(x, w, stride=2, padding=1).shape == (2, 8, 8, 8)


def _attention_setup(seed, tq=5, tk=7, c=8, heads=2):
    rng = np.random.default_rng(seed)
    store = tn.ParameterStore()
    proj = tn.AttentionParams(store, "attn", c, rng)
    q = tn.Tensor(rng.normal(size=(tq, c)))
    k = tn.Tensor(rng.normal(size=(tk, c)))
    v = tn.Tensor(rng.normal(size=(tk, c)))
    return store, proj, q, k, v, heads


def test_attention_single_position_returns_projected_v():
    store, proj, q, k, v, heads = _attention_setup(2, tq=4, tk=1)
    out = tn.multi_head_attention(q, k, v, heads, proj).data
    projected = proj.wo(proj.wv(v)).data
    for row in out:
        np.testing.assert_allclose(row, projected[0], atol=1e-12)
    q2 = tn.Tensor(np.random.default_rng(3).normal(size=q.shape))
    out2 = tn.multi_head_attention(q2, k, v, heads, proj).data
    np.testing.assert_allclose(out2, out, atol=1e-12)


def test_attention_permutation_invariance_identity_projections():
    store, proj, q, k, v, heads = _attention_setup(4)
    for lin in (proj.wq, proj.wk, proj.wv, proj.wo):
        lin.w.data = np.eye(lin.w.data.shape[0])
        lin.b.data[:] = 0.0
    base = tn.multi_head_attention(q, k, v, heads, proj).data
    perm = np.random.default_rng(5).permutation(k.shape[0])
    shuffled = tn.multi_head_attention(
        q, tn.Tensor(k.data[perm]), tn.Tensor(v.data[perm]), heads, proj
    ).data
    np.testing.assert_allclose(shuffled, base, atol=1e-12)


def test_attention_matches_literal_oracle():
    store, proj, q, k, v, heads = _attention_setup(6)
    got = tn.multi_head_attention(q, k, v, heads, proj).data

    def lin(layer, x):
        return x @ layer.w.data + layer.b.data

    qp, kp, vp = lin(proj.wq, q.data), lin(proj.wk, k.data), lin(proj.wv, v.data)
    c = q.shape[1]
    dh = c // heads
    heads_out = []
    for hh in range(heads):
        sl = slice(hh * dh, (hh + 1) * dh)
        scores = qp[:, sl] @ kp[:, sl].T / np.sqrt(dh)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        heads_out.append(attn @ vp[:, sl])
    want = lin(proj.wo, np.concatenate(heads_out, axis=1))
    np.testing.assert_allclose(got, want, atol=1e-12)


# --- gradient checks ------------------------------------------------------------

def _dense_builder(rng):
    store = tn.ParameterStore()
    w1 = store.register("w1", tn.Tensor(rng.normal(size=(4, 6)) * 0.5))
    w2 = store.register("w2", tn.Tensor(rng.normal(size=(6, 4)) * 0.5))
    ln = tn.LayerNormParams(store, "ln", 4)
    x = rng.normal(size=(5, 4)) + 0.3
    tgt = rng.normal(size=(5, 4))

    def build():
        h = tn.relu(tn.matmul(tn.Tensor(x), w1))
        h = tn.matmul(h, w2)
        h = ln(h)
        h = tn.softmax(h)
        h = h + tn.sin(h) + tn.cos(tn.mul(h, tn.as_tensor(0.7)))
        d = tn.power(tn.sub(h, tn.Tensor(tgt)), 2)
        return tn.mean(d)

    return store, build


def _conv_builder(rng):
    store = tn.ParameterStore()
    conv = tn.Conv(store, "c1", 2, 4, rng, stride=2)
    head = tn.Linear(store, "head", 4 * 3 * 3, 3, rng)
    x = rng.normal(size=(1, 2, 6, 6))

    def build():
        h = tn.relu(conv(tn.Tensor(x)))
        h = tn.reshape(h, (1, 4 * 3 * 3))
        h = head(h)
        return tn.mean(tn.power(h, 2))

    return store, build


def _attention_builder(rng):
    store = tn.ParameterStore()
    proj = tn.AttentionParams(store, "attn", 8, rng)
    q = rng.normal(size=(3, 8))
    kv = rng.normal(size=(5, 8))

    def build():
        out = tn.multi_head_attention(tn.Tensor(q), tn.Tensor(kv), tn.Tensor(kv), 2, proj)
        return tn.mean(tn.power(out, 2))

    return store, build


def _gather_builder(rng):
    # chamfer-style composition: min over samples, gather, elementwise minimum
    store = tn.ParameterStore()
    cp = store.register("cp", tn.Tensor(rng.uniform(0.1, 0.9, size=(4, 2))))
    seg = rng.uniform(0, 1, size=(6, 2))
    u = np.linspace(0, 1, 16)
    w = np.stack([(1 - u) ** 3, 3 * u * (1 - u) ** 2, 3 * u**2 * (1 - u), u**3], axis=-1)

    def build():
        samples = tn.matmul(tn.Tensor(w), cp)  # (16, 2)
        diff = tn.sub(
            tn.reshape(samples, (1, 16, 2)), tn.Tensor(seg.reshape(6, 1, 2))
        )
        d = tn.sum_(tn.power(diff, 2), axis=2)  # (6, 16)
        idx = np.clip(np.argmin(d.data, axis=1), 1, 14)
        near = tn.take_along_last(d, idx)
        lo = tn.take_along_last(d, idx - 1)
        mixed = tn.minimum(near, tn.mul(lo, tn.as_tensor(0.9)))
        total = tn.sum_(mixed) + tn.mean(tn.min_reduce(d, axis=0))
        first = tn.select(tn.concat([samples, samples], axis=1), 1, 0)
        return tn.sum_(total) + tn.mean(tn.power(first, 2))

    return store, build


@pytest.mark.parametrize(
    "builder", [_dense_builder, _conv_builder, _attention_builder, _gather_builder]
)
def test_grad_check_ops(builder):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        store, build = builder(rng)
        err = tn.grad_check(build, store, np.random.default_rng(seed + 100), n_coords=6)
        assert err <= 1e-4, f"seed {seed}: max rel error {err:.2e}"


def test_grad_check_quadratic_is_tight():
    store = tn.ParameterStore()
    w = store.register("w", tn.Tensor(np.array([1.0, -2.0, 0.5])))

    def build():
        return tn.sum_(tn.power(w, 2))

    err = tn.grad_check(build, store, np.random.default_rng(0), n_coords=3)
    assert err <= 1e-9


def test_backward_requires_scalar():
    t = tn.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        tn.backward(t)


# --- Adam -------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    store = tn.ParameterStore()
    w = store.register("w", tn.Tensor(np.array([1.0, 2.0])))
    w.grad = np.zeros(2)
    before = w.data.copy()
    tn.Adam(store, lr_default=0.1).step()
    np.testing.assert_array_equal(w.data, before)


def test_adam_descends_quadratic():
    store = tn.ParameterStore()
    w = store.register("w", tn.Tensor(np.array([1.0])))
    opt = tn.Adam(store, lr_default=0.1)
    loss = tn.sum_(tn.power(w, 2))
    tn.backward(loss)
    opt.step()
    assert w.data[0] < 1.0


def test_adam_group_learning_rates():
    store = tn.ParameterStore()
    store.register("encoder.c1.w", tn.Tensor(np.ones(2)))
    store.register("decoder.l1.w", tn.Tensor(np.ones(2)))
    opt = tn.Adam(store, lr_default=1e-4, group_lrs={"encoder.": 1e-5})
    assert opt.lr_for("encoder.c1.w") == 1e-5
    assert opt.lr_for("decoder.l1.w") == 1e-4


def test_adam_missing_grad():
    store = tn.ParameterStore()
    store.register("w", tn.Tensor(np.ones(2)))
    with pytest.raises(MissingGrad):
        tn.Adam(store).step()


def test_forward_bitwise_determinism():
    def run():
        rng = np.random.default_rng(42)
        store = tn.ParameterStore()
        mlp = tn.Mlp(store, "m", [4, 8, 2], rng)
        x = tn.Tensor(np.random.default_rng(1).normal(size=(3, 4)))
        return mlp(x).data

    np.testing.assert_array_equal(run(), run())
