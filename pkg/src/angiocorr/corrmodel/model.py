"""The correspondence transformer: shared conv encoder, side-by-side feature
canvas with sinusoidal positional encoding, transformer encoder/decoder and
coordinate / control-point heads.

Canvas convention: both images of a pair share one unit canvas; the
reference occupies x in [0, 0.5] and the target x in [0.5, 1]. Public
methods take and return coordinates normalized to each image's own [0, 1]^2
domain; the canvas mapping is internal. Query coordinates are clamped onto
the canvas before encoding (re-queries during cycle training may drift
outside it).
"""

from __future__ import annotations

import numpy as np

from .. import tensornet as tn
from ..errors import DomainError, ShapeMismatch, WaypointSizeMismatch
from ..tensornet import Tensor
from .config import ModelConfig


def positional_encoding_np(x: np.ndarray, channels: int) -> np.ndarray:
    """Sinusoidal encoding with linearly increasing frequencies (numpy).

    x has shape (..., 2) with canvas coordinates in [0, 1]^2; the result has
    shape (..., channels), blocks [sin(k pi x), sin(k pi y), cos(k pi x),
    cos(k pi y)] for k = 1 .. channels / 4.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ShapeMismatch(f"expected (..., 2) coordinates, got {x.shape}")
    if np.any(x < -1e-9) or np.any(x > 1 + 1e-9):
        raise DomainError("coordinates outside the unit canvas")
    k = np.arange(1, channels // 4 + 1, dtype=float)
    ang = np.pi * k[:, None] * x[..., None, :]  # (..., C/4, 2)
    blocks = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)  # (..., C/4, 4)
    return blocks.reshape(*x.shape[:-1], channels)


def positional_encoding(x: Tensor, channels: int) -> Tensor:
    """Differentiable variant of :func:`positional_encoding_np`."""
    if x.shape[-1] != 2:
        raise ShapeMismatch(f"expected (..., 2) coordinates, got {x.shape}")
    k = np.arange(1, channels // 4 + 1, dtype=float)
    lead = x.shape[:-1]
    ang = tn.mul(tn.reshape(x, lead + (1, 2)), Tensor(np.pi * k.reshape(-1, 1)))
    blocks = tn.concat([tn.sin(ang), tn.cos(ang)], axis=-1)
    return tn.reshape(blocks, lead + (channels,))


class _EncoderLayer:
    def __init__(self, store, name, cfg: ModelConfig, rng):
        c = cfg.channels
        self.ln1 = tn.LayerNormParams(store, name + ".ln1", c)
        self.attn = tn.AttentionParams(store, name + ".attn", c, rng)
        self.ln2 = tn.LayerNormParams(store, name + ".ln2", c)
        self.ffn = tn.Mlp(store, name + ".ffn", [c, c * cfg.ffn_ratio, c], rng)
        self.heads = cfg.heads

    def __call__(self, h: Tensor) -> Tensor:
        z = self.ln1(h)
        h = tn.add(h, tn.multi_head_attention(z, z, z, self.heads, self.attn))
        return tn.add(h, self.ffn(self.ln2(h)))


class _DecoderLayer:
    """Cross-attention-only decoder layer (queries attend to the memory)."""

    def __init__(self, store, name, cfg: ModelConfig, rng):
        c = cfg.channels
        self.ln1 = tn.LayerNormParams(store, name + ".ln1", c)
        self.attn = tn.AttentionParams(store, name + ".attn", c, rng)
        self.ln2 = tn.LayerNormParams(store, name + ".ln2", c)
        self.ffn = tn.Mlp(store, name + ".ffn", [c, c * cfg.ffn_ratio, c], rng)
        self.heads = cfg.heads

    def __call__(self, h: Tensor, memory: Tensor) -> Tensor:
        h = tn.add(h, tn.multi_head_attention(self.ln1(h), memory, memory, self.heads, self.attn))
        return tn.add(h, self.ffn(self.ln2(h)))


class CorrespondenceModel:
    """P2P or C2C correspondence transformer over a two-image canvas."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        store = tn.ParameterStore()
        self.params = store

        strides = config.conv_strides()
        chans = config.conv_channels()
        self.conv_blocks = [
            tn.Conv(store, f"encoder.conv{i}", cin, cout, rng, stride=s)
            for i, (cin, cout, s) in enumerate(zip([1] + chans[:-1], chans, strides))
        ]
        self.enc_layers = [
            _EncoderLayer(store, f"trans_enc.{i}", config, rng)
            for i in range(config.encoder_layers)
        ]
        self.enc_norm = tn.LayerNormParams(store, "trans_enc.norm", config.channels)
        self.dec_layers = [
            _DecoderLayer(store, f"trans_dec.{i}", config, rng)
            for i in range(config.decoder_layers)
        ]
        self.dec_norm = tn.LayerNormParams(store, "trans_dec.norm", config.channels)

        c = config.channels
        head_dims = [c] * config.head_mlp_layers + [2 if config.task == "p2p" else 8]
        self.head = tn.Mlp(store, "head.out", head_dims, rng)
        if config.task == "c2c":
            self.seg_mlp = tn.Mlp(
                store, "head.segment", [config.waypoint_n * c, c, c, c], rng
            )
        self._canvas_pe = self._make_canvas_pe()

    def _make_canvas_pe(self) -> np.ndarray:
        fh, fw = self.config.feature_hw
        rows, cols = np.mgrid[0:fh, 0 : 2 * fw]
        coords = np.stack(
            [(cols + 0.5) / (2 * fw), (rows + 0.5) / fh], axis=-1
        ).reshape(-1, 2)
        return positional_encoding_np(coords, self.config.channels)

    # --- encoding -------------------------------------------------------

    def encode_images(self, img_ref: np.ndarray, img_tgt: np.ndarray) -> Tensor:
        """Shared conv backbone over both images; returns (2, C, fh, fw)."""
        size = self.config.input_size
        for img in (img_ref, img_tgt):
            if img.shape != (size, size):
                raise ShapeMismatch(f"image shape {img.shape}, expected {size}x{size}")
        x = tn.Tensor(np.stack([img_ref, img_tgt])[:, None, :, :] - 0.5)
        for i, block in enumerate(self.conv_blocks):
            x = block(x)
            if i < len(self.conv_blocks) - 1:
                x = tn.relu(x)
        fh, fw = self.config.feature_hw
        if x.shape[2:] != (fh, fw):
            raise ShapeMismatch(f"encoder produced {x.shape[2:]}, expected {(fh, fw)}")
        return x

    def encode_pair(self, img_ref: np.ndarray, img_tgt: np.ndarray) -> Tensor:
        """Context memory of a pair: (2 * fh * fw, C) transformer tokens."""
        feats = self.encode_images(img_ref, img_tgt)
        ref = tn.select(feats, 0, 0)  # (C, fh, fw)
        tgt = tn.select(feats, 0, 1)
        canvas = tn.concat([ref, tgt], axis=2)  # (C, fh, 2*fw)
        fh, fw = self.config.feature_hw
        tokens = tn.reshape(
            tn.transpose(canvas, (1, 2, 0)), (fh * 2 * fw, self.config.channels)
        )
        h = tn.add(tokens, Tensor(self._canvas_pe))
        for layer in self.enc_layers:
            h = layer(h)
        return self.enc_norm(h)

    # --- canvas helpers ----------------------------------------------------

    @staticmethod
    def _to_canvas(points: Tensor, half: str) -> Tensor:
        offset = 0.0 if half == "ref" else 0.5
        clamped = tn.clip(points, 0.0, 1.0)
        return tn.add(
            tn.mul(clamped, Tensor(np.array([0.5, 1.0]))),
            Tensor(np.array([offset, 0.0])),
        )

    # --- decoding ------------------------------------------------------------

    def _decode(self, query_emb: Tensor, memory: Tensor) -> Tensor:
        h = query_emb
        for layer in self.dec_layers:
            h = layer(h, memory)
        return self.head(self.dec_norm(h))

    def p2p_forward(self, memory: Tensor, queries) -> Tensor:
        """Predict target-image coordinates for reference-image queries.

        queries: (n, 2) array or tensor normalized to the reference image.
        Returns an (n, 2) tensor normalized to the target image.
        """
        if self.config.task != "p2p":
            raise ShapeMismatch("p2p_forward called on a c2c model")
        q = tn.as_tensor(queries)
        if q.shape[-1] != 2 or q.data.ndim != 2:
            raise ShapeMismatch(f"queries must be (n, 2), got {q.shape}")
        emb = positional_encoding(self._to_canvas(q, "ref"), self.config.channels)
        return self._decode(emb, memory)

    def c2c_forward(self, memory: Tensor, waypoints) -> Tensor:
        """Predict Bezier control points for reference waypoints.

        waypoints: (b, N, 2) array or tensor normalized to the reference
        image. Returns a (b, 4, 2) tensor normalized to the target image.
        """
        if self.config.task != "c2c":
            raise ShapeMismatch("c2c_forward called on a p2p model")
        w = tn.as_tensor(waypoints)
        if w.data.ndim == 2:
            w = tn.reshape(w, (1,) + w.shape)
        n = self.config.waypoint_n
        if w.data.ndim != 3 or w.shape[1] != n or w.shape[2] != 2:
            raise WaypointSizeMismatch(
                f"waypoints must be (b, {n}, 2), got {w.shape}"
            )
        b = w.shape[0]
        c = self.config.channels
        pe = positional_encoding(self._to_canvas(w, "ref"), c)  # (b, N, C)
        seg = self.seg_mlp(tn.reshape(pe, (b, n * c)))  # (b, C)
        out = self._decode(seg, memory)  # (b, 8)
        return tn.reshape(out, (b, 4, 2))
