"""Model and training configuration for the correspondence transformers."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import InvalidConfig

TASKS = ("p2p", "c2c")


def _prime_factors(n: int) -> list[int]:
    factors = []
    d = 2
    while n > 1:
        while n % d == 0:
            factors.append(d)
            n //= d
        d += 1
    return factors


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes. The toy defaults train on a CPU in minutes; the
    full-size variant (input 320, 256 channels, 6+6 layers, 8 heads) stays
    constructible for shape checks."""

    task: str = "p2p"
    input_size: int = 128
    feature_hw: tuple[int, int] = (16, 16)
    channels: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    head_mlp_layers: int = 3
    waypoint_n: int = 10
    ffn_ratio: int = 4

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidConfig(f"task must be one of {TASKS}, got {self.task!r}")
        if self.channels % 4 != 0:
            raise InvalidConfig("channels must be divisible by 4 (positional encoding)")
        if self.channels % self.heads != 0:
            raise InvalidConfig("channels must be divisible by heads")
        fh, fw = self.feature_hw
        if fh != fw:
            raise InvalidConfig("feature map must be square")
        if self.input_size % fh != 0:
            raise InvalidConfig(f"input_size {self.input_size} not divisible by {fh}")
        if len(self.conv_strides()) > 5:
            raise InvalidConfig(
                f"cannot reach {self.feature_hw} from {self.input_size} in 5 conv blocks"
            )
        if self.head_mlp_layers < 1:
            raise InvalidConfig("head needs at least one layer")
        if self.task == "c2c" and self.waypoint_n < 4:
            raise InvalidConfig("waypoint_n must be >= 4")

    def conv_strides(self) -> list[int]:
        """Per-block strides of the 5-block encoder (padded with 1s)."""
        factors = sorted(_prime_factors(self.input_size // self.feature_hw[0]))
        return factors + [1] * max(0, 5 - len(factors))

    def conv_channels(self) -> list[int]:
        c = self.channels
        ramp = [max(c // 8, 2), max(c // 4, 4), max(c // 2, 8), c, c]
        return ramp[: len(self.conv_strides())]

    @property
    def n_tokens(self) -> int:
        fh, fw = self.feature_hw
        return fh * fw * 2

    @classmethod
    def toy(cls, task: str = "p2p", waypoint_n: int = 10) -> "ModelConfig":
        return cls(task=task, waypoint_n=waypoint_n)

    @classmethod
    def full(cls, task: str = "p2p", waypoint_n: int = 10) -> "ModelConfig":
        return cls(
            task=task,
            input_size=320,
            channels=256,
            encoder_layers=6,
            decoder_layers=6,
            heads=8,
            waypoint_n=waypoint_n,
        )

    @classmethod
    def tiny(cls, task: str = "p2p", waypoint_n: int = 4) -> "ModelConfig":
        """Smallest self-consistent shape, for gradient checks."""
        return cls(
            task=task,
            input_size=32,
            feature_hw=(4, 4),
            channels=8,
            encoder_layers=1,
            decoder_layers=1,
            heads=2,
            waypoint_n=waypoint_n,
            ffn_ratio=2,
        )

    def to_json(self) -> dict:
        d = asdict(self)
        d["feature_hw"] = list(self.feature_hw)
        return d

    @classmethod
    def from_json(cls, rec: dict) -> "ModelConfig":
        rec = dict(rec)
        rec["feature_hw"] = tuple(rec["feature_hw"])
        return cls(**rec)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    seed: int = 0
    lr_encoder: float = 1e-5
    lr_main: float = 1e-4
    lambda_cycle: float = 1.0
    lambda_sup: float = 0.5
    n_queries: int = 100
    grad_clip: float = 10.0
    log_every: int = 10

    @classmethod
    def toy(cls, steps: int = 1000, seed: int = 0) -> "TrainConfig":
        # the default rates assume a pretrained backbone; the from-scratch
        # encoder wants a hotter schedule, and the softer cycle weight speeds
        # up correspondence fitting in short runs
        return cls(
            steps=steps, seed=seed, lr_encoder=3e-4, lr_main=1e-3, lambda_cycle=0.5
        )


@dataclass
class QueryBatch:
    """One training/eval sample: an image pair with queries and targets.

    Point coordinates are normalized to each image's own [0, 1]^2 domain;
    ``queries`` live on the reference image, ``targets`` on the target image.
    """

    ref_image: np.ndarray
    tgt_image: np.ndarray
    queries: np.ndarray  # (n, 2) for p2p; (n, N, 2) waypoints for c2c
    targets: np.ndarray  # (n, 2) for p2p; (n, N, 2) target segments for c2c
