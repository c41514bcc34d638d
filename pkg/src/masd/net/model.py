"""Dual-branch convolutional brain model and classifier head.

Each branch is a compact EEGNet-style stack: temporal convolution, depthwise
spatial convolution across channels, ELU, average pooling, separable
convolution, pooling, then an affine projection to the branch feature
dimension. The two branch features are concatenated and classified by an
affine head. Everything runs in float64 on the in-package autodiff engine.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..seeding import derive_rng
from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"MASD"
CHECKPOINT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ModelConfig:
    channels: int
    samples: int
    n_classes: int = 48
    temporal_kernel: int = 100
    n_temporal_filters: int = 8
    depth_multiplier: int = 2
    separable_kernel: int = 16
    pool1: int = 4
    pool2: int = 8
    dropout_p: float = 0.25
    branch_dims: tuple[int, int] = (64, 64)
    bn_momentum: float = BN_MOMENTUM

    def validate(self) -> None:
        positive = {
            "channels": self.channels,
            "samples": self.samples,
            "n_classes": self.n_classes,
            "temporal_kernel": self.temporal_kernel,
            "n_temporal_filters": self.n_temporal_filters,
            "depth_multiplier": self.depth_multiplier,
            "separable_kernel": self.separable_kernel,
            "pool1": self.pool1,
            "pool2": self.pool2,
        }
        for name, value in positive.items():
            if int(value) < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValueError("bn_momentum must be in (0, 1]")
        f1, f2 = self.branch_dims
        if f1 < 1 or f2 < 1:
            raise ValueError("branch dims must be >= 1")
        if self.samples % self.pool1 != 0 or (self.samples // self.pool1) % self.pool2 != 0:
            raise ValueError(
                f"samples={self.samples} must be divisible by pool1*pool2="
                f"{self.pool1}*{self.pool2}"
            )


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _same_pads(kernel: int) -> tuple[int, int]:
    return (kernel - 1) // 2, kernel // 2


class _BatchStandardize:
    """Per-feature batch standardization with running stats for eval mode."""

    def __init__(self, n_features: int, prefix: str, momentum: float = BN_MOMENTUM):
        self.gamma = Tensor(np.ones(n_features), requires_grad=True, name=f"{prefix}.gamma")
        self.beta = Tensor(np.zeros(n_features), requires_grad=True, name=f"{prefix}.beta")
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.prefix = prefix
        self.momentum = momentum

    def __call__(self, x: Tensor, feature_axis: int, training: bool) -> Tensor:
        if training:
            out, mu, var = ad.batch_standardize(x, self.gamma, self.beta, feature_axis, BN_EPS)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var
            return out
        # eval: frozen stats fold into one scale/shift pair per feature
        shape = [1] * x.ndim
        shape[feature_axis] = x.shape[feature_axis]
        inv = 1.0 / np.sqrt(self.running_var + BN_EPS)
        scale = ad.reshape(self.gamma * Tensor(inv), tuple(shape))
        shift = ad.reshape(self.beta - self.gamma * Tensor(self.running_mean * inv), tuple(shape))
        return x * scale + shift

    def params(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def stats(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{self.prefix}.running_mean", self.running_mean),
                (f"{self.prefix}.running_var", self.running_var)]

    def set_stats(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.running_mean = mean.copy()
        self.running_var = var.copy()


class _Branch:
    """One EEGNet-style feature extractor ending in a branch-dim projection."""

    def __init__(self, cfg: ModelConfig, out_dim: int, rng: np.random.Generator, prefix: str):
        f = cfg.n_temporal_filters
        d = cfg.depth_multiplier
        m = f * d
        k = cfg.temporal_kernel
        ks = cfg.separable_kernel
        t_flat = cfg.samples // (cfg.pool1 * cfg.pool2)
        self.cfg = cfg
        self.out_dim = out_dim
        self.w_temporal = Tensor(_glorot(rng, (f, k), k, f), requires_grad=True, name=f"{prefix}.w_temporal")
        self.bn1 = _BatchStandardize(f, f"{prefix}.bn1", cfg.bn_momentum)
        self.w_depthwise = Tensor(
            _glorot(rng, (f, cfg.channels, d), cfg.channels, d),
            requires_grad=True,
            name=f"{prefix}.w_depthwise",
        )
        self.bn2 = _BatchStandardize(m, f"{prefix}.bn2", cfg.bn_momentum)
        self.w_sep_depth = Tensor(_glorot(rng, (m, ks), ks, 1), requires_grad=True, name=f"{prefix}.w_sep_depth")
        self.w_sep_point = Tensor(_glorot(rng, (m, m), m, m), requires_grad=True, name=f"{prefix}.w_sep_point")
        self.bn3 = _BatchStandardize(m, f"{prefix}.bn3", cfg.bn_momentum)
        self.w_proj = Tensor(
            _glorot(rng, (m * t_flat, out_dim), m * t_flat, out_dim),
            requires_grad=True,
            name=f"{prefix}.w_proj",
        )
        self.b_proj = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{prefix}.b_proj")

    def __call__(self, x: Tensor, training: bool, dropout_rng: np.random.Generator | None) -> Tensor:
        cfg = self.cfg
        b = x.shape[0]
        m = cfg.n_temporal_filters * cfg.depth_multiplier

        # temporal convolution, same padding: (B,C,T) -> (B,F,C,T)
        pl, pr = _same_pads(cfg.temporal_kernel)
        windows = ad.unfold_last(x, cfg.temporal_kernel, pl, pr)
        flat = ad.reshape(windows, (-1, cfg.temporal_kernel))
        h = flat @ ad.transpose(self.w_temporal, (1, 0))
        h = ad.reshape(h, (b, x.shape[1], cfg.samples, cfg.n_temporal_filters))
        h = ad.transpose(h, (0, 3, 1, 2))
        h = self.bn1(h, feature_axis=1, training=training)

        # depthwise spatial convolution across channels: -> (B,M,T)
        h = ad.transpose(h, (0, 1, 3, 2))
        h = h @ self.w_depthwise
        h = ad.transpose(h, (0, 1, 3, 2))
        h = ad.reshape(h, (b, m, cfg.samples))
        h = self.bn2(h, feature_axis=1, training=training)
        h = ad.elu(h)
        h = ad.avg_pool_last(h, cfg.pool1)
        h = self._dropout(h, training, dropout_rng)

        # separable convolution: per-map temporal filter then pointwise mix
        pl, pr = _same_pads(cfg.separable_kernel)
        windows = ad.unfold_last(h, cfg.separable_kernel, pl, pr)
        h = (windows * ad.reshape(self.w_sep_depth, (1, m, 1, cfg.separable_kernel))).sum(axis=3)
        h = ad.transpose(h, (0, 2, 1)) @ self.w_sep_point
        h = ad.transpose(h, (0, 2, 1))
        h = self.bn3(h, feature_axis=1, training=training)
        h = ad.elu(h)
        h = ad.avg_pool_last(h, cfg.pool2)
        h = self._dropout(h, training, dropout_rng)

        h = ad.reshape(h, (b, -1))
        return h @ self.w_proj + self.b_proj

    def _dropout(self, h: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        p = self.cfg.dropout_p
        if not training or p == 0.0 or rng is None:
            return h
        mask = (rng.random(h.shape) >= p) / (1.0 - p)
        return h * Tensor(mask)

    def params(self) -> list[Tensor]:
        return [
            self.w_temporal,
            *self.bn1.params(),
            self.w_depthwise,
            *self.bn2.params(),
            self.w_sep_depth,
            self.w_sep_point,
            *self.bn3.params(),
            self.w_proj,
            self.b_proj,
        ]

    def stats(self) -> list[tuple[str, np.ndarray]]:
        return [*self.bn1.stats(), *self.bn2.stats(), *self.bn3.stats()]


@dataclass
class ForwardOut:
    features_text: Tensor
    features_speech: Tensor
    logits: Tensor


class Model:
    """Two feature branches plus an affine classifier head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.training = True
        rng = derive_rng(seed, 0x0DE1)
        f1, f2 = cfg.branch_dims
        self.branch_t = _Branch(cfg, f1, rng, "branch_t")
        self.branch_s = _Branch(cfg, f2, rng, "branch_s")
        self.w_head = Tensor(
            _glorot(rng, (f1 + f2, cfg.n_classes), f1 + f2, cfg.n_classes),
            requires_grad=True,
            name="head.w",
        )
        self.b_head = Tensor(np.zeros(cfg.n_classes), requires_grad=True, name="head.b")
        self._dropout_rng = derive_rng(seed, 0xD0)

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False

    def reseed_dropout(self, seed: int) -> None:
        self._dropout_rng = derive_rng(seed, 0xD0)

    def _check_batch(self, batch: np.ndarray) -> Tensor:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 3 or batch.shape[1:] != (self.cfg.channels, self.cfg.samples):
            raise ValueError(
                f"batch shape {batch.shape} does not match "
                f"(B, {self.cfg.channels}, {self.cfg.samples})"
            )
        return Tensor(batch)

    def forward(self, batch: np.ndarray) -> ForwardOut:
        x = self._check_batch(batch)
        rng = self._dropout_rng if self.training else None
        zt = self.branch_t(x, self.training, rng)
        zs = self.branch_s(x, self.training, rng)
        z = ad.concat([zt, zs], axis=1)
        logits = z @ self.w_head + self.b_head
        return ForwardOut(features_text=zt, features_speech=zs, logits=logits)

    def forward_features(self, batch: np.ndarray) -> tuple[Tensor, Tensor]:
        out = self.forward(batch)
        return out.features_text, out.features_speech

    def forward_logits(self, batch: np.ndarray) -> Tensor:
        return self.forward(batch).logits

    def params(self) -> list[Tensor]:
        return [*self.branch_t.params(), *self.branch_s.params(), self.w_head, self.b_head]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent float64 state in declaration order."""
        arrays: list[tuple[str, np.ndarray]] = [(p.name, p.data) for p in self.params()]
        arrays.extend(self.branch_t.stats())
        arrays.extend(self.branch_s.stats())
        return arrays

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in self.state_arrays():
            if name not in state:
                raise KeyError(f"state missing array {name!r}")
            if state[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {arr.shape}")
        for p in self.params():
            p.data = state[p.name].copy()
            p.grad = np.zeros_like(p.data)
        for branch in (self.branch_t, self.branch_s):
            for bn in (branch.bn1, branch.bn2, branch.bn3):
                bn.set_stats(state[f"{bn.prefix}.running_mean"], state[f"{bn.prefix}.running_var"])

    def summary(self) -> dict[str, int]:
        counts = {p.name: int(p.data.size) for p in self.params()}
        counts["total"] = int(sum(p.data.size for p in self.params()))
        return counts


def save_checkpoint(model: Model, path) -> None:
    """Versioned binary: magic, version, config JSON, float64 LE state blocks."""
    cfg_json = json.dumps(asdict(model.cfg), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        for _, arr in model.state_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        raw_cfg = json.loads(fh.read(cfg_len).decode("utf-8"))
        raw_cfg["branch_dims"] = tuple(raw_cfg["branch_dims"])
        model = Model(ModelConfig(**raw_cfg), seed=0)
        state: dict[str, np.ndarray] = {}
        for name, arr in model.state_arrays():
            buf = fh.read(arr.size * 8)
            if len(buf) != arr.size * 8:
                raise ValueError(f"checkpoint truncated while reading {name!r}")
            state[name] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise ValueError("checkpoint has trailing bytes")
    model.load_state_dict(state)
    return model
