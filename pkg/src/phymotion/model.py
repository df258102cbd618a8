"""Dual-branch motion/appearance encoder with a neural-ODE predictor."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ParameterError, RangeError, ShapeError
from .nn import MLP, LayerNorm, Linear, Module, TemporalAttentionBlock
from .ode import DynamicsFn, rollout
from .physim import CLASS_NAMES, FRAME_DT
from .tensor import Parameter

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    d_obs: int = 32
    d_h: int = 64
    d_app: int = 16
    d_mot: int = 32
    d_z: int = 32
    width: int = 64
    n_blocks: int = 2
    n_heads: int = 1
    mlp_ratio: int = 2
    max_len: int = 600
    dyn_hidden: int = 64
    readout_hidden: int = 64
    classifier_hidden: int = 64
    n_classes: int = len(CLASS_NAMES)
    temporal_attention: bool = True
    causal: bool = False
    structured_dynamics: bool = False
    time_input: bool = False
    solver: str = "rk4"
    substeps: int = 4
    frame_dt: float = FRAME_DT
    horizon: int = 3
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ParameterError(f"unknown model config keys: {unknown}")
        return cls(**d)


@dataclass
class FrameFeatures:
    h: T.Tensor  # (..., T, d_h)
    f_app: T.Tensor  # (..., T, d_app)
    f_mot: T.Tensor  # (..., T, d_mot)

    @property
    def n_frames(self):
        return self.h.shape[-2]


class MotionHead(Module):
    def __init__(self, cfg, rng):
        self.proj_in = Linear(cfg.d_h, cfg.width, rng)
        self.pos = Parameter(0.02 * rng.standard_normal((cfg.max_len, cfg.width)).astype(np.float32))
        self.blocks = [
            TemporalAttentionBlock(cfg.width, rng, n_heads=cfg.n_heads, mlp_ratio=cfg.mlp_ratio, causal=cfg.causal)
            for _ in range(cfg.n_blocks)
        ]
        self.proj_out = Linear(cfg.width, cfg.d_mot, rng, init="xavier")
        self.temporal = cfg.temporal_attention
        for b in self.blocks:
            b.enabled = self.temporal

    def forward(self, h):
        t = h.shape[-2]
        if t > self.pos.shape[0]:
            raise ContractError(f"sequence of {t} frames exceeds the positional table ({self.pos.shape[0]})")
        x = self.proj_in(h)
        if self.temporal:
            x = x + self.pos[:t]
        for block in self.blocks:
            x = block(x)
        return self.proj_out(x)


class DualBranchModel(Module):
    """Shared per-frame backbone feeding a per-frame appearance head and a
    sequence-level motion head; latent map, learned dynamics and readout
    turn motion features into ODE rollouts; a classifier reads both branches.
    """

    def __init__(self, cfg=None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.backbone = MLP([cfg.d_obs, cfg.d_h, cfg.d_h], rng)
        self.app_head = MLP([cfg.d_h, cfg.d_h // 2, cfg.d_app], rng)
        self.mot_head = MotionHead(cfg, rng)
        self.latent_map = MLP([cfg.d_mot, cfg.d_z * 2, cfg.d_z], rng, layer_norm=True)
        self.dynamics = DynamicsFn(
            cfg.d_z, cfg.dyn_hidden, rng, structured=cfg.structured_dynamics, time_input=cfg.time_input,
            time_scale=cfg.frame_dt * max(cfg.horizon, 1),
        )
        self.readout = MLP([cfg.d_z, cfg.readout_hidden, cfg.d_mot], rng)
        self.classifier = MLP([cfg.d_mot + cfg.d_app, cfg.classifier_hidden, cfg.n_classes], rng)

    # ------------------------------------------------------------- groups
    def ode_parameters(self):
        return self.dynamics.parameters()

    def set_temporal_attention(self, enabled):
        self.mot_head.temporal = enabled
        for b in self.mot_head.blocks:
            b.enabled = enabled

    # ------------------------------------------------------------- forward
    @property
    def min_frames(self):
        return 2 * self.cfg.horizon + 1

    def encode(self, obs, min_frames=None):
        """Per-frame features for ``obs`` of shape ``(T, d_obs)`` or ``(B, T, d_obs)``."""
        obs = T.as_tensor(obs)
        if obs.ndim not in (2, 3):
            raise ShapeError(f"observations must be (T, d_obs) or (B, T, d_obs), got {obs.shape}")
        if obs.shape[-1] != self.cfg.d_obs:
            raise ShapeError(f"observation width {obs.shape[-1]} != backbone input {self.cfg.d_obs}")
        need = self.min_frames if min_frames is None else min_frames
        if obs.shape[-2] < need:
            raise ContractError(f"encode needs at least {need} frames, got {obs.shape[-2]}")
        h = self.backbone(obs)
        return FrameFeatures(h=h, f_app=self.app_head(h), f_mot=self.mot_head(h))

    def predict_batch(self, f_start, n_steps):
        """Roll ``N`` frames ahead from each row of ``f_start`` (M, d_mot)."""
        if n_steps < 1:
            raise ContractError(f"prediction horizon must be >= 1, got {n_steps}")
        z = self.latent_map(f_start)
        zs = rollout(
            self.dynamics, z, n_steps, self.cfg.frame_dt, substeps=self.cfg.substeps, method=self.cfg.solver
        )
        return [self.readout(zk) for zk in zs]

    def predict_motion(self, f_mot, t, n_steps):
        """Predicted motion features for frames ``t+1 .. t+N`` of a ``(T, d_mot)`` sequence."""
        f_mot = T.as_tensor(f_mot)
        if n_steps < 1:
            raise ContractError(f"prediction horizon must be >= 1, got {n_steps}")
        if t < 0 or t + n_steps > f_mot.shape[0] - 1:
            raise RangeError(
                f"cannot predict {n_steps} frames after index {t} in a {f_mot.shape[0]}-frame sequence"
            )
        preds = self.predict_batch(f_mot[t : t + 1], n_steps)
        return T.concat(preds, axis=0)

    def pooled(self, feats):
        return feats.f_mot.mean(axis=-2), feats.f_app.mean(axis=-2)

    def classify(self, feats):
        mot, app = self.pooled(feats)
        return self.classifier(T.concat([mot, app], axis=-1))

    def forward(self, obs):
        return self.classify(self.encode(obs))

    def describe(self):
        groups = {
            "backbone": self.backbone,
            "appearance_head": self.app_head,
            "motion_head": self.mot_head,
            "latent_map": self.latent_map,
            "dynamics": self.dynamics,
            "readout": self.readout,
            "classifier": self.classifier,
        }
        return {k: m.num_parameters() for k, m in groups.items()}


def build_model(cfg=None):
    model = DualBranchModel(cfg)
    counts = model.describe()
    log.info("model parameters: %s (total %d)", counts, model.num_parameters())
    return model
