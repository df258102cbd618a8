"""Loss assembly and the optimisation loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import tensor as T
from .errors import ContractError, DivergenceError, ParameterError
from .hsic import KernelSpec, hsic
from .model import DualBranchModel, ModelConfig
from .nn import AdamW, clip_grad_norm, grad_norm, load_checkpoint, save_checkpoint
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 0.1
    lam_phys: Optional[float] = None
    lam_app: Optional[float] = None
    horizon: int = 3
    batch_size: int = 16
    epochs: int = 20
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_steps: int = 0
    clip_max_norm: float = 1.0
    seed: int = 0
    use_phys: bool = True
    use_app: bool = True
    detach_targets: bool = True
    phys_reduction: str = "mean"
    hsic_mode: str = "clip"
    hsic_bandwidth: object = "median"
    crop_len: int = 40
    eval_split: str = "val"

    def __post_init__(self):
        problems = []
        if not self.lam >= 0:
            problems.append(f"lam must be >= 0 (got {self.lam})")
        for name in ("lam_phys", "lam_app"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                problems.append(f"{name} must be >= 0 (got {v})")
        if self.horizon < 1:
            problems.append(f"horizon must be >= 1 (got {self.horizon})")
        if self.batch_size < 2:
            problems.append(f"batch_size must be >= 2 (got {self.batch_size})")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1 (got {self.epochs})")
        if not self.lr > 0:
            problems.append(f"lr must be > 0 (got {self.lr})")
        if not self.clip_max_norm > 0:
            problems.append(f"clip_max_norm must be > 0 (got {self.clip_max_norm})")
        if self.phys_reduction not in ("sum", "mean"):
            problems.append(f"phys_reduction must be 'sum' or 'mean' (got {self.phys_reduction!r})")
        if self.hsic_mode not in ("clip", "frame"):
            problems.append(f"hsic_mode must be 'clip' or 'frame' (got {self.hsic_mode!r})")
        if self.crop_len < 2 * self.horizon + 1:
            problems.append(f"crop_len must be >= 2*horizon+1 (got {self.crop_len})")
        if problems:
            raise ParameterError("; ".join(problems))

    @property
    def weight_phys(self):
        return self.lam if self.lam_phys is None else self.lam_phys

    @property
    def weight_app(self):
        return self.lam if self.lam_app is None else self.lam_app

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ParameterError(f"unknown train config keys: {unknown}")
        return cls(**d)


@dataclass
class LossBreakdown:
    l_task: float
    l_phys: float
    l_app: float
    total: float

    def to_dict(self):
        return asdict(self)


def config_hash(*dicts):
    blob = json.dumps(dicts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------------- losses
def valid_starts(n_frames, horizon):
    """0-based start frames whose full horizon fits inside the sequence.

    With 1-based frames ``1..T`` the summation runs over ``t = N .. T-N``;
    shifted to 0-based that is ``N-1 .. T-N-1`` and targets ``t+1 .. t+N``.
    """
    if n_frames < 2 * horizon + 1:
        raise ContractError(
            f"physics loss needs at least {2 * horizon + 1} frames for horizon {horizon}, got {n_frames}"
        )
    return np.arange(horizon - 1, n_frames - horizon)


def physics_terms(f_mot, model, horizon, detach_targets=True, predictor=None):
    """Squared prediction errors, shape ``(B, S, N)``: one per (clip, start, step).

    ``f_mot`` is ``(T, d)`` or ``(B, T, d)``.  ``predictor(f_start, N)`` maps
    ``(M, d)`` start features to a list of ``N`` predicted ``(M, d)`` tensors;
    it defaults to ``model.predict_batch``.
    """
    f_mot = T.as_tensor(f_mot)
    if f_mot.ndim == 2:
        f_mot = f_mot.reshape((1,) + f_mot.shape)
    b, t_len, d = f_mot.shape
    starts = valid_starts(t_len, horizon)
    s0, s1 = int(starts[0]), int(starts[-1]) + 1
    n_start = s1 - s0
    predictor = predictor or model.predict_batch
    f_start = f_mot[:, s0:s1].reshape((b * n_start, d))
    preds = predictor(f_start, horizon)
    target_src = f_mot.detach() if detach_targets else f_mot
    terms = []
    for tau, pred in enumerate(preds, start=1):
        target = target_src[:, s0 + tau : s1 + tau].reshape((b * n_start, d))
        diff = pred - target
        terms.append((diff * diff).sum(axis=-1).reshape((b, n_start, 1)))
    return T.concat(terms, axis=-1)


def physics_loss(f_mot, model, horizon, detach_targets=True, reduction="sum", predictor=None):
    """Self-supervised rollout loss.

    ``sum``: squared errors summed over every valid (start, step) pair of a
    clip, averaged over clips in the batch.  ``mean``: averaged over terms.
    """
    terms = physics_terms(f_mot, model, horizon, detach_targets, predictor)
    if reduction == "sum":
        return terms.sum() * (1.0 / terms.shape[0])
    if reduction == "mean":
        return terms.mean()
    raise ParameterError(f"unknown reduction {reduction!r}")


def _robust_physics_loss(f_mot, model, cfg):
    """Physics loss that drops clips whose rollout diverges instead of failing the batch."""
    try:
        return physics_loss(f_mot, model, cfg.horizon, cfg.detach_targets, cfg.phys_reduction)
    except DivergenceError as exc:
        log.warning("batch rollout diverged (%s); retrying clip by clip", exc)
    kept = []
    for i in range(f_mot.shape[0]):
        try:
            kept.append(physics_loss(f_mot[i], model, cfg.horizon, cfg.detach_targets, cfg.phys_reduction))
        except DivergenceError as exc:
            log.warning("dropping clip %d from the physics loss: %s", i, exc)
    if not kept:
        return None
    total = kept[0]
    for k in kept[1:]:
        total = total + k
    return total * (1.0 / len(kept))


def appearance_loss(feats, mode="clip", bandwidth="median"):
    spec = KernelSpec(bandwidth)
    if mode == "clip":
        mot, app = feats.f_mot.mean(axis=-2), feats.f_app.mean(axis=-2)
    else:
        mot = feats.f_mot.reshape((-1, feats.f_mot.shape[-1]))
        app = feats.f_app.reshape((-1, feats.f_app.shape[-1]))
    return hsic(mot, app, spec)


def compute_losses(model, obs, labels, cfg):
    """Forward one batch; returns ``(total_tensor, LossBreakdown)``."""
    feats = model.encode(obs)
    logits = model.classify(feats)
    l_task = T.cross_entropy(logits, labels)
    total = l_task
    l_phys_v = l_app_v = 0.0
    if cfg.use_phys:
        l_phys = _robust_physics_loss(feats.f_mot, model, cfg)
        if l_phys is not None:
            l_phys_v = float(l_phys.data)
            total = total + cfg.weight_phys * l_phys
    if cfg.use_app:
        l_app = appearance_loss(feats, cfg.hsic_mode, cfg.hsic_bandwidth)
        l_app_v = float(l_app.data)
        total = total + cfg.weight_app * l_app
    breakdown = LossBreakdown(float(l_task.data), l_phys_v, l_app_v, float(total.data))
    return total, breakdown


# -------------------------------------------------------------------- batches
def crop_batch(episodes, indices, crop_len, rng):
    obs, labels = [], []
    for i in indices:
        ep = episodes[i]
        off = int(rng.integers(0, ep.n_frames - crop_len + 1))
        obs.append(ep.observations[off : off + crop_len])
        labels.append(ep.label)
    return np.stack(obs), np.asarray(labels)


def windows(n_frames, length):
    """Deterministic window starts covering a clip with windows of ``length`` frames."""
    if n_frames <= length:
        return [0]
    k = math.ceil(n_frames / length)
    return sorted({int(round(x)) for x in np.linspace(0, n_frames - length, k)})


def clip_logits(model, ep, length):
    """Class logits of an episode, averaged over deterministic windows."""
    with T.no_grad():
        length = min(length, ep.n_frames)
        starts = windows(ep.n_frames, length)
        obs = np.stack([ep.observations[s : s + length] for s in starts])
        logits = model(Tensor(obs)).data
    return logits.astype(np.float64).mean(axis=0)


# ----------------------------------------------------------------- training
@dataclass
class TrainResult:
    model: DualBranchModel
    history: list = field(default_factory=list)
    final: Optional[LossBreakdown] = None
    val_accuracy: list = field(default_factory=list)
    out_dir: Optional[Path] = None
    diverged: bool = False


def checkpoint_meta(model, cfg, dataset, extra=None):
    meta = {
        "library_version": __version__,
        "model_config": model.cfg.to_dict(),
        "train_config": cfg.to_dict(),
        "dataset_hash": dataset.hash,
        "train_split": "train",
        "train_ids": sorted(dataset.ids("train")),
        "config_hash": config_hash(model.cfg.to_dict(), cfg.to_dict()),
    }
    if extra:
        meta.update(extra)
    return meta


def save_model(path, model, meta, optimizer=None):
    tensors = model.state_dict()
    if optimizer is not None:
        tensors.update(optimizer.state_dict())
    save_checkpoint(path, tensors, meta)


def load_model(path):
    tensors, meta = load_checkpoint(path)
    model = DualBranchModel(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    return model, meta


def _lr_at(cfg, step):
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    return cfg.lr


def val_accuracy(model, episodes, crop_len):
    if not episodes:
        return float("nan")
    n_classes = model.cfg.n_classes
    correct = np.zeros(n_classes)
    count = np.zeros(n_classes)
    for ep in episodes:
        pred = int(np.argmax(clip_logits(model, ep, crop_len)))
        count[ep.label] += 1
        correct[ep.label] += pred == ep.label
    seen = count > 0
    return float(np.mean(correct[seen] / count[seen]) * 100.0)


def train(dataset, cfg=None, model_cfg=None, out_dir=None, model=None, progress=None):
    """Train a dual-branch model on the ``train`` split of ``dataset``.

    Writes ``final.ckpt``, ``best.ckpt`` (by validation accuracy) and
    ``metrics.jsonl`` under ``out_dir`` when given.  A non-finite loss raises
    :class:`DivergenceError`; ``last_good.ckpt`` from the previous epoch stays.
    """
    cfg = cfg or TrainConfig()
    model_cfg = model_cfg or ModelConfig(horizon=cfg.horizon, seed=cfg.seed)
    if model is None:
        model = DualBranchModel(model_cfg)
    log.info("parameters: %d %s", model.num_parameters(), model.describe())
    episodes = dataset.split("train")
    if len(episodes) < 2:
        raise ContractError(f"training split has {len(episodes)} episodes; need at least 2")
    val_eps = dataset.split(cfg.eval_split) if cfg.eval_split else []
    crop_len = min(cfg.crop_len, min(ep.n_frames for ep in episodes))
    if crop_len < 2 * cfg.horizon + 1:
        raise ContractError(f"shortest training clip ({crop_len} frames) is shorter than 2*horizon+1")

    named = list(model.named_parameters())
    opt = AdamW(named, lr=cfg.lr, weight_decay=cfg.weight_decay)
    ode_params = model.ode_parameters()
    all_params = [p for _, p in named]
    rng = np.random.default_rng(cfg.seed)

    out = Path(out_dir) if out_dir else None
    metrics_fh = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "w")
    meta = checkpoint_meta(model, cfg, dataset, {"crop_len": crop_len})
    result = TrainResult(model=model, out_dir=out)
    best = -1.0
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(episodes))
            for b0 in range(0, len(order), cfg.batch_size):
                idx = order[b0 : b0 + cfg.batch_size]
                if len(idx) < 2:
                    continue
                obs, labels = crop_batch(episodes, idx, crop_len, rng)
                total, br = compute_losses(model, Tensor(obs), labels, cfg)
                if not math.isfinite(br.total):
                    raise DivergenceError(f"non-finite loss at step {step}", step=step)
                total.backward()
                gnorm = grad_norm(all_params)
                scale = clip_grad_norm(ode_params, cfg.clip_max_norm)
                opt.step(lr=_lr_at(cfg, step))
                model.zero_grad()
                record = {"step": step, "epoch": epoch, **br.to_dict(), "grad_norm": gnorm, "clip_scale": scale}
                result.history.append(record)
                if metrics_fh:
                    metrics_fh.write(json.dumps(record) + "\n")
                result.final = br
                step += 1
            acc = val_accuracy(model, val_eps, crop_len) if val_eps else float("nan")
            result.val_accuracy.append(acc)
            if progress:
                progress(epoch, result)
            if out:
                save_model(out / "last_good.ckpt", model, {**meta, "epoch": epoch, "step": step})
                if acc > best:
                    best = acc
                    save_model(out / "best.ckpt", model, {**meta, "epoch": epoch, "val_accuracy": acc})
    except DivergenceError:
        result.diverged = True
        raise
    finally:
        if metrics_fh:
            metrics_fh.close()
    if out:
        save_model(out / "final.ckpt", model, {**meta, "epoch": cfg.epochs - 1, "step": step}, opt)
    return result
