"""Accuracy reports, the four-arm loss ablation, prediction heatmaps and baselines."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import DivergenceError, LeakageError, ShapeError
from .physim import CLASS_NAMES
from .tensor import Tensor
from .training import (
    TrainConfig,
    clip_logits,
    config_hash,
    load_model,
    physics_terms,
    train,
    windows,
)

log = logging.getLogger(__name__)

# arm name -> (use_phys, use_app)
ARMS = {
    "base": (False, False),
    "+L_phys": (True, False),
    "+L_app": (False, True),
    "full": (True, True),
}


@dataclass
class MetricsReport:
    per_class: list  # percent, one per class in CLASS_NAMES order
    average: float
    confusion: list  # rows: true class, columns: predicted class
    n_clips: int
    metadata: dict = field(default_factory=dict)

    @property
    def per_class_dict(self):
        return dict(zip(CLASS_NAMES, self.per_class))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def report_from_predictions(labels, preds, n_classes=len(CLASS_NAMES), metadata=None):
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for y, p in zip(labels, preds):
        confusion[int(y), int(p)] += 1
    counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, 100.0 * np.diag(confusion) / np.maximum(counts, 1), np.nan)
    seen = counts > 0
    average = float(np.mean(per_class[seen])) if seen.any() else float("nan")
    return MetricsReport(
        per_class=[float(x) for x in per_class],
        average=average,
        confusion=confusion.tolist(),
        n_clips=int(counts.sum()),
        metadata=dict(metadata or {}),
    )


# ---------------------------------------------------------------- predictors
def model_predictor(model, crop_len=40):
    return lambda ep: clip_logits(model, ep, crop_len)


def oracle_predictor(n_classes=len(CLASS_NAMES)):
    """Cheats by reading the label; upper bound for harness tests."""
    return lambda ep: np.eye(n_classes)[ep.label]


def random_predictor(seed=0, n_classes=len(CLASS_NAMES)):
    rng = np.random.default_rng(seed)
    return lambda ep: rng.standard_normal(n_classes)


def _resolve_checkpoint(checkpoint):
    if checkpoint is None:
        return None, {}
    if isinstance(checkpoint, (str, Path)):
        return load_model(checkpoint)
    if isinstance(checkpoint, tuple):
        return checkpoint
    return checkpoint, {}


def check_leakage(dataset, split, meta):
    """Refuse to score a split that overlaps the clips a checkpoint was trained on."""
    if split == (meta.get("train_split") or "train"):
        raise LeakageError(f"refusing to evaluate on the training split {split!r}")
    trained = set(meta.get("train_ids") or ())
    overlap = trained & dataset.ids(split)
    if overlap:
        raise LeakageError(
            f"{len(overlap)} clips of split {split!r} were seen in training, e.g. {sorted(overlap)[0]}"
        )
    if meta.get("dataset_hash") and dataset.hash != meta["dataset_hash"]:
        log.warning("checkpoint was trained on dataset %s, evaluating on %s", meta["dataset_hash"], dataset.hash)


def evaluate(checkpoint, dataset, split="test", predictor: Optional[Callable] = None, crop_len=None):
    """Score a checkpoint (path, ``(model, meta)`` or model) on one split.

    ``predictor(episode) -> logits`` overrides the model, which lets stub
    classifiers go through the same leakage checks and bookkeeping.
    """
    model, meta = _resolve_checkpoint(checkpoint)
    check_leakage(dataset, split, meta)
    episodes = sorted(dataset.split(split), key=lambda ep: ep.id)
    if not episodes:
        raise ShapeError(f"split {split!r} is empty")
    if predictor is None:
        crop_len = crop_len or meta.get("crop_len") or (meta.get("train_config") or {}).get("crop_len", 40)
        predictor = model_predictor(model, crop_len)
    labels, preds = [], []
    for ep in episodes:
        logits = np.asarray(predictor(ep))
        labels.append(ep.label)
        preds.append(int(np.argmax(logits)))  # first maximum wins ties
    metadata = {
        "split": split,
        "dataset_hash": dataset.hash,
        "config_hash": meta.get("config_hash"),
        "seed": (meta.get("train_config") or {}).get("seed"),
        "checkpoint": meta.get("checkpoint_id"),
    }
    return report_from_predictions(labels, preds, metadata=metadata)


def binary_accuracy(model, episodes, pos, neg, crop_len=40):
    """Two-way accuracy between classes ``pos`` and ``neg`` by comparing their logits."""
    pi, ni = CLASS_NAMES.index(pos), CLASS_NAMES.index(neg)
    hits = total = 0
    for ep in episodes:
        if ep.label not in (pi, ni):
            continue
        logits = clip_logits(model, ep, crop_len)
        guess = pi if logits[pi] >= logits[ni] else ni
        hits += guess == ep.label
        total += 1
    return 100.0 * hits / total if total else float("nan")


# ------------------------------------------------------------------ ablation
@dataclass
class ArmResult:
    name: str
    use_phys: bool
    use_app: bool
    report: Optional[MetricsReport] = None
    failed: bool = False
    error: str = ""
    dataset_hash: str = ""
    model: object = None


def run_ablation(dataset, base_cfg=None, model_cfg=None, out_dir=None, split="test", arms=None):
    """Train and score the four loss arms with otherwise identical settings.

    A diverging arm is marked failed; the remaining arms still run.
    """
    base_cfg = base_cfg or TrainConfig()
    arms = arms or list(ARMS)
    out = Path(out_dir) if out_dir else None
    results = []
    for name in arms:
        use_phys, use_app = ARMS[name]
        cfg = TrainConfig.from_dict({**base_cfg.to_dict(), "use_phys": use_phys, "use_app": use_app})
        arm_dir = out / _slug(name) if out else None
        res = ArmResult(name, use_phys, use_app, dataset_hash=dataset.hash)
        try:
            trained = train(dataset, cfg, model_cfg, out_dir=arm_dir)
        except DivergenceError as exc:
            log.error("arm %s diverged: %s", name, exc)
            res.failed, res.error = True, str(exc)
            results.append(res)
            continue
        meta = {
            "train_split": "train",
            "train_ids": sorted(dataset.ids("train")),
            "train_config": cfg.to_dict(),
            "config_hash": config_hash(trained.model.cfg.to_dict(), cfg.to_dict()),
            "crop_len": min(cfg.crop_len, min(ep.n_frames for ep in dataset.split("train"))),
            "checkpoint_id": f"{name}/final",
        }
        res.report = evaluate((trained.model, meta), dataset, split)
        res.report.metadata["arm"] = name
        res.model = trained.model
        if arm_dir:
            res.report.save(arm_dir / "report.json")
        results.append(res)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.txt").write_text(ablation_table(results))
        (out / "ablation.csv").write_text(ablation_csv(results))
    return results


LAMBDA_GRID = (0.01, 0.1, 1.0)


def sweep_lambda(dataset, base_cfg=None, model_cfg=None, lams=LAMBDA_GRID, out_dir=None, split="test", arms=None):
    """Run the ablation once per loss weight; returns ``{lam: [ArmResult, ...]}``."""
    base_cfg = base_cfg or TrainConfig()
    out = Path(out_dir) if out_dir else None
    grid = {}
    for lam in lams:
        cfg = TrainConfig.from_dict({**base_cfg.to_dict(), "lam": float(lam)})
        sub = out / f"lam_{lam:g}" if out else None
        grid[float(lam)] = run_ablation(dataset, cfg, model_cfg, out_dir=sub, split=split, arms=arms)
    if out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lam", "arm", "average", "status"])
        for lam, results in grid.items():
            for r in results:
                w.writerow([f"{lam:g}", r.name, _row(r)[-1], "failed" if r.failed else "ok"])
        (out / "sweep.csv").write_text(buf.getvalue())
    return grid


def _slug(name):
    return name.replace("+", "plus_").lower()


def _row(res):
    if res.failed or res.report is None:
        return [res.name] + ["failed"] * (len(CLASS_NAMES) + 1)
    return [res.name] + [f"{v:.2f}" for v in res.report.per_class] + [f"{res.report.average:.2f}"]


def ablation_table(results):
    header = ["arm"] + [c.capitalize() for c in CLASS_NAMES] + ["Avg"]
    rows = [header] + [_row(r) for r in results]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines) + "\n"


def ablation_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "use_phys", "use_app", *CLASS_NAMES, "average", "status"])
    for r in results:
        cells = _row(r)[1:]
        w.writerow([r.name, r.use_phys, r.use_app, *cells, "failed" if r.failed else "ok"])
    return buf.getvalue()


# ------------------------------------------------------------------- heatmap
@dataclass
class SimilarityHeatmap:
    values: np.ndarray  # (horizon, context + horizon)
    context: int
    horizon: int
    n_episodes: int
    n_skipped: int

    def diagonal_excess(self):
        """Matching-column similarity minus row mean, one value per predicted row."""
        cols = self.context + np.arange(self.horizon)
        return self.values[np.arange(self.horizon), cols] - self.values.mean(axis=1)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predicted"] + [f"T{j}" for j in range(self.values.shape[1])])
        for i, row in enumerate(self.values):
            w.writerow([f"T{self.context + i}'"] + [f"{v:.6f}" for v in row])
        return buf.getvalue()

    def to_pgm(self, scale=16):
        """Binary grayscale image: white = +1, black = -1, ``scale`` pixels per cell."""
        img = np.round((np.clip(self.values, -1, 1) + 1.0) * 127.5).astype(np.uint8)
        img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
        h, w = img.shape
        return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()

    def save(self, stem):
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".csv").write_text(self.to_csv())
        stem.with_suffix(".pgm").write_bytes(self.to_pgm())


def _cosine_matrix(a, b):
    a = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    return np.clip(a @ b.T, -1.0, 1.0)


def prediction_heatmap(model, episodes, context=9, horizon=3):
    """Cosine similarity between rolled-out and encoded motion features.

    Each clip contributes its first ``context + horizon`` frames: those are
    encoded as the ground truth, the first ``context`` alone are encoded as the
    input, and ``horizon`` features are predicted from the last context frame.
    """
    window = context + horizon
    total = np.zeros((horizon, window))
    used = skipped = 0
    with T.no_grad():
        for ep in sorted(episodes, key=lambda e: e.id):
            if ep.n_frames < window:
                skipped += 1
                continue
            obs = ep.observations[:window]
            truth = model.encode(Tensor(obs), min_frames=1).f_mot.data.astype(np.float64)
            prefix = model.encode(Tensor(obs[:context]), min_frames=1).f_mot
            preds = model.predict_batch(prefix[context - 1 : context], horizon)
            pred = np.concatenate([p.data for p in preds]).astype(np.float64)
            total += _cosine_matrix(pred, truth)
            used += 1
    if skipped:
        log.info("heatmap skipped %d clips shorter than %d frames", skipped, window)
    values = total / used if used else np.full((horizon, window), np.nan)
    return SimilarityHeatmap(values, context, horizon, used, skipped)


# ------------------------------------------------------------------ baselines
def copy_last(f_start, n_steps):
    return [f_start] * n_steps


def _feature_windows(model, ep, crop_len):
    length = min(crop_len, ep.n_frames)
    starts = windows(ep.n_frames, length)
    obs = np.stack([ep.observations[s : s + length] for s in starts])
    return model.encode(Tensor(obs)).f_mot


def rollout_errors(model, episodes, horizon=3, crop_len=40, predictor=None):
    """Mean squared prediction error per class over every valid start and step.

    The error of one (start, step) pair is the squared L2 distance between the
    predicted and encoded motion features.  ``predictor`` defaults to the ODE
    rollout; pass :func:`copy_last` for the naive baseline.
    """
    sums = {}
    with T.no_grad():
        for ep in sorted(episodes, key=lambda e: e.id):
            if min(crop_len, ep.n_frames) < 2 * horizon + 1:
                continue
            f = _feature_windows(model, ep, crop_len)
            terms = physics_terms(f, model, horizon, predictor=predictor).data.astype(np.float64)
            s, n = sums.get(ep.class_name, (0.0, 0))
            sums[ep.class_name] = (s + terms.sum(), n + terms.size)
    return {c: s / n for c, (s, n) in sums.items()}


def copy_last_baseline(model, episodes, horizon=3, crop_len=40):
    return rollout_errors(model, episodes, horizon, crop_len, predictor=copy_last)
