"""Synthetic single-object motion episodes with exact kinematics.

Five motion classes in 2-D (x horizontal, y vertical).  Uniform, accelerated,
decelerated and parabolic motion are evaluated in closed form at every frame.
Rebound motion is built from its sequence of floor impacts: each impact time
is the root of the free-flight quadratic, the outgoing vertical speed is the
incoming one scaled by the restitution coefficient, and frames are evaluated
on the arc they fall in.  No frame is produced by stepping through a floor.

Observations are a fixed random affine map of (position, velocity,
appearance code) through a pointwise nonlinearity, plus Gaussian noise.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, ParameterError, RangeError, ShapeError

FRAME_DT = 0.1
MIN_FRAMES, MAX_FRAMES = 20, 600
DATASET_FORMAT = "phymotion-dataset"
DATASET_VERSION = 1
EPISODE_MAGIC = b"PHYMEP01"
# upward speed below which a bouncing object is considered at rest
REST_SPEED = 1e-6


class MotionClass(str, enum.Enum):
    UNIFORM = "uniform"
    ACCELERATED = "accelerated"
    DECELERATED = "decelerated"
    PARABOLIC = "parabolic"
    REBOUND = "rebound"

    @property
    def index(self):
        return CLASS_NAMES.index(self.value)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown motion class {value!r}") from None


CLASS_NAMES = [c.value for c in MotionClass]


@dataclass
class PhysParams:
    gravity: float = 9.8
    position: tuple = (0.0, 0.0)
    velocity: tuple = (1.0, 0.0)
    # signed, along the direction of the initial velocity
    accel: float = 0.0
    restitution: float = 1.0
    floor: float = 0.0


@dataclass
class KinematicState:
    t: float
    position: np.ndarray
    velocity: np.ndarray


@dataclass
class Trajectory:
    id: str
    class_label: MotionClass
    dt: float
    times: np.ndarray  # (n,)
    positions: np.ndarray  # (n, 2)
    velocities: np.ndarray  # (n, 2)
    params: PhysParams

    @property
    def n_frames(self):
        return len(self.times)

    @property
    def frames(self):
        return [KinematicState(t, p, v) for t, p, v in zip(self.times, self.positions, self.velocities)]

    def states(self):
        """``(n, 5)`` float64 array with columns t, x, y, vx, vy."""
        return np.column_stack([self.times, self.positions, self.velocities])


# ------------------------------------------------------------------ kinematics
def _validate(cls, p, n_frames, dt):
    if not (MIN_FRAMES <= n_frames <= MAX_FRAMES):
        raise RangeError(f"n_frames must be in [{MIN_FRAMES}, {MAX_FRAMES}], got {n_frames}")
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if p.gravity < 0:
        raise ParameterError(f"gravity must be >= 0, got {p.gravity}")
    if not (0.0 < p.restitution <= 1.0):
        raise ParameterError(f"restitution must be in (0, 1], got {p.restitution}")
    speed = float(np.hypot(*p.velocity))
    duration = (n_frames - 1) * dt
    if cls is MotionClass.UNIFORM and p.accel != 0.0:
        raise ParameterError("uniform motion takes no acceleration")
    if cls is MotionClass.ACCELERATED:
        if not p.accel > 0:
            raise ParameterError(f"accelerated motion needs accel > 0, got {p.accel}")
        if speed == 0.0:
            raise ParameterError("accelerated motion needs a nonzero initial velocity")
    if cls is MotionClass.DECELERATED:
        if not p.accel < 0:
            raise ParameterError(f"decelerated motion needs accel < 0, got {p.accel}")
        if speed == 0.0:
            raise ParameterError("decelerated motion needs a nonzero initial velocity")
        t_stop = speed / -p.accel
        if t_stop < duration - 1e-9:
            raise ParameterError(
                f"decelerated episode would reverse at t={t_stop:.6g}s before its end at "
                f"{duration:.6g}s; shorten it to at most {int(t_stop / dt + 1e-9) + 1} frames"
            )
    if cls in (MotionClass.PARABOLIC, MotionClass.REBOUND) and not p.gravity > 0:
        raise ParameterError(f"{cls.value} motion needs gravity > 0")
    if cls is MotionClass.REBOUND and p.position[1] < p.floor:
        raise ParameterError("rebound motion must start at or above the floor")


def _bounce_arcs(y0, vy0, g, e, t_end):
    """Start (time, height, upward speed) of each free-flight arc until ``t_end``.

    Heights are relative to the floor.  A final arc with zero speed and
    ``resting=True`` marks the object settling on the floor.
    """
    arcs = [(0.0, y0, vy0, False)]
    t, y, vy = 0.0, y0, vy0
    while t <= t_end:
        impact_speed = math.sqrt(vy * vy + 2.0 * g * y)
        t_hit = (vy + impact_speed) / g
        t += t_hit
        vy = e * impact_speed
        y = 0.0
        if vy < REST_SPEED:
            arcs.append((t, 0.0, 0.0, True))
            break
        arcs.append((t, 0.0, vy, False))
    return arcs


def _rebound_vertical(times, y0, vy0, g, e):
    arcs = _bounce_arcs(y0, vy0, g, e, float(times[-1]))
    starts = np.array([a[0] for a in arcs])
    idx = np.searchsorted(starts, times, side="right") - 1
    y = np.empty_like(times)
    vy = np.empty_like(times)
    for k, t in enumerate(times):
        t_s, y_s, v_s, resting = arcs[idx[k]]
        if resting:
            y[k], vy[k] = 0.0, 0.0
            continue
        s = t - t_s
        y[k] = y_s + v_s * s - 0.5 * g * s * s
        vy[k] = v_s - g * s
    np.maximum(y, 0.0, out=y)
    return y, vy


def generate_trajectory(cls, params, n_frames, seed=0, dt=FRAME_DT, episode_id=None):
    """Exact kinematic states of one episode sampled every ``dt`` seconds."""
    cls = MotionClass.parse(cls)
    _validate(cls, params, n_frames, dt)
    times = np.arange(n_frames, dtype=np.float64) * dt
    x0 = np.asarray(params.position, dtype=np.float64)
    v0 = np.asarray(params.velocity, dtype=np.float64)
    t = times[:, None]
    g = params.gravity

    if cls is MotionClass.UNIFORM:
        pos = x0 + v0 * t
        vel = np.broadcast_to(v0, pos.shape).copy()
    elif cls in (MotionClass.ACCELERATED, MotionClass.DECELERATED):
        acc = params.accel * v0 / np.hypot(*v0)
        pos = x0 + v0 * t + 0.5 * acc * t * t
        vel = v0 + acc * t
    elif cls is MotionClass.PARABOLIC:
        acc = np.array([0.0, -g])
        pos = x0 + v0 * t + 0.5 * acc * t * t
        vel = v0 + acc * t
    else:
        y, vy = _rebound_vertical(times, x0[1] - params.floor, v0[1], g, params.restitution)
        pos = np.column_stack([x0[0] + v0[0] * times, y + params.floor])
        vel = np.column_stack([np.full_like(times, v0[0]), vy])

    return Trajectory(
        id=episode_id or f"{cls.value}-{seed}",
        class_label=cls,
        dt=dt,
        times=times,
        positions=pos,
        velocities=vel,
        params=params,
    )


def mechanical_energy(traj):
    """Per-frame ``0.5 |v|^2 + g (y - floor)`` per unit mass."""
    g = traj.params.gravity
    return 0.5 * (traj.velocities ** 2).sum(axis=1) + g * (traj.positions[:, 1] - traj.params.floor)


def arc_apexes(traj):
    """Apex height of every free-flight arc present in a rebound trajectory.

    Each frame determines its arc's apex exactly as ``y + vy^2 / (2 g)``;
    arcs are told apart by the upward jump in vertical velocity at impacts.
    """
    g = traj.params.gravity
    y = traj.positions[:, 1] - traj.params.floor
    vy = traj.velocities[:, 1]
    arc_id = np.concatenate([[0], np.cumsum(np.diff(vy) > 0)])
    apex = y + vy * vy / (2.0 * g)
    return np.array([apex[arc_id == a][0] for a in np.unique(arc_id)])


# ---------------------------------------------------------------- observations
STATE_DIM = 4


@dataclass
class ObservationModel:
    """Fixed map from (position, velocity, appearance) to observation vectors."""

    weight: np.ndarray  # (d_obs, 4 + d_a)
    bias: np.ndarray  # (d_obs,)
    d_a: int
    nonlinearity: str = "tanh"
    noise_std: float = 0.0
    appearance_std: float = 1.0

    @property
    def d_obs(self):
        return self.weight.shape[0]

    @classmethod
    def random(
        cls,
        rng,
        d_obs=32,
        d_a=8,
        noise_std=0.05,
        position_scale=5.0,
        velocity_scale=1.0,
        appearance_gain=1.0,
        observe_position=True,
    ):
        w_state = rng.standard_normal((d_obs, STATE_DIM)) / math.sqrt(STATE_DIM)
        w_state[:, :2] *= (1.0 / position_scale) if observe_position else 0.0
        w_state[:, 2:] *= 1.0 / velocity_scale
        w_app = rng.standard_normal((d_obs, d_a)) * (appearance_gain / math.sqrt(max(d_a, 1)))
        bias = 0.1 * rng.standard_normal(d_obs)
        return cls(np.hstack([w_state, w_app]), bias, d_a, "tanh", noise_std)

    @classmethod
    def identity(cls):
        return cls(np.eye(STATE_DIM), np.zeros(STATE_DIM), 0, "identity", 0.0)

    def sample_appearance(self, rng):
        return self.appearance_std * rng.standard_normal(self.d_a)

    def to_dict(self):
        return {
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "d_a": self.d_a,
            "nonlinearity": self.nonlinearity,
            "noise_std": self.noise_std,
            "appearance_std": self.appearance_std,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["weight"], dtype=np.float64),
            np.asarray(d["bias"], dtype=np.float64),
            int(d["d_a"]),
            d["nonlinearity"],
            float(d["noise_std"]),
            float(d.get("appearance_std", 1.0)),
        )


def render_observations(traj, model, seed=0, appearance_code=None):
    """Observation sequence ``(n_frames, d_obs)`` float32 for one trajectory.

    The appearance code is drawn from ``seed`` unless given, and is held fixed
    over the episode.  Returns ``(observations, appearance_code)``.
    """
    if model.weight.shape[1] != STATE_DIM + model.d_a or model.bias.shape != (model.d_obs,):
        raise ShapeError(
            f"observation model weight {model.weight.shape} / bias {model.bias.shape} "
            f"inconsistent with d_a={model.d_a}"
        )
    rng = np.random.default_rng(seed)
    if appearance_code is None:
        appearance_code = model.sample_appearance(rng)
    appearance_code = np.asarray(appearance_code, dtype=np.float64)
    if appearance_code.shape != (model.d_a,):
        raise ShapeError(f"appearance code shape {appearance_code.shape} != ({model.d_a},)")
    n = traj.n_frames
    inputs = np.hstack([traj.positions, traj.velocities, np.broadcast_to(appearance_code, (n, model.d_a))])
    pre = inputs @ model.weight.T + model.bias
    if model.nonlinearity == "tanh":
        obs = np.tanh(pre)
    elif model.nonlinearity == "identity":
        obs = pre
    else:
        raise ParameterError(f"unknown nonlinearity {model.nonlinearity!r}")
    if model.noise_std > 0:
        obs = obs + model.noise_std * rng.standard_normal(obs.shape)
    return obs.astype(np.float32), appearance_code


# --------------------------------------------------------------- dataset spec
def _default_ranges():
    return {
        # uniform speed, m/s
        "speed": [0.2, 2.0],
        # starting speed of accelerated clips (= final speed of decelerated ones)
        "low_speed": [0.2, 0.8],
        "accel": [0.1, 0.3],
        "gravity": [1.0, 2.0],
        "horizontal_speed": [0.3, 1.2],
        # apex time of parabolic clips as a fraction of the clip duration
        "apex_fraction": [0.3, 0.7],
        "drop_height": [2.0, 5.0],
        "restitution": [0.7, 0.95],
        "center": [-3.0, 3.0],
    }


@dataclass
class DatasetSpec:
    counts: dict = field(default_factory=lambda: {c: 100 for c in CLASS_NAMES})
    frames: tuple = (40, 120)
    dt: float = FRAME_DT
    d_obs: int = 32
    d_a: int = 8
    noise_std: float = 0.05
    appearance_gain: float = 1.0
    position_scale: float = 5.0
    velocity_scale: float = 1.0
    observe_position: bool = True
    splits: tuple = (0.8, 0.1, 0.1)
    ranges: dict = field(default_factory=_default_ranges)

    def __post_init__(self):
        for name in self.counts:
            MotionClass.parse(name)
        self.frames = tuple(self.frames)
        self.splits = tuple(self.splits)
        merged = _default_ranges()
        merged.update({k: list(v) for k, v in self.ranges.items()})
        self.ranges = merged
        lo, hi = self.frames
        if not (MIN_FRAMES <= lo <= hi <= MAX_FRAMES):
            raise RangeError(f"frame range {self.frames} must lie within [{MIN_FRAMES}, {MAX_FRAMES}]")
        if any(c < 0 for c in self.counts.values()):
            raise ParameterError("class counts must be non-negative")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise ParameterError(f"split fractions must be three non-negatives summing to 1, got {self.splits}")

    def to_dict(self):
        d = asdict(self)
        d["frames"] = list(self.frames)
        d["splits"] = list(self.splits)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown dataset spec keys: {unknown}")
        return cls(**d)


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _unit(rng):
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([math.cos(theta), math.sin(theta)])


def sample_params(cls, rng, n_frames, spec):
    """Draw class-valid physical parameters for an episode of ``n_frames`` frames.

    Accelerated and decelerated clips are drawn so that a decelerated clip is
    distributed exactly like a time-reversed accelerated one (same speed
    range, same path shape, opposite direction): the per-frame states of the
    two classes then share one distribution and only their temporal order
    separates them.
    """
    cls = MotionClass.parse(cls)
    r = spec.ranges
    duration = (n_frames - 1) * spec.dt
    t = np.arange(n_frames) * spec.dt

    def centred(rel_path):
        center = np.array([_uniform(rng, r["center"]), _uniform(rng, r["center"])])
        return center - rel_path.mean(axis=0)

    if cls is MotionClass.UNIFORM:
        v0 = _uniform(rng, r["speed"]) * _unit(rng)
        x0 = centred(v0 * t[:, None])
        return PhysParams(gravity=0.0, position=tuple(x0), velocity=tuple(v0))
    if cls in (MotionClass.ACCELERATED, MotionClass.DECELERATED):
        s_lo = _uniform(rng, r["low_speed"])
        a = _uniform(rng, r["accel"])
        s_hi = s_lo + a * duration
        u = _unit(rng)
        if cls is MotionClass.ACCELERATED:
            v0, acc = s_lo * u, a
        else:
            v0, acc = s_hi * u, -a
        rel = v0 * t[:, None] + 0.5 * acc * u * (t * t)[:, None]
        return PhysParams(gravity=0.0, position=tuple(centred(rel)), velocity=tuple(v0), accel=acc)
    g = _uniform(rng, r["gravity"])
    vx = _uniform(rng, r["horizontal_speed"]) * rng.choice([-1.0, 1.0])
    if cls is MotionClass.PARABOLIC:
        vy = g * _uniform(rng, r["apex_fraction"]) * duration
        rel = np.column_stack([vx * t, vy * t - 0.5 * g * t * t])
        return PhysParams(gravity=g, position=tuple(centred(rel)), velocity=(vx, vy))
    x0 = _uniform(rng, r["center"]) - vx * duration / 2.0
    y0 = _uniform(rng, r["drop_height"])
    e = _uniform(rng, r["restitution"])
    return PhysParams(gravity=g, position=(x0, y0), velocity=(vx, 0.0), restitution=e, floor=0.0)


# -------------------------------------------------------------------- dataset
@dataclass
class Episode:
    id: str
    label: int
    split: str
    states: np.ndarray  # (n, 5) float64: t, x, y, vx, vy
    observations: np.ndarray  # (n, d_obs) float32
    appearance: np.ndarray  # (d_a,) float64

    @property
    def class_name(self):
        return CLASS_NAMES[self.label]

    @property
    def n_frames(self):
        return len(self.states)


def _assign_splits(rng, n, fractions):
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    labels = np.empty(n, dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train : n_train + n_val]] = "val"
    labels[order[n_train + n_val :]] = "test"
    return list(labels)


def build_episodes(spec, seed):
    """Generate every episode of ``spec`` in memory.  Pure function of (spec, seed)."""
    root = np.random.SeedSequence(seed)
    model_seq, split_seq, *class_seqs = root.spawn(2 + len(CLASS_NAMES))
    obs_model = ObservationModel.random(
        np.random.default_rng(model_seq),
        d_obs=spec.d_obs,
        d_a=spec.d_a,
        noise_std=spec.noise_std,
        position_scale=spec.position_scale,
        velocity_scale=spec.velocity_scale,
        appearance_gain=spec.appearance_gain,
        observe_position=spec.observe_position,
    )
    split_rng = np.random.default_rng(split_seq)
    episodes = []
    for cls_name, cls_seq in zip(CLASS_NAMES, class_seqs):
        count = int(spec.counts.get(cls_name, 0))
        splits = _assign_splits(split_rng, count, spec.splits)
        for i, ep_seq in enumerate(cls_seq.spawn(count)):
            rng = np.random.default_rng(ep_seq)
            lo, hi = spec.frames
            n_frames = int(rng.integers(lo, hi + 1))
            params = sample_params(cls_name, rng, n_frames, spec)
            ep_id = f"{cls_name}-{i:05d}"
            traj = generate_trajectory(cls_name, params, n_frames, dt=spec.dt, episode_id=ep_id)
            render_seed = int(rng.integers(0, 2**63 - 1))
            obs, app = render_observations(traj, obs_model, seed=render_seed)
            episodes.append(
                Episode(ep_id, MotionClass.parse(cls_name).index, splits[i], traj.states(), obs, app)
            )
    return episodes, obs_model


EPISODE_LAYOUT = {
    "magic": EPISODE_MAGIC.decode(),
    "header": "u32 little-endian length followed by a UTF-8 JSON header "
    "{id, class, label, split, dt, n_frames, d_obs, d_a, state_columns}",
    "body": [
        "states: n_frames x 5 float64 little-endian, row-major, columns t x y vx vy",
        "observations: n_frames x d_obs float32 little-endian, row-major",
        "appearance: d_a float64 little-endian",
    ],
}


def encode_episode(ep, dt, class_name):
    header = {
        "id": ep.id,
        "class": class_name,
        "label": ep.label,
        "split": ep.split,
        "dt": dt,
        "n_frames": ep.n_frames,
        "d_obs": int(ep.observations.shape[1]),
        "d_a": int(ep.appearance.shape[0]),
        "state_columns": ["t", "x", "y", "vx", "vy"],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return b"".join(
        [
            EPISODE_MAGIC,
            len(hb).to_bytes(4, "little"),
            hb,
            np.ascontiguousarray(ep.states, dtype="<f8").tobytes(),
            np.ascontiguousarray(ep.observations, dtype="<f4").tobytes(),
            np.ascontiguousarray(ep.appearance, dtype="<f8").tobytes(),
        ]
    )


def decode_episode(raw):
    if not raw.startswith(EPISODE_MAGIC):
        raise DataError("not an episode file")
    pos = len(EPISODE_MAGIC)
    hlen = int.from_bytes(raw[pos : pos + 4], "little")
    pos += 4
    header = json.loads(raw[pos : pos + hlen])
    pos += hlen
    n, d_obs, d_a = header["n_frames"], header["d_obs"], header["d_a"]
    states = np.frombuffer(raw, dtype="<f8", count=n * 5, offset=pos).reshape(n, 5)
    pos += n * 5 * 8
    obs = np.frombuffer(raw, dtype="<f4", count=n * d_obs, offset=pos).reshape(n, d_obs)
    pos += n * d_obs * 4
    app = np.frombuffer(raw, dtype="<f8", count=d_a, offset=pos)
    ep = Episode(
        header["id"],
        int(header["label"]),
        header["split"],
        states.astype(np.float64),
        obs.astype(np.float32),
        app.astype(np.float64),
    )
    return ep, header


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def _manifest_bytes(manifest):
    return (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode()


def generate_dataset(spec, seed, out_dir):
    """Write ``manifest.json`` plus one binary file per episode under ``out_dir``.

    Returns the sha256 of the manifest file.
    """
    if isinstance(spec, dict):
        spec = DatasetSpec.from_dict(spec)
    out = Path(out_dir)
    try:
        (out / "episodes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from exc
    episodes, obs_model = build_episodes(spec, seed)
    records = []
    for ep in episodes:
        raw = encode_episode(ep, spec.dt, ep.class_name)
        fname = f"episodes/{ep.id}.bin"
        try:
            (out / fname).write_bytes(raw)
        except OSError as exc:
            raise DataError(f"cannot write {out / fname}: {exc}") from exc
        records.append(
            {"id": ep.id, "file": fname, "class": ep.class_name, "n_frames": ep.n_frames,
             "split": ep.split, "sha256": _sha256(raw)}
        )
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": int(seed),
        "spec": spec.to_dict(),
        "classes": CLASS_NAMES,
        "observation_model": obs_model.to_dict(),
        "episode_layout": EPISODE_LAYOUT,
        "episodes": records,
    }
    data = _manifest_bytes(manifest)
    (out / "manifest.json").write_bytes(data)
    return _sha256(data)


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataError(f"dataset manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("format", "version", "seed", "spec", "episodes", "observation_model"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks required field {key!r}")
    if manifest["format"] != DATASET_FORMAT or manifest["version"] != DATASET_VERSION:
        raise DataError(f"unsupported dataset format {manifest['format']} v{manifest['version']}")
    return manifest


def verify_regeneration(dataset_dir):
    """Regenerate from the manifest's (spec, seed) and compare every episode hash."""
    manifest = read_manifest(dataset_dir)
    spec = DatasetSpec.from_dict(manifest["spec"])
    episodes, obs_model = build_episodes(spec, manifest["seed"])
    if obs_model.to_dict() != manifest["observation_model"]:
        return False
    fresh = [_sha256(encode_episode(ep, spec.dt, ep.class_name)) for ep in episodes]
    return fresh == [r["sha256"] for r in manifest["episodes"]]


class Dataset:
    """Episodes plus the manifest they came from."""

    def __init__(self, episodes, manifest=None, obs_model=None, manifest_hash=None):
        self.episodes = list(episodes)
        self.manifest = manifest or {}
        self.obs_model = obs_model
        self.hash = manifest_hash or _sha256(
            b"".join(_sha256(ep.observations.tobytes()).encode() for ep in self.episodes)
        )

    @classmethod
    def from_spec(cls, spec, seed):
        episodes, obs_model = build_episodes(spec, seed)
        manifest = {"seed": seed, "spec": spec.to_dict()}
        return cls(episodes, manifest, obs_model)

    def split(self, name):
        return [ep for ep in self.episodes if ep.split == name]

    def ids(self, split):
        return {ep.id for ep in self.split(split)}

    def __len__(self):
        return len(self.episodes)

    @property
    def min_frames(self):
        return min(ep.n_frames for ep in self.episodes)


def load_dataset(dataset_dir, verify_hashes=True):
    dataset_dir = Path(dataset_dir)
    manifest = read_manifest(dataset_dir)
    episodes = []
    for rec in manifest["episodes"]:
        path = dataset_dir / rec["file"]
        if not path.exists():
            raise DataError(f"episode file missing: {path}")
        raw = path.read_bytes()
        if verify_hashes and _sha256(raw) != rec["sha256"]:
            raise DataError(f"episode {rec['id']} does not match its manifest hash")
        ep, _ = decode_episode(raw)
        episodes.append(ep)
    mhash = _sha256((dataset_dir / "manifest.json").read_bytes())
    return Dataset(episodes, manifest, ObservationModel.from_dict(manifest["observation_model"]), mhash)


def manifest_hash(dataset_dir):
    return _sha256((Path(dataset_dir) / "manifest.json").read_bytes())
