"""End-to-end acceptance checks.

Every criterion prints one ``PASS``/``FAIL`` line (shown even when pytest
captures output) and then asserts.  Run with::

    pytest tests/test_acceptance.py -v

The ablation criteria share one session-scoped training run of the four loss
arms plus a frame-wise model; expect about five minutes on one CPU core.
"""

import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from phymotion import evalbench as eb
from phymotion import tensor as T
from phymotion.gradcheck import check_grad, check_module_grad
from phymotion.hsic import KernelSpec, hsic, hsic_from_grams, median_bandwidth
from phymotion.model import DualBranchModel, ModelConfig
from phymotion.ode import DynamicsFn, ode_solve, rollout
from phymotion.physim import CLASS_NAMES, Dataset, DatasetSpec, PhysParams, arc_apexes, generate_trajectory, mechanical_energy
from phymotion.tensor import Tensor
from phymotion.training import TrainConfig, physics_loss, physics_terms, train

from test_tensor import PRIMITIVES

# reference run: 500 class-balanced training clips, 50 validation and 50 test clips per class
REFERENCE_SPEC = DatasetSpec(counts={c: 200 for c in CLASS_NAMES}, splits=(0.5, 0.25, 0.25))
REFERENCE_SEED = 0
REFERENCE_TRAIN = TrainConfig()
NON_UNIFORM = ["accelerated", "decelerated", "parabolic", "rebound"]


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return emit


# ------------------------------------------------------------------ 1 solver
def test_c1_solver_correctness(verdict):
    t0 = time.perf_counter()

    def exp_at(h):
        return ode_solve(lambda z, t: z, np.array([1.0]), 1.0, h)[-1].item()

    err = abs(exp_at(0.1) - math.e)
    order = math.log2(err / abs(exp_at(0.05) - math.e))

    def accel(z, t):
        return T.concat([z[1:2], z[1:2] * 0.0 + np.float32(-1.0)], axis=0)

    z = ode_solve(accel, np.array([0.0, 2.0], dtype=np.float32), 2.0, 0.1)[-1].data
    const_err = float(np.abs(z - np.array([2.0, 0.0])).max())
    elapsed = time.perf_counter() - t0
    ok = err < 5e-6 and 3.7 <= order <= 4.3 and const_err <= 1e-5 and elapsed < 1.0
    verdict("C1 solver", ok, f"|z-e|={err:.2e} order={order:.3f} const-accel err={const_err:.1e} ({elapsed:.2f}s)")
    assert ok


# ------------------------------------------------------------- 2 gradients
def test_c2_gradient_integrity(verdict):
    t0 = time.perf_counter()
    worst = {name: check_grad(build, arrays, step=1e-3) for name, build, arrays in PRIMITIVES}
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
    s1, s2 = median_bandwidth(a)[0], median_bandwidth(b)[0]
    worst["hsic"] = check_grad(lambda x, y: hsic(x, y, KernelSpec(s1), KernelSpec(s2)), [a, b], step=1e-3)

    model = DualBranchModel(ModelConfig(seed=1)).astype(np.float64)
    f = Tensor(rng.standard_normal((7, 32)))  # 2N+1 frames for a 3-frame rollout

    def loss():
        return physics_loss(f, model, 3)

    from phymotion.nn import Module

    class OdePath(Module):
        def __init__(self, m):
            self.latent_map, self.dynamics, self.readout = m.latent_map, m.dynamics, m.readout

    worst["ode_rollout"] = check_module_grad(OdePath(model), loss, step=1e-3, max_params=6)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and elapsed < 30
    verdict("C2 gradients", ok, f"{len(worst)} checks, max rel err {max(worst.values()):.1e} ({elapsed:.1f}s)"
            + (f" failing: {bad}" if bad else ""))
    assert ok


# ------------------------------------------------------------------ 3 HSIC
def test_c3_hsic_algebra(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    sym = neg = perm = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 24))
        x, y = rng.standard_normal((n, 3)), rng.standard_normal((n, 4)) * 2
        v = hsic(x, y).item()
        sym = max(sym, abs(v - hsic(y, x).item()))
        neg = min(neg, v)
        p = rng.permutation(n)
        perm = max(perm, abs(v - hsic(x[p], y[p]).item()))
    const = hsic(rng.standard_normal((8, 3)), np.ones((8, 2))).item()
    k = np.array([[1, 0.5], [0.5, 1]])
    l = np.array([[1, 0.2], [0.2, 1]])
    closed = abs(hsic_from_grams(k, l).item() - (1 - 0.5) * (1 - 0.2))
    wins = 0
    with T.no_grad():
        for trial in range(100):
            r = np.random.default_rng(1000 + trial)
            x = r.standard_normal((256, 2))
            wins += hsic(x, x + r.standard_normal((256, 2))).item() > hsic(x, r.standard_normal((256, 2))).item()
    elapsed = time.perf_counter() - t0
    ok = sym <= 1e-6 and neg >= -1e-9 and perm <= 1e-6 and abs(const) <= 1e-6 and closed <= 1e-6 and wins >= 99
    ok = ok and elapsed < 10
    verdict("C3 HSIC", ok, f"sym={sym:.1e} min={neg:.1e} perm={perm:.1e} const={const:.1e} "
            f"n=2 err={closed:.1e} sensitivity {wins}/100 ({elapsed:.1f}s)")
    assert ok


# ---------------------------------------------------------- 4 physics loss
def test_c4_physics_loss_bookkeeping(verdict):
    t0 = time.perf_counter()
    model = DualBranchModel(ModelConfig()).astype(np.float64)
    f = np.random.default_rng(0).standard_normal((12, 32))
    n_terms = physics_terms(Tensor(f), model, 3).size
    leaf = Tensor(f.copy(), requires_grad=True)
    physics_loss(leaf, model, 3).backward()
    leaked = float(np.abs(leaf.grad[:2]).max())
    elapsed = time.perf_counter() - t0
    ok = n_terms == 21 and leaked == 0.0 and elapsed < 1.0
    verdict("C4 physics-loss bookkeeping", ok, f"{n_terms} terms, excluded-frame grad {leaked} ({elapsed:.2f}s)")
    assert ok


# ------------------------------------------------------------- 5 simulator
def test_c5_simulator_ground_truth(verdict):
    uni = generate_trajectory("uniform", PhysParams(velocity=(1.3, -0.4)), 600)
    drift = float(np.abs(uni.velocities - uni.velocities[0]).max())
    g = 9.8
    par = generate_trajectory("parabolic", PhysParams(gravity=g, velocity=(0.5, 20.0)), 200)
    d2 = np.diff(par.positions[:, 1], 2)
    par_err = float(np.abs(d2 / (-g * 0.01) - 1).max())
    reb = generate_trajectory("rebound", PhysParams(gravity=g, position=(0, 3.0), velocity=(0.4, 0.0)), 600)
    e = mechanical_energy(reb)
    energy_err = float(np.abs(e / e[0] - 1).max())
    damp = generate_trajectory("rebound", PhysParams(gravity=10.0, position=(0, 5.0), velocity=(0, 0), restitution=0.8), 100)
    apex = arc_apexes(damp)
    ratio = float(apex[1] / apex[0])
    ok = drift <= 1e-9 and par_err <= 1e-6 and energy_err <= 1e-6 and abs(ratio - 0.64) <= 1e-3
    verdict("C5 simulator", ok, f"uniform drift={drift:.1e} parabolic rel={par_err:.1e} "
            f"energy rel={energy_err:.1e} peak ratio={ratio:.6f}")
    assert ok


# ------------------------------------------------------ shared reference run
@pytest.fixture(scope="session")
def reference():
    with threadpool_limits(limits=1):
        ds = Dataset.from_spec(REFERENCE_SPEC, REFERENCE_SEED)
        t0 = time.perf_counter()
        arms = {r.name: r for r in eb.run_ablation(ds, REFERENCE_TRAIN, split="test")}
        ablation_time = time.perf_counter() - t0
        framewise_cfg = ModelConfig(horizon=REFERENCE_TRAIN.horizon, seed=REFERENCE_TRAIN.seed, temporal_attention=False)
        framewise = train(ds, REFERENCE_TRAIN, framewise_cfg).model
    return {"dataset": ds, "arms": arms, "framewise": framewise, "ablation_time": ablation_time}


def test_c6_ablation_ordering(reference, verdict):
    arms = reference["arms"]
    failed = [n for n, r in arms.items() if r.failed]
    avg = {n: (r.report.average if not r.failed else float("nan")) for n, r in arms.items()}
    ok = (
        not failed
        and avg["full"] > avg["+L_phys"] > avg["base"]
        and avg["full"] > avg["+L_app"] > avg["base"]
        and avg["full"] - avg["base"] >= 15.0
        and reference["ablation_time"] < 30 * 60
    )
    table = " ".join(f"{n}={v:.1f}" for n, v in avg.items())
    verdict("C6 ablation ordering", ok, f"{table} gap={avg['full'] - avg['base']:.1f} "
            f"({reference['ablation_time'] / 60:.1f} min)" + (f" failed arms: {failed}" if failed else ""))
    assert ok


def test_c7_prediction_quality(reference, verdict):
    model = reference["arms"]["full"].model
    test = reference["dataset"].split("test")
    hm = eb.prediction_heatmap(model, test, context=9, horizon=3)
    excess = hm.diagonal_excess()
    ode = eb.rollout_errors(model, test, horizon=3)
    copy = eb.copy_last_baseline(model, test, horizon=3)
    ratios = {c: ode[c] / copy[c] for c in NON_UNIFORM}
    ok = bool(np.all(excess >= 0.1)) and all(r < 0.8 for r in ratios.values())
    verdict("C7 prediction quality", ok, f"diagonal excess {np.round(excess, 4).tolist()} (need >= 0.1); "
            "rollout/copy-last MSE " + ", ".join(f"{c}={r:.2f}" for c, r in ratios.items()) + " (need < 0.8)")
    assert ok


def test_c8_acc_dec_discrimination(reference, verdict):
    test = reference["dataset"].split("test")
    full = eb.binary_accuracy(reference["arms"]["full"].model, test, "accelerated", "decelerated")
    frame = eb.binary_accuracy(reference["framewise"], test, "accelerated", "decelerated")
    ok = full >= 75.0 and frame < 60.0
    verdict("C8 Acc/Dec discrimination", ok, f"full={full:.1f}% (need >= 75), frame-wise={frame:.1f}% (need < 60)")
    assert ok


# --------------------------------------------------------- 9 reproducibility
def test_c9_reproducibility(verdict, tmp_path):
    spec = DatasetSpec(counts={c: 20 for c in CLASS_NAMES})
    cfg = TrainConfig(epochs=3, seed=7)
    outputs = []
    with threadpool_limits(limits=1):
        for run in ("a", "b"):
            ds = Dataset.from_spec(spec, 7)
            res = train(ds, cfg, out_dir=tmp_path / run)
            meta = {"train_ids": sorted(ds.ids("train")), "train_config": cfg.to_dict()}
            report = eb.evaluate((res.model, meta), ds, "test")
            outputs.append(((tmp_path / run / "final.ckpt").read_bytes(), report.to_json()))
    same_ckpt = outputs[0][0] == outputs[1][0]
    same_report = outputs[0][1] == outputs[1][1]
    ok = same_ckpt and same_report
    verdict("C9 reproducibility", ok, f"checkpoints identical={same_ckpt}, reports identical={same_report}")
    assert ok
