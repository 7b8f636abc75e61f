"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line
in the terminal summary (see conftest.py).

Criteria 5 and 10 share one session fixture that simulates the desk-scale
dataset and trains three ACDM seeds; it dominates the runtime (~45 min on one
CPU core).
"""

import time

import numpy as np
import pytest

from acdm_bench import cli
from acdm_bench import tensor as T
from acdm_bench.backbones import BackboneSpec, build
from acdm_bench.data import Trajectory, apply_mask, compute_norm_stats, fluid_mask, normalize
from acdm_bench.fluid import SimConfig, divergence, generate_trajectory
from acdm_bench.metrics import (
    ensemble_std,
    pairwise_l2,
    pearson,
    pearson_over_time,
    rate_of_change,
    spatial_spectrum_line,
    temporal_spectrum_probe,
    tke_spectrum,
    wake_regions,
)
from acdm_bench.objectives import (
    ObjectiveConfig,
    forward_diffuse,
    make_schedule,
    train,
    unrolled_train_step,
)
from acdm_bench.sampler import RolloutConfig, acdm_predict_step, posterior_ensemble, reverse_step, rollout, rollout_states
from acdm_bench.tensor import Tensor
from acdm_bench.tensor.gradcheck import gradcheck, numeric_grad

pytestmark = pytest.mark.acceptance

# desk-scale learning setup shared by criteria 5 and 10
TRAIN_RE = list(range(200, 901, 50))
HELDOUT_RE = 525
SEEDS = (0, 1, 2)
STEPS = 3000
LR = 1e-3
BATCH = 8
HORIZON = 20
STARTS = (0, 60, 120, 180, 240)
BUDGET_S = 3600.0


# ---------------------------------------------------------------------------
# 1. gradient suite


def _proj_sum(out: Tensor, proj: np.ndarray) -> Tensor:
    return T.sum(T.mul(out, proj))


def _grad_cases(rng):
    """(op name, fn, inputs) for five shapes per differentiable op."""
    t = lambda *s: Tensor(rng.standard_normal(s), requires_grad=True)
    cases = []
    for shape, O, k, s, p, d in [((1, 1, 5, 5), 1, 3, 1, 1, 1), ((2, 3, 6, 5), 2, 3, 1, 2, 2),
                                 ((1, 2, 7, 6), 3, 3, 2, 1, 1), ((2, 2, 4, 4), 2, 1, 1, 0, 1),
                                 ((1, 3, 8, 6), 2, 5, 1, 2, 1)]:
        x, w, b = t(*shape), t(O, shape[1], k, k), t(O)
        out_shape = T.conv2d(x, w, b, stride=s, padding=p, dilation=d).shape
        pr = rng.standard_normal(out_shape)
        cases.append(("conv2d", lambda x, w, b, s=s, p=p, d=d, pr=pr:
                      _proj_sum(T.conv2d(x, w, b, stride=s, padding=p, dilation=d), pr), [x, w, b]))
    for shape, g in [((2, 4, 3, 3), 2), ((1, 6, 2, 4), 3), ((3, 2, 4, 2), 1), ((2, 8, 2, 2), 4), ((1, 3, 5, 3), 3)]:
        x, gain, bias = t(*shape), t(shape[1]), t(shape[1])
        pr = rng.standard_normal(shape)
        cases.append(("group_norm", lambda x, a, c, g=g, pr=pr: _proj_sum(T.group_norm(x, g, a, c), pr),
                      [x, gain, bias]))
    for N, F, O in [(1, 3, 2), (4, 5, 3), (2, 8, 8), (3, 1, 4), (5, 6, 1)]:
        x, w, b = t(N, F), t(F, O), t(O)
        pr = rng.standard_normal((N, O))
        cases.append(("dense", lambda x, w, b, pr=pr: _proj_sum(T.dense(x, w, b), pr), [x, w, b]))
    for shape, O, mx, my in [((1, 1, 8, 6), 1, 3, 2), ((2, 2, 8, 8), 3, 5, 5), ((1, 3, 6, 4), 2, 4, 3),
                             ((1, 2, 7, 5), 2, 4, 3), ((2, 1, 10, 6), 2, 2, 4)]:
        x, wr, wi = t(*shape), t(shape[1], O, mx, my), t(shape[1], O, mx, my)
        pr = rng.standard_normal((shape[0], O) + shape[2:])
        cases.append(("spectral_conv2d", lambda x, a, b, mx=mx, my=my, pr=pr:
                      _proj_sum(T.spectral_conv2d(x, a, b, mx, my), pr), [x, wr, wi]))
    for shape in [(1, 1, 2, 2), (2, 3, 4, 6), (1, 2, 8, 4), (3, 1, 6, 2), (2, 2, 2, 8)]:
        x1, x2 = t(*shape), t(*shape)
        p1 = rng.standard_normal(shape[:2] + (shape[2] // 2, shape[3] // 2))
        p2 = rng.standard_normal(shape[:2] + (shape[2] * 2, shape[3] * 2))
        cases.append(("avg_pool2", lambda x, p1=p1: _proj_sum(T.avg_pool2(x), p1), [x1]))
        cases.append(("nearest_upsample2", lambda x, p2=p2: _proj_sum(T.nearest_upsample2(x), p2), [x2]))
    for shape in [(3,), (2, 4), (1, 2, 3, 3), (2, 3, 2, 2), (5, 1)]:
        a = Tensor(2 * rng.standard_normal(shape), requires_grad=True)
        b = Tensor(2 * rng.standard_normal(shape), requires_grad=True)
        # keep residuals off the Huber kink
        r = a.data - b.data
        a.data[np.abs(np.abs(r) - 1.0) < 1e-3] += 0.01
        cases.append(("huber", lambda a, b: T.huber_loss(a, b, 1.0), [a, b]))
        a2 = Tensor(a.data.copy(), requires_grad=True)
        b2 = Tensor(b.data.copy(), requires_grad=True)
        cases.append(("mse", lambda a, b: T.mse_loss(a, b), [a2, b2]))
    return cases


def test_c01_gradient_suite(record):
    t0 = time.time()
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}
    for name, fn, inputs in _grad_cases(np.random.default_rng(2024)):
        worst[name] = max(worst.get(name, 0.0), gradcheck(fn, inputs))
        counts[name] = counts.get(name, 0) + 1
    elapsed = time.time() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and min(counts.values()) >= 5 and elapsed <= 120
    record(1, ok, f"{len(worst)} ops, worst rel err {max(worst.values()):.2e}, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 2. schedule identities


def test_c02_schedule_identities(record):
    s500, s20 = make_schedule(500), make_schedule(20)
    abar = float(np.prod(1.0 - s20.betas))
    ok = (s500.betas[0] == 1e-4 and s500.betas[-1] == 0.02 and s20.betas[0] == 2.5e-3
          and s20.betas[-1] == 0.5 and abar < 0.01 and s20.alpha_bars[-1] < 0.01)
    record(2, ok, f"R=500 ({s500.betas[0]:g}, {s500.betas[-1]:g}); R=20 ({s20.betas[0]:g}, "
                  f"{s20.betas[-1]:g}), abar_R={abar:.2e}")


# ---------------------------------------------------------------------------
# 3. DDPM consistency


class _ZeroNoise:
    def standard_normal(self, shape):
        return np.zeros(shape)


def test_c03_ddpm_consistency(record):
    s = make_schedule(20)
    rng = np.random.default_rng(3)
    chain_err = 0.0
    for _ in range(20):
        x0 = np.array([[rng.standard_normal()]])
        d = forward_diffuse(x0, 20, rng.standard_normal((1, 1)), s)

        def oracle(x, r, x0=x0):
            ab = s.alpha_bars[int(np.asarray(r).ravel()[0])]
            return (np.asarray(x) - np.sqrt(ab) * x0) / np.sqrt(1 - ab)

        for r in range(20, 0, -1):
            d = reverse_step(oracle, d, r, s, rng)
        chain_err = max(chain_err, abs(d.item() - x0.item()))
    post_err = 0.0
    for _ in range(100):
        x0, eps = rng.standard_normal(), rng.standard_normal()
        r = int(rng.integers(1, 21))
        d_r = forward_diffuse(np.array([[x0]]), r, np.array([[eps]]), s)
        out = reverse_step(lambda x, rr: np.array([[eps]]), d_r, r, s, _ZeroNoise()).item()
        ab, abp = s.alpha_bars[r], s.alpha_bars[r - 1]
        mean = (np.sqrt(abp) * s.betas[r - 1] / (1 - ab)) * x0 + \
            (np.sqrt(1 - s.betas[r - 1]) * (1 - abp) / (1 - ab)) * d_r.item()
        post_err = max(post_err, abs(out - mean))
    record(3, chain_err <= 1e-6 and post_err <= 1e-10,
           f"chain err {chain_err:.1e}, posterior-mean err {post_err:.1e}")


# ---------------------------------------------------------------------------
# 4. solver physics


def test_c04_solver_physics(record):
    cfg = SimConfig(nx=128, ny=64, reynolds=300, total_steps=1500, warmup_cut=300, export_stride=2)
    worst = [0.0]

    def check(state):
        fluid = state.domain.index >= 0
        div = np.abs(divergence(state)[fluid]).max()
        umax = max(np.abs(state.u).max(), np.abs(state.v).max())
        worst[0] = max(worst[0], div / (umax / state.domain.h))

    t0 = time.time()
    a = generate_trajectory(cfg, seed=0, callback=check)
    elapsed = time.time() - t0
    _, power = temporal_spectrum_probe(a)
    peak = power[1:].max()
    ratio = peak / np.median(power[1:])
    b = generate_trajectory(cfg, seed=0)
    same = np.array_equal(a.states, b.states)
    ok = a.T + 1 == 600 and ratio >= 10 and worst[0] <= 1e-3 and same and elapsed <= 600
    record(4, ok, f"peak/median {ratio:.3g}, max h|div|/|u| {worst[0]:.1e}, deterministic={same}, "
                  f"{elapsed:.0f} s per run")


# ---------------------------------------------------------------------------
# 5 and 10. desk-scale learning


def _desk_data(root):
    def sim(re):
        return generate_trajectory(SimConfig(nx=64, ny=32, reynolds=float(re), total_steps=900,
                                             warmup_cut=300))

    raw = [sim(re) for re in TRAIN_RE]
    stats = compute_norm_stats(raw)
    mask = fluid_mask(raw[0])

    def prep(tr):
        tr = normalize(tr, stats)
        tr.states = apply_mask(tr.states, mask, tr.n_fields)
        return tr

    return [prep(t) for t in raw], prep(sim(HELDOUT_RE)), mask


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    t0 = time.time()
    trajs, test, mask = _desk_data(tmp_path_factory.mktemp("desk"))
    data_s = time.time() - t0
    runs = []
    t0 = time.time()
    for seed in SEEDS:
        model = build(BackboneSpec(kind="unet", in_channels=12, out_channels=4, width=16, emb_dim=32,
                                   dtype="float32"), seed)
        train(model, ObjectiveConfig(variant="acdm", k=2, R=20), trajs, STEPS, batch_size=BATCH, lr=LR,
              seed=seed, masks=[mask] * len(trajs), lr_schedule="cosine")
        rc = RolloutConfig(horizon=HORIZON, k=2, variant="acdm", R=20, seed=seed)
        err, pers = [], []
        fluid = mask > 0
        for start in STARTS:
            pred = rollout(model, test, rc, start=start, mask=mask).states[2:, :3]
            ref = test.states[start + 2:start + 2 + HORIZON, :3]
            # persistence: hold the latest known state
            hold = test.states[start + 1, :3]
            err.append(((pred - ref) ** 2)[:, :, fluid].mean())
            pers.append(((hold[None] - ref) ** 2)[:, :, fluid].mean())
        runs.append({"seed": seed, "model": model, "ratio": float(np.mean(err) / np.mean(pers))})
    return {"runs": runs, "test": test, "mask": mask, "train_s": time.time() - t0, "data_s": data_s}


def test_c05_desk_learning(record, desk_runs):
    ratios = [r["ratio"] for r in desk_runs["runs"]]
    passed = sum(r <= 0.5 for r in ratios)
    within = desk_runs["train_s"] <= BUDGET_S
    record(5, passed >= 2 and within,
           f"MSE/persistence {', '.join(f'{r:.3f}' for r in ratios)} ({passed}/3 <= 0.5), "
           f"train+rollout {desk_runs['train_s'] / 60:.1f} min, data {desk_runs['data_s']:.0f} s")


def test_c10_posterior_ensemble(record, desk_runs):
    test, mask = desk_runs["test"], desk_runs["mask"]
    wake, free = wake_regions(test)
    wake &= mask > 0
    details, passed = [], 0
    for run in desk_runs["runs"]:
        rc = RolloutConfig(horizon=HORIZON, k=2, variant="acdm", R=20, seed=run["seed"], ensemble_size=5)
        members = [m.states[2:] for m in posterior_ensemble(run["model"], test, rc, mask=mask)]
        spread = pairwise_l2(members, 3)
        sd = ensemble_std(members, 3)
        ratio = sd[wake].mean() / max(sd[free].mean(), 1e-300)
        passed += spread > 0 and ratio >= 2
        details.append(f"seed {run['seed']}: L2 {spread:.3g}, wake/free {ratio:.3g}")
    record(10, passed >= 2, "; ".join(details))


# ---------------------------------------------------------------------------
# 6. ncn contract


class _Recorder:
    def __init__(self, model):
        self.model, self.inputs = model, []

    def __call__(self, x, r=None):
        self.inputs.append(np.array(x))
        return self.model(x, r)


def test_c06_ncn_contract(record):
    rng = np.random.default_rng(0)
    init = rng.standard_normal((2, 4, 16, 8))
    model = build(BackboneSpec(kind="unet", in_channels=12, out_channels=4, width=8, emb_dim=8, groups=4))
    R, H = 20, 3
    res = {}
    for variant in ("acdm-ncn", "acdm"):
        rec = _Recorder(model)
        cfg = RolloutConfig(horizon=H, k=2, variant=variant, R=R, seed=1)
        states = rollout_states(rec, init, cfg, n_fields=3)
        flags = []
        for t in range(H):
            c0 = states[t:t + 2].reshape(1, 8, 16, 8)
            flags += [np.array_equal(x[:, :8], c0) for x in rec.inputs[t * R:(t + 1) * R]]
        res[variant] = (len(rec.inputs), flags)
    n_ncn, eq_ncn = res["acdm-ncn"]
    n_full, eq_full = res["acdm"]
    ok = n_ncn == n_full == R * H and all(eq_ncn) and not any(eq_full)
    record(6, ok, f"ncn equal {sum(eq_ncn)}/{len(eq_ncn)} calls; acdm equal {sum(eq_full)}/{len(eq_full)}")


# ---------------------------------------------------------------------------
# 7. training-noise inference equivalence


def test_c07_training_noise_inference(record):
    rng = np.random.default_rng(1)
    states = rng.standard_normal((12, 4, 16, 8))
    states[:, 3] = 0.3
    ref = Trajectory(states, 0.1, {"reynolds": np.full(12, 500.0)}, stats_ref="stats-toy")
    cfgs = {name: cli.resolve_config(None, preset=name, env={},
                                     overrides=["run.seed=0", "model.width=8", "model.groups=4"])
            for name in ("unet", "unet-tn-1e-2")}
    tn_model = build(cli.backbone_spec(cfgs["unet-tn-1e-2"], 4), 0)
    train(tn_model, cli.objective_config(cfgs["unet-tn-1e-2"]), [ref], 3, batch_size=2, lr=1e-3, seq_len=4)
    plain = build(cli.backbone_spec(cfgs["unet"], 4), 5)
    plain.load_state_dict(tn_model.state_dict())
    a = rollout(tn_model, ref, cli.rollout_config(cfgs["unet-tn-1e-2"], 8))
    b = rollout(plain, ref, cli.rollout_config(cfgs["unet"], 8))
    same = np.array_equal(a.states, b.states)
    record(7, same, f"{a.T + 1} states bit-identical={same}")


# ---------------------------------------------------------------------------
# 8. unrolled gradient path


def test_c08_unrolled_gradient(record):
    rng = np.random.default_rng(8)
    cond = rng.standard_normal((2, 1, 1, 4, 4))
    targets = rng.standard_normal((2, 4, 1, 4, 4))
    w = Tensor(np.array([[[[0.9]]]]), requires_grad=True)

    def step4(wt):
        _, steps = unrolled_train_step(lambda x, r=None: T.conv2d(x, wt), cond, targets, 4, return_steps=True)
        return steps[-1]

    T.backward(step4(w))
    analytic = float(w.grad.item())
    numeric = float(numeric_grad(step4, [w], 0).item())
    rel = abs(analytic - numeric) / abs(numeric)
    record(8, abs(analytic) > 0 and rel <= 1e-4, f"dL4/dw {analytic:.6g} vs FD {numeric:.6g} (rel {rel:.1e})")


# ---------------------------------------------------------------------------
# 9. metric oracles


def test_c09_metric_oracles(record):
    rng = np.random.default_rng(9)
    checks = {}
    ref = rng.standard_normal((3, 2, 6, 6))
    z = ref - ref.mean(axis=(1, 2, 3), keepdims=True)
    checks["pearson"] = (np.all(pearson_over_time(ref, ref) == 1.0) and np.all(pearson_over_time(-z, z) == -1.0)
                         and pearson(np.array([1.0, 2, 3]), np.array([2.0, 4, 6])) == 1.0)
    n = 128
    series = np.zeros((n, 3, 8, 4))
    series[:, 1, 3, 2] = np.sin(2 * np.pi * 9 * np.arange(n) / n)
    _, p = temporal_spectrum_probe(series, probe=(3, 2))
    line = np.zeros((4, 3, 8, 64))
    line[:, 0, 5] = np.cos(2 * np.pi * 7 * np.arange(64) / 64)
    _, q = spatial_spectrum_line(line, line=5, channel=0)
    wave = np.zeros((4, 3, 16, 8))
    sign = np.array([1.0, -1.0, 1.0, -1.0])[:, None, None]
    wave[:, 0] = sign * np.cos(2 * np.pi * 3 * np.arange(16)[:, None] / 16) * np.ones((1, 8))
    _, e = tke_spectrum(wave)
    checks["spectra"] = np.argmax(p) == 9 and np.argmax(q) == 7 and np.argmax(e) == 3
    rand = rng.standard_normal((7, 3, 16, 8))
    _, e = tke_spectrum(rand)
    u = rand[:, 0] - rand[:, 0].mean(axis=0)
    v = rand[:, 1] - rand[:, 1].mean(axis=0)
    parseval = abs(e.sum() - 0.5 * np.mean(u ** 2 + v ** 2))
    checks["parseval"] = parseval <= 1e-8
    ramp = np.arange(5.0)[:, None, None, None] * np.ones((5, 2, 3, 3))
    alt = 0.25 * (-1.0) ** np.arange(6)[:, None, None, None] * np.ones((6, 1, 4, 4))
    checks["rate_of_change"] = (np.all(rate_of_change(np.ones((4, 2, 3, 3))) == 0)
                                and np.all(rate_of_change(ramp) == 1.0) and np.all(rate_of_change(alt) == 0.5))
    record(9, all(checks.values()),
           ", ".join(f"{k}={'ok' if v else 'bad'}" for k, v in checks.items()) + f" (Parseval err {parseval:.1e})")


# ---------------------------------------------------------------------------
# 11. cost proportionality


def test_c11_cost_proportional_to_R(record):
    model = build(BackboneSpec(kind="unet", in_channels=12, out_channels=4, width=16, emb_dim=32,
                               dtype="float32"), 0)
    prev = np.random.default_rng(11).standard_normal((1, 2, 4, 64, 32))
    acdm_predict_step(model, prev, [0.0], make_schedule(20), np.random.default_rng(0))
    per_step = {}
    for R in (10, 20, 50):
        sched = make_schedule(R, clip_max=0.999)
        best = np.inf
        for rep in range(3):
            t0 = time.perf_counter()
            acdm_predict_step(model, prev, [0.0], sched, np.random.default_rng(rep))
            best = min(best, time.perf_counter() - t0)
        per_step[R] = best / R
    mean = np.mean(list(per_step.values()))
    dev = max(abs(c / mean - 1) for c in per_step.values())
    record(11, dev <= 0.2, ", ".join(f"R={R}: {1e3 * c:.1f} ms/step" for R, c in per_step.items())
           + f", max deviation {100 * dev:.0f}%")
