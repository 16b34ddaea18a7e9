"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import json
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from adapj.adaptive import (
    AdapJConfig,
    AdapJMatrices,
    adapj_act,
    adapj_init,
    adapj_update,
    gauss_newton_step,
)
from adapj.baselines import JacobianState, jacobian_act
from adapj.cli import main as cli_main
from adapj.core import WORKSPACE_HALF_SPAN_MM, BabblingDataset
from adapj.harness import (
    ExperimentConfig,
    bench_step_time,
    make_controller,
    prepare,
    run_disturbance_protocol,
    run_sweep,
    run_tracking,
)
from adapj.linapprox import demo_gradient, demo_surface, tangent_plane_coupled, tangent_plane_independent
from adapj.rnn import RnnConfig, RnnWeights, init_weights, loss_and_grads

SEEDS = (0, 1, 2)
UNBOUNDED = (-np.inf, np.inf)


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1-2: tangent-plane demo


def test_criterion_01_error_table(tmp_path, capsys):
    t0 = time.perf_counter()
    code = cli_main(["linapprox", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    res = json.loads((tmp_path / "report.json").read_text())["results"]
    ind, cpl = res["mae_independent"], res["mae_coupled"]
    ok = (code == 0 and abs(ind - 0.02667) < 1e-5 and abs(cpl - 0.05867) < 1e-5
          and elapsed < 1.0)
    record(1, ok, f"independent {ind:.6f}, coupled {cpl:.6f}, {elapsed:.3f} s")


def test_criterion_02_plane_coefficients():
    ind = tangent_plane_independent(demo_surface, -2.0, 1.0, demo_gradient)
    cpl = tangent_plane_coupled(demo_surface, -2.0, 1.0, demo_gradient)
    e1 = np.abs(np.array([ind.cx, ind.cy, ind.c0]) - [2 / 3, -1 / 3, 5 / 6]).max()
    e2 = np.abs(np.array([cpl.cx, cpl.cy, cpl.c0]) - [1 / 2, -1 / 2, 2 / 3]).max()
    record(2, e1 <= 1e-12 and e2 <= 1e-12, f"max deviation {max(e1, e2):.2e}")


# ---------------------------------------------------------------------------
# 3-5: controller algebra


def test_criterion_03_degeneration():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        d_s, d_a = rng.integers(1, 4, 2)
        k = min(d_s, d_a)
        U, _ = np.linalg.qr(rng.normal(size=(d_s, k)))
        V, _ = np.linalg.qr(rng.normal(size=(d_a, k)))
        J = U @ np.diag(10.0 ** rng.uniform(-1, 1, k)) @ V.T
        sd, s = rng.uniform(-WORKSPACE_HALF_SPAN_MM, WORKSPACE_HALF_SPAN_MM, (2, d_s))
        ap = rng.uniform(-1, 1, d_a)
        a_aj, _ = adapj_act(AdapJMatrices.inverse_jacobian(J), sd, s, ap, UNBOUNDED)
        a_j = jacobian_act(JacobianState(J), sd, s, ap, "inverse")
        worst = max(worst, np.abs(a_aj - a_j).max())
    record(3, worst <= 1e-12, f"max |difference| {worst:.2e} over 1000 instances")


def test_criterion_04_update_law():
    m = AdapJMatrices.zeros(1, 1)
    free = AdapJConfig(rho=0.1, delta_omega_max=np.inf, ridge_lambda=0.0)
    new, _ = adapj_update(m, [2.0], [1.0], [0.0], [1.0], free)
    hand_ok = np.array_equal(new.omega[:, 0], [0.04, 0.02, 0.0])
    capped = AdapJConfig(rho=0.1, delta_omega_max=0.01, ridge_lambda=0.0)
    new, _ = adapj_update(m, [2.0], [1.0], [0.0], [1.0], capped)
    step = new.omega[:, 0]
    clip_ok = (abs(np.linalg.norm(step) - 0.01) < 1e-15
               and np.allclose(step / 0.01, np.array([2, 1, 0]) / np.sqrt(5), atol=1e-15))
    rng = np.random.default_rng(7)
    W = np.zeros((2, 6))
    worst = 0.0
    cap = 1e-3
    for _ in range(100_000):
        phi = rng.normal(size=6) * rng.choice([1e-3, 1.0, 100.0])
        target = rng.normal(size=2) * 10
        dW, _ = gauss_newton_step(W, phi, target, 0.5, cap, 1e-8)
        if dW is not None:
            worst = max(worst, np.linalg.norm(dW))
            W = W + dW
    fuzz_ok = worst <= cap
    record(4, hand_ok and clip_ok and fuzz_ok,
           f"hand {hand_ok}, clipping {clip_ok}, fuzz max norm {worst:.6g} <= {cap}")


def test_criterion_05_identification():
    rng = np.random.default_rng(11)
    W = np.hstack([rng.normal(size=(2, 4)) * 0.5, 0.3 * np.eye(2)])
    n = 300
    S = rng.normal(size=(n, 2))
    A = np.zeros((n, 2))
    A[0] = rng.normal(size=2)
    for t in range(1, n - 1):
        A[t] = W @ np.concatenate([S[t + 1], S[t], A[t - 1]])
    init_err = np.linalg.norm(adapj_init(BabblingDataset(np.arange(n), S, A, 0.1)).W - W)

    m = AdapJMatrices.zeros(2, 2)
    cfg = AdapJConfig(rho=0.5, delta_omega_max=np.inf, ridge_lambda=0.0)
    for _ in range(500):
        phi = rng.normal(size=6)
        m, _ = adapj_update(m, phi[:2], phi[2:4], phi[4:], W @ phi, cfg)
    probe = rng.normal(size=(1000, 6))
    pred_err = np.abs(probe @ (m.W - W).T).max()
    record(5, init_err < 1e-6 and pred_err < 1e-4,
           f"init Frobenius error {init_err:.2e}, online prediction error {pred_err:.2e}")


# ---------------------------------------------------------------------------
# 6-8: closed-loop experiments on the 1-DoF finger


@pytest.fixture(scope="module")
def nominal_runs():
    t0 = time.perf_counter()
    out = {}
    for seed in SEEDS:
        cfg = ExperimentConfig(seed=seed)
        prep = prepare(cfg, ("adapj", "jacobian", "mpc", "rnn", "rnn100"))
        for kind in ("adapj", "jacobian", "mpc", "rnn", "rnn100"):
            rep = run_tracking(replace(cfg, controller=kind), prep)
            assert rep.status == "ok"
            out[(seed, kind)] = rep.mae
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_06_tracking_ordering(nominal_runs):
    mae, elapsed = nominal_runs
    limit = 0.01 * 2 * WORKSPACE_HALF_SPAN_MM
    ok = elapsed < 120
    parts = []
    for seed in SEEDS:
        a = mae[(seed, "adapj")]
        others = [mae[(seed, k)] for k in ("jacobian", "mpc", "rnn100")]
        ok &= all(a < o for o in others) and a < limit
        parts.append(f"seed {seed}: adapj {a:.3f} jac {others[0]:.3f} "
                     f"mpc {others[1]:.3f} rnn100 {others[2]:.3f}")
    record(6, ok, "; ".join(parts) + f"; limit {limit:.3f} mm; {elapsed:.1f} s")


@pytest.mark.slow
def test_criterion_07_data_appetite(nominal_runs):
    mae, _ = nominal_runs
    ok = all(mae[(s, "rnn100")] >= mae[(s, "rnn")] for s in SEEDS)
    detail = ", ".join(f"seed {s}: {mae[(s, 'rnn100')]:.3f} vs {mae[(s, 'rnn')]:.3f}"
                       for s in SEEDS)
    record(7, ok, "RNN_100 vs RNN MAE " + detail)


@pytest.mark.slow
def test_criterion_08_adaptability():
    res = run_sweep(ExperimentConfig(), (0.5, 1.0, 2.0), (0.5, 2.0),
                    ("adapj", "adapj_frozen", "rnn"), seeds=SEEDS)
    tab = res.table()
    ok = True
    bad = []
    for seed in SEEDS:
        for axis, r in (("stiffness", 0.5), ("stiffness", 2.0), ("damping", 0.5),
                        ("damping", 2.0)):
            on = tab[(axis, r, "adapj", seed)]
            frozen = tab[(axis, r, "adapj_frozen", seed)]
            rnn = tab[(axis, r, "rnn", seed)]
            if not (on < frozen and on < rnn):
                ok = False
                bad.append(f"{axis} {r} seed {seed}: {on:.3f}/{frozen:.3f}/{rnn:.3f}")
        a0 = [res.adapj_params[("stiffness", r, seed)]["A0"][0, 0] for r in (0.5, 1.0, 2.0)]
        if not a0[0] < a0[1] < a0[2]:
            ok = False
            bad.append(f"A0 trend seed {seed}: {a0}")
    margin = min(min(tab[(ax, r, "adapj_frozen", s)], tab[(ax, r, "rnn", s)])
                 - tab[(ax, r, "adapj", s)]
                 for s in SEEDS for ax in ("stiffness", "damping") for r in (0.5, 2.0))
    detail = "; ".join(bad) if bad else f"all 12 comparisons and 3 A0 trends hold, min margin {margin:.3f} mm"
    record(8, ok, detail)


# ---------------------------------------------------------------------------
# 9: disturbance protocol


@pytest.mark.slow
def test_criterion_09_disturbance_protocol():
    t0 = time.perf_counter()
    res = run_disturbance_protocol(ExperimentConfig())
    elapsed = time.perf_counter() - t0
    m = res.round_mae
    ratio = m[2] / m[0]
    ok = 0.5 <= ratio <= 2.0 and abs(res.shift_z) > 3 and elapsed < 60
    record(9, ok, f"round MAE {np.round(m, 3).tolist()}, round3/round1 {ratio:.2f}, "
                  f"obstacle-axis shift {res.shift:.4f} = {res.shift_z:.1f} SE, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 10-12


def test_criterion_10_timing_ordering():
    cfg = ExperimentConfig(babble_samples=1000)
    prep = prepare(cfg, ("adapj", "mpc", "rnn"))
    ctrls = {k: make_controller(k, prep, cfg) for k in ("adapj", "mpc", "rnn")}
    rows = {r.controller: r.median_s for r in bench_step_time(ctrls, 3000)}
    ok = rows["adapj"] < rows["mpc"] and rows["adapj"] < rows["rnn"]
    record(10, ok, ", ".join(f"{k} {v * 1e6:.1f} us" for k, v in rows.items()))


def test_criterion_11_gradient_check():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w = init_weights(2, 1, RnnConfig(n=2, hidden=3, seed=seed))
        w = RnnWeights(w.Wxh, w.Whh, rng.normal(size=3) * 0.3, w.Why, rng.normal(size=1) * 0.3)
        X = rng.uniform(-1, 1, (4, 2, 2))
        Y = rng.uniform(-1, 1, (4, 1))
        _, g = loss_and_grads(w, X, Y)
        h = 1e-6
        for name, arr in w.arrays().items():
            for idx in np.ndindex(arr.shape):
                vals = []
                for sign in (1, -1):
                    p = {k: v.copy() for k, v in w.arrays().items()}
                    p[name][idx] += sign * h
                    vals.append(loss_and_grads(RnnWeights(**p), X, Y)[0])
                num = (vals[0] - vals[1]) / (2 * h)
                rel = abs(g[name][idx] - num) / max(abs(num), abs(g[name][idx]), 1e-8)
                worst = max(worst, rel)
    record(11, worst < 1e-4, f"max relative gradient error {worst:.2e} over 20 seeds")


@pytest.mark.slow
def test_criterion_12_determinism(tmp_path):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text("[sweep]\nstiffness_ratios = [0.5, 2.0]\ndamping_ratios = [2.0]\n"
                   "controllers = [\"adapj\", \"mpc\", \"rnn\"]\nworkers = 2\n")
    commands = [["track", "--seed", "5"], ["track", "--controller", "rnn", "--seed", "5"],
                ["sweep", "--config", str(cfg), "--seed", "5"]]
    same = True
    for i, cmd in enumerate(commands):
        blobs = []
        for rep in range(2):
            out = tmp_path / f"c{i}_{rep}"
            assert cli_main(cmd + ["--out", str(out)]) == 0
            blobs.append(sorted((p.name, p.read_bytes()) for p in out.glob("*.csv")))
        same &= blobs[0] == blobs[1] and len(blobs[0]) > 0
    record(12, same, f"{len(commands)} commands run twice, CSV outputs byte-identical: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
