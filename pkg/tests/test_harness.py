from dataclasses import replace

import numpy as np
import pytest

from adapj.adaptive import AdapJConfig, AdapJController, AdapJMatrices
from adapj.core import Trajectory, gen_trajectory
from adapj.harness import (
    DisturbanceProtocol,
    EmptyReportError,
    ExperimentConfig,
    TrajectorySpec,
    bench_step_time,
    csv_aggregates,
    make_controller,
    prepare,
    run_babbling,
    run_disturbance_protocol,
    run_sweep,
    run_tracking,
    theta_for_tip,
    timing_csv,
)
from adapj.plant import FingerPlantConfig, IntegrationFault, SoftPlant, _propagator, tip_position

SHORT = ExperimentConfig(trajectory=TrajectorySpec(duration=60.0), babble_samples=600)


class PlantInverseOracle:
    """Solves the exact one-step map of a linear-kinematics plant for the action."""

    def __init__(self, plant):
        self.plant = plant
        self.saturated = False

    def reset(self, s0, a0=None):
        pass

    def act(self, sd_next, s, sd_now=None):
        cfg = self.plant.cfg
        st = self.plant.state
        Mp, acc = _propagator(cfg.k_eff, cfg.d_eff, cfg.inertia, cfg.dt / cfg.substeps,
                              cfg.substeps)
        theta_target = np.asarray(sd_next) / (500.0 * cfg.length)
        free = Mp[0, 0] * st.theta + Mp[0, 1] * st.theta_dot
        return (theta_target - free) / (acc[0] * cfg.torque_gain)

    def observe(self, s_next):
        return 0.0

    def params(self):
        return {}


class FailingController(PlantInverseOracle):
    def act(self, sd_next, s, sd_now=None):
        if self.plant.step_index == 10:
            raise ValueError("boom")
        return np.zeros(1)


class FaultyPlant(SoftPlant):
    def step(self, a):
        if self.step_index == 5:
            raise IntegrationFault("blown up")
        return super().step(a)


def test_babbling_size_and_bounds():
    ds = run_babbling(SoftPlant(FingerPlantConfig()), 100, seed=3)
    assert len(ds) == 100
    assert np.all(np.abs(ds.actions) <= 1.0)
    assert np.all(np.abs(np.diff(ds.actions[:, 0])) <= 0.2 + 1e-12)


def test_babbling_deterministic():
    a = run_babbling(SoftPlant(FingerPlantConfig()), 200, seed=9)
    b = run_babbling(SoftPlant(FingerPlantConfig()), 200, seed=9)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)


def test_babbling_white_noise_bounds():
    ds = run_babbling(SoftPlant(FingerPlantConfig(axes=2)), 300, seed=1, mode="white",
                      bounds=(-0.5, 0.5))
    assert np.all(np.abs(ds.actions) <= 0.5)


def test_babbling_needs_three_samples():
    with pytest.raises(ValueError):
        run_babbling(SoftPlant(FingerPlantConfig()), 2, seed=0)


def test_analytic_inverse_tracks_perfectly():
    cfg = replace(SHORT, plant=FingerPlantConfig(kinematics="linear"),
                  trajectory=TrajectorySpec(params={"amplitude": 40.0, "period": 60.0,
                                                    "setpoints": []}, duration=60.0))
    plant = SoftPlant(cfg.plant)
    rep = run_tracking(cfg, controller=PlantInverseOracle(plant), plant=plant)
    assert rep.status == "ok"
    assert rep.mae < 1e-6


def test_frozen_wrong_matrices_track_worse(finger_data):
    from adapj.adaptive import adapj_init

    good = adapj_init(finger_data)
    wrong = AdapJMatrices(good.W * np.array([[0.5, 0.5, 0.2]]), 1)
    res = {}
    for upd in (True, False):
        ctrl = AdapJController(wrong, AdapJConfig(), update=upd)
        res[upd] = run_tracking(SHORT, controller=ctrl).mae
    assert res[False] > res[True]


def test_single_point_trajectory_is_empty():
    traj = Trajectory(np.zeros((1, 1)), 0.1, "manual")
    with pytest.raises(EmptyReportError):
        run_tracking(SHORT, traj=traj, controller=PlantInverseOracle(None))


def test_controller_fault_gives_partial_report():
    plant = SoftPlant(FingerPlantConfig())
    rep = run_tracking(SHORT, controller=FailingController(plant), plant=plant)
    assert rep.status == "controller_fault"
    assert len(rep.t) == 10
    assert "boom" in rep.error


def test_integration_fault_gives_partial_report():
    plant = FaultyPlant(FingerPlantConfig())
    rep = run_tracking(SHORT, controller=FailingController(plant), plant=plant)
    assert rep.status == "integration_fault"
    assert len(rep.t) == 5


@pytest.fixture(scope="module")
def short_prep():
    return prepare(SHORT, ("adapj", "mpc", "jacobian", "rnn", "rnn100", "ifc"))


@pytest.mark.parametrize("kind", ["adapj", "jacobian", "mpc", "rnn", "rnn100", "ifc"])
def test_every_controller_runs(kind, short_prep):
    rep = run_tracking(replace(SHORT, controller=kind), short_prep)
    assert rep.status == "ok"
    assert len(rep.t) == 600
    assert np.isfinite(rep.mae)


def test_report_aggregates_match_csv(short_prep):
    rep = run_tracking(SHORT, short_prep)
    mae, std = csv_aggregates(rep.to_csv(), 1)
    agg = rep.aggregates()
    assert abs(mae - agg["mae"]) < 1e-9 and abs(std - agg["std"]) < 1e-9
    assert agg["step_time_p95_s"] >= 0


def test_run_deterministic(short_prep):
    a = run_tracking(SHORT, short_prep).to_csv()
    b = run_tracking(SHORT, prepare(SHORT, ("adapj",))).to_csv()
    assert a == b


@pytest.mark.parametrize("kind", ["adapj", "mpc"])
def test_update_norm_respects_cap(kind, short_prep):
    rep = run_tracking(replace(SHORT, controller=kind, stiffness_ratio=2.0), short_prep)
    cap = SHORT.adapj.delta_omega_max if kind == "adapj" else short_prep.mpc.delta_max
    assert rep.update_norm.max() <= cap + 1e-12
    assert rep.update_norm.max() > 0


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(controller="pid")
    with pytest.raises(ValueError):
        ExperimentConfig(stiffness_ratio=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig(adapj_samples=2)


def test_sweep_row_count_and_consistency():
    res = run_sweep(SHORT, (0.5, 1.0, 2.0), (), ("jacobian", "mpc", "adapj", "rnn"))
    assert len(res.rows) == 12
    plain = run_tracking(replace(SHORT, controller="mpc"))
    assert res.table()[("stiffness", 1.0, "mpc", 0)] == plain.mae
    assert set(res.adapj_params) == {("stiffness", r, 0) for r in (0.5, 1.0, 2.0)}
    assert res.to_csv().splitlines()[0] == "axis,ratio,controller,seed,mae,std"


def test_sweep_independent_of_workers():
    kw = dict(stiffness_ratios=(0.5, 2.0), damping_ratios=(2.0,),
              controllers=("adapj", "adapj_frozen"), seeds=(0, 1))
    a = run_sweep(SHORT, workers=1, **kw)
    b = run_sweep(SHORT, workers=3, **kw)
    assert a.to_csv() == b.to_csv()
    assert a.params_csv() == b.params_csv()


def test_sweep_rejects_bad_ratio():
    with pytest.raises(ValueError):
        run_sweep(SHORT, (0.0,), (), ("adapj",))


def test_theta_for_tip_roundtrip():
    cfg = FingerPlantConfig()
    for x in (-100.0, -20.0, 5.0, 60.0, 131.0):
        assert tip_position(theta_for_tip(x, cfg))[0] == pytest.approx(x, abs=1e-8)
    with pytest.raises(ValueError):
        theta_for_tip(150.0, cfg)


def test_protocol_without_disturbance_is_stationary():
    res = run_disturbance_protocol(ExperimentConfig(), DisturbanceProtocol(enabled=False))
    mae = np.array(res.round_mae)
    assert len(mae) == 5
    assert np.all((mae / mae[0] >= 0.5) & (mae / mae[0] <= 2.0))
    assert res.labels == ["none"] * 5


def test_protocol_round_slices_aligned():
    res = run_disturbance_protocol(
        replace(ExperimentConfig(), trajectory=TrajectorySpec()),
        DisturbanceProtocol(round_time=10.0))
    slices = res.report.round_slices()
    R = res.report.round_length
    assert [s.start for s in slices] == [r * R for r in range(5)]
    lengths = {s.stop - s.start for s in slices}
    assert lengths == {R - 1}
    sd = res.report.sd
    np.testing.assert_allclose(sd[slices[0]], sd[slices[3]], atol=1e-9)
    assert res.to_csv().splitlines()[0] == "round,disturbance,mae,mean_action"


def test_bench_rows(short_prep):
    ctrls = {k: make_controller(k, short_prep, SHORT) for k in ("adapj", "mpc")}
    rows = bench_step_time(ctrls, 1000, warmup=10)
    assert [r.controller for r in rows] == ["adapj", "mpc"]
    assert all(r.p95_s >= r.median_s > 0 for r in rows)
    assert len(timing_csv(rows).splitlines()) == 3
    with pytest.raises(ValueError):
        bench_step_time(ctrls, 10)


def test_trajectory_dimension_mismatch():
    traj = gen_trajectory("lissajous", duration=10.0)
    with pytest.raises(ValueError):
        run_tracking(SHORT, traj=traj, controller=PlantInverseOracle(None))
