"""Experiment engine: babbling, controller set-up, closed-loop runs, sweeps,
the five-round disturbance protocol and step-time benchmarks."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .adaptive import AdapJConfig, AdapJController, AdapJMatrices, adapj_init
from .baselines import (
    IfcController,
    IfcState,
    JacobianController,
    JacobianState,
    MpcController,
    MpcState,
    jacobian_init,
    mpc_fit,
)
from .core import WORKSPACE_HALF_SPAN_MM, BabblingDataset, Trajectory, gen_trajectory
from .plant import (
    DisturbanceSpec,
    FingerPlantConfig,
    IntegrationFault,
    Obstacle,
    RandomImpulse,
    SoftPlant,
    apply_property_ratio,
    tip_position,
)
from .rnn import RnnConfig, RnnController, RnnWeights, fit_rnn

log = logging.getLogger(__name__)

CONTROLLER_KINDS = ("adapj", "jacobian", "mpc", "rnn", "rnn100", "ifc")


class EmptyReportError(ValueError):
    """A run had nothing to record."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "sine_then_steps"
    duration: float = 500.0
    params: dict = field(default_factory=dict)

    def build(self, dt: float) -> Trajectory:
        return gen_trajectory(self.kind, dict(self.params), dt=dt, duration=self.duration)


@dataclass(frozen=True)
class ExperimentConfig:
    plant: FingerPlantConfig = field(default_factory=FingerPlantConfig)
    stiffness_ratio: float = 1.0
    damping_ratio: float = 1.0
    controller: str = "adapj"
    update_enabled: bool = True
    adapj: AdapJConfig = field(default_factory=AdapJConfig)
    rnn: RnnConfig = field(default_factory=RnnConfig)
    mpc_alpha_da: float = 30.0  # mm^2 per unit^2 of actuation change
    jacobian_variant: str = "inverse"
    jacobian_delta: float = 0.1
    ifc_gamma: float = 0.2  # actuation per unit of normalized tracking error
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    seed: int = 0
    babble_samples: int = 5000  # data budget of the Jacobian, MPC and RNN baselines
    adapj_samples: int = 100  # AdapJ and RNN_100 use only the first samples
    babble_step: float = 0.1  # fraction of the actuation range per random-walk step
    babble_mode: str = "walk"  # or "white"
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    rounds: int = 1

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ValueError(
                f"unknown controller {self.controller!r}; choose from {CONTROLLER_KINDS}"
            )
        if self.stiffness_ratio <= 0 or self.damping_ratio <= 0:
            raise ValueError("property ratios must be positive")
        if self.babble_mode not in ("walk", "white"):
            raise ValueError(f"unknown babble_mode {self.babble_mode!r}")
        if not 3 <= self.adapj_samples <= self.babble_samples:
            raise ValueError("need 3 <= adapj_samples <= babble_samples")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def run_plant(self) -> FingerPlantConfig:
        return apply_property_ratio(self.plant, self.stiffness_ratio, self.damping_ratio)


# ---------------------------------------------------------------------------
# Data collection


def run_babbling(plant: SoftPlant, n: int, seed: int, bounds=None, step: float = 0.1,
                 mode: str = "walk") -> BabblingDataset:
    """Excite ``plant`` with a clamped random walk (or white noise) for ``n`` samples.

    Sample ``t`` pairs the state measured before the step with the actuation
    applied during it. The plant is reset first.
    """
    if n < 3:
        raise ValueError("babbling needs n >= 3")
    lo, hi = bounds if bounds is not None else (plant.cfg.a_min, plant.cfg.a_max)
    rng = np.random.default_rng(seed)
    plant.reset()
    width = step * (hi - lo)
    S = np.empty((n, plant.d_s))
    A = np.empty((n, plant.d_a))
    a = np.zeros(plant.d_a)
    for t in range(n):
        S[t] = plant.tip
        if mode == "walk":
            a = np.clip(a + rng.uniform(-width, width, plant.d_a), lo, hi)
        else:
            a = rng.uniform(lo, hi, plant.d_a)
        A[t] = a
        plant.step(a)
    dt = plant.cfg.dt
    meta = {"seed": seed, "mode": mode, "step": step}
    return BabblingDataset(np.arange(n), S, A, dt, meta)


# ---------------------------------------------------------------------------
# Controller preparation


@dataclass
class Prepared:
    """Initialization artifacts shared by runs at different property ratios."""

    data: BabblingDataset
    adapj: AdapJMatrices | None = None
    jacobian: np.ndarray | None = None
    mpc: MpcState | None = None
    rnn: RnnWeights | None = None
    rnn100: RnnWeights | None = None
    rnn_updates: int = 0


def _updates_for(n_samples: int, cfg: RnnConfig) -> int:
    windows = n_samples - cfg.n - 1
    per_epoch = -(-windows // min(cfg.batch, windows))
    return cfg.epochs * per_epoch


def prepare(cfg: ExperimentConfig, kinds=None) -> Prepared:
    """Babble on the nominal plant and fit whatever ``kinds`` need.

    Controllers are always initialized at property ratio 1, so runs at other
    ratios test adaptation rather than re-identification.
    """
    kinds = set(kinds or (cfg.controller,))
    nominal = cfg.plant
    need_big = kinds & {"jacobian", "mpc", "rnn", "ifc", "rnn100"}
    n = cfg.babble_samples if need_big else cfg.adapj_samples
    data = run_babbling(SoftPlant(nominal), n, cfg.seed, step=cfg.babble_step,
                        mode=cfg.babble_mode)
    prep = Prepared(data)
    small = data.head(cfg.adapj_samples)
    rcfg = replace(cfg.rnn, seed=cfg.seed, a_min=nominal.a_min, a_max=nominal.a_max)
    if kinds & {"adapj", "adapj_frozen"}:
        prep.adapj = adapj_init(small, cfg.adapj)
    if "jacobian" in kinds:
        prep.jacobian = jacobian_init(SoftPlant(nominal), cfg.jacobian_delta)
    if "mpc" in kinds:
        prep.mpc = mpc_fit(data, alpha_da=cfg.mpc_alpha_da)
    if kinds & {"rnn", "ifc"}:
        prep.rnn, report = fit_rnn(data, rcfg)
        prep.rnn_updates = report.updates
    if "rnn100" in kinds:
        # same number of gradient steps as the full-data network
        updates = prep.rnn_updates or _updates_for(cfg.babble_samples, rcfg)
        prep.rnn100, _ = fit_rnn(small, replace(rcfg, min_updates=updates))
    return prep


def make_controller(kind: str, prep: Prepared, cfg: ExperimentConfig):
    bounds = (cfg.plant.a_min, cfg.plant.a_max)
    update = cfg.update_enabled
    if kind == "adapj_frozen":
        kind, update = "adapj", False
    if kind == "adapj":
        acfg = replace(cfg.adapj, a_min=bounds[0], a_max=bounds[1])
        return AdapJController(prep.adapj, acfg, update=update)
    if kind == "jacobian":
        return JacobianController(JacobianState(prep.jacobian), cfg.jacobian_variant,
                                  bounds, update=update)
    if kind == "mpc":
        return MpcController(prep.mpc, bounds, update=update)
    if kind == "rnn":
        return RnnController(prep.rnn, cfg.rnn.n, bounds)
    if kind == "rnn100":
        return RnnController(prep.rnn100, cfg.rnn.n, bounds)
    if kind == "ifc":
        inner = RnnController(prep.rnn, cfg.rnn.n, bounds)
        d_s = prep.data.d_s
        gamma = cfg.ifc_gamma * np.eye(prep.data.d_a, d_s)
        return IfcController(IfcState(inner, gamma), bounds, error_scale=WORKSPACE_HALF_SPAN_MM)
    raise ValueError(f"unknown controller {kind!r}")


# ---------------------------------------------------------------------------
# Closed-loop runs


@dataclass
class RunReport:
    """Per-step records plus aggregates; record ``k`` is the state after step ``k``."""

    controller: str
    t: np.ndarray
    sd: np.ndarray
    s: np.ndarray
    a: np.ndarray
    saturated: np.ndarray
    update_norm: np.ndarray
    step_time: np.ndarray
    status: str = "ok"
    error: str = ""
    params: dict = field(default_factory=dict)
    round_length: int | None = None

    @property
    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.sd - self.s, axis=1)

    @property
    def mae(self) -> float:
        return float(self.errors.mean()) if len(self.t) else float("nan")

    @property
    def std(self) -> float:
        return float(self.errors.std()) if len(self.t) else float("nan")

    def aggregates(self) -> dict:
        times = self.step_time
        return {
            "controller": self.controller,
            "status": self.status,
            "error": self.error,
            "steps": int(len(self.t)),
            "mae": self.mae,
            "std": self.std,
            "step_time_mean_s": float(times.mean()) if times.size else float("nan"),
            "step_time_p95_s": float(np.percentile(times, 95)) if times.size else float("nan"),
            "saturated_fraction": float(self.saturated.mean()) if times.size else 0.0,
            "max_update_norm": float(self.update_norm.max()) if times.size else 0.0,
        }

    def to_csv(self) -> str:
        """Deterministic per-step time series (wall times are left out)."""
        d_s, d_a = self.sd.shape[1], self.a.shape[1]
        head = (["t"] + [f"sd_{i}" for i in range(d_s)] + [f"s_{i}" for i in range(d_s)]
                + [f"a_{i}" for i in range(d_a)] + ["saturated", "update_norm"])
        lines = [",".join(head)]
        for k in range(len(self.t)):
            vals = [self.t[k], *self.sd[k], *self.s[k], *self.a[k]]
            cells = [repr(float(v)) for v in vals]
            cells += [str(int(self.saturated[k])), repr(float(self.update_norm[k]))]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def round_slices(self):
        """Phase-aligned per-round record slices of equal length.

        Record ``k`` tracks desired sample ``k + 1``; the record that straddles
        a round boundary is dropped so round ``r`` covers desired samples
        ``r R + 1 ... (r + 1) R - 1``.
        """
        R = self.round_length
        if not R:
            return [slice(0, len(self.t))]
        n_rounds = (len(self.t) + 1) // R
        return [slice(r * R, (r + 1) * R - 1) for r in range(n_rounds)]


def csv_aggregates(text: str, d_s: int):
    """MAE and std recomputed from a serialized time series."""
    rows = np.array([[float(x) for x in ln.split(",")] for ln in text.strip().splitlines()[1:]])
    err = np.linalg.norm(rows[:, 1 : 1 + d_s] - rows[:, 1 + d_s : 1 + 2 * d_s], axis=1)
    return float(err.mean()), float(err.std())


def run_tracking(cfg: ExperimentConfig, prep: Prepared | None = None, controller=None,
                 plant: SoftPlant | None = None, traj: Trajectory | None = None,
                 kind: str | None = None) -> RunReport:
    """Closed-loop run; a fault ends it early with ``status`` set and partial records."""
    kind = kind or cfg.controller
    run_cfg = cfg.run_plant()
    traj = traj if traj is not None else cfg.trajectory.build(run_cfg.dt)
    if len(traj) < 2:
        raise EmptyReportError("trajectory needs at least 2 samples to produce a record")
    if plant is None:
        plant = SoftPlant(run_cfg, cfg.disturbance)
    if traj.d_s != plant.d_s:
        raise ValueError(f"trajectory has {traj.d_s} dims, plant state has {plant.d_s}")
    if controller is None:
        prep = prep if prep is not None else prepare(cfg, (kind,))
        controller = make_controller(kind, prep, cfg)
    n = len(traj) - 1
    d_s, d_a = plant.d_s, plant.d_a
    sd, s_log = traj.desired[1:].copy(), np.zeros((n, d_s))
    a_log, sat = np.zeros((n, d_a)), np.zeros(n, dtype=bool)
    norms, times = np.zeros(n), np.zeros(n)
    s = plant.tip.copy()
    controller.reset(s)
    status, err = "ok", ""
    done = 0
    clock = time.perf_counter
    for k in range(n):
        try:
            t0 = clock()
            a = controller.act(traj.desired[k + 1], s, traj.desired[k])
            t1 = clock()
            a_log[k] = a
            s = plant.step(a)
            t2 = clock()
            norms[k] = controller.observe(s)
            t3 = clock()
        except IntegrationFault as exc:
            status, err = "integration_fault", str(exc)
            break
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            status, err = "controller_fault", f"{type(exc).__name__}: {exc}"
            break
        times[k] = (t1 - t0) + (t3 - t2)
        s_log[k] = s
        sat[k] = bool(getattr(controller, "saturated", False))
        done = k + 1
    if status != "ok":
        log.error("run aborted at step %d: %s", done, err)
    dt = traj.dt
    return RunReport(
        controller=kind, t=dt * np.arange(1, done + 1), sd=sd[:done], s=s_log[:done],
        a=a_log[:done], saturated=sat[:done], update_norm=norms[:done],
        step_time=times[:done], status=status, error=err,
        params={k: np.array(v) for k, v in controller.params().items()},
        round_length=traj.round_length,
    )


# ---------------------------------------------------------------------------
# Property sweep


DEFAULT_RATIOS = (0.25, 0.5, 1.0, 2.0, 4.0)
SWEEP_CONTROLLERS = ("jacobian", "mpc", "adapj", "rnn")


@dataclass(frozen=True)
class SweepRow:
    axis: str  # "stiffness" or "damping"
    ratio: float
    controller: str
    seed: int
    mae: float
    std: float


@dataclass
class SweepResult:
    rows: list
    adapj_params: dict  # (axis, ratio, seed) -> {"A0": ..., "A1": ..., "B0": ...}
    reports: dict = field(default_factory=dict)

    def table(self):
        return {(r.axis, r.ratio, r.controller, r.seed): r.mae for r in self.rows}

    def to_csv(self) -> str:
        lines = ["axis,ratio,controller,seed,mae,std"]
        for r in self.rows:
            lines.append(f"{r.axis},{r.ratio!r},{r.controller},{r.seed},{r.mae!r},{r.std!r}")
        return "\n".join(lines) + "\n"

    def params_csv(self) -> str:
        lines = ["axis,ratio,seed,block,row,col,value"]
        for (axis, ratio, seed), blocks in sorted(self.adapj_params.items()):
            for name, blk in blocks.items():
                blk = np.atleast_2d(blk)
                for i in range(blk.shape[0]):
                    for j in range(blk.shape[1]):
                        lines.append(f"{axis},{ratio!r},{seed},{name},{i},{j},{float(blk[i, j])!r}")
        return "\n".join(lines) + "\n"


def run_sweep(base: ExperimentConfig, stiffness_ratios=DEFAULT_RATIOS,
              damping_ratios=DEFAULT_RATIOS, controllers=SWEEP_CONTROLLERS,
              seeds=None, workers: int = 1) -> SweepResult:
    """MAE of every controller at each stiffness ratio and each damping ratio.

    Each trial owns its plant and controller; results are keyed and sorted, so
    the outcome does not depend on ``workers``.
    """
    ratios = [("stiffness", float(r)) for r in stiffness_ratios]
    ratios += [("damping", float(r)) for r in damping_ratios]
    if any(r <= 0 for _, r in ratios):
        raise ValueError("ratios must be positive")
    seeds = (base.seed,) if seeds is None else tuple(seeds)
    preps = {seed: prepare(replace(base, seed=seed), controllers) for seed in seeds}

    def trial(job):
        axis, ratio, kind, seed = job
        ratio_kw = {"stiffness_ratio": ratio} if axis == "stiffness" else {"damping_ratio": ratio}
        cfg = replace(base, seed=seed, **ratio_kw)
        return job, run_tracking(cfg, preps[seed], kind=kind)

    jobs = [(ax, r, c, s) for s in seeds for ax, r in ratios for c in controllers]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(trial, jobs))
    else:
        results = dict(map(trial, jobs))
    rows, params = [], {}
    for job in sorted(results):
        axis, ratio, kind, seed = job
        rep = results[job]
        if rep.status != "ok":
            raise RuntimeError(f"sweep trial {job} failed: {rep.error}")
        rows.append(SweepRow(axis, ratio, kind, seed, rep.mae, rep.std))
        if kind == "adapj":
            params[(axis, ratio, seed)] = rep.params
    return SweepResult(rows, params, results)


# ---------------------------------------------------------------------------
# Disturbance protocol


@dataclass(frozen=True)
class DisturbanceProtocol:
    rounds: int = 5
    round_time: float = 30.0  # s per Lissajous round
    impulse_round: int = 1  # zero-based round indices
    obstacle_round: int = 3
    impulse_magnitude: float = 0.2  # N m
    impulse_probability: float = 0.3
    obstacle_axis: int = 1
    obstacle_tip_mm: float = 20.0  # contact where this axis' tip offset is reached
    obstacle_stiffness: float = 0.4  # N m per rad
    obstacle_side: int = 1
    enabled: bool = True


def theta_for_tip(x_mm: float, cfg: FingerPlantConfig) -> float:
    """Bending angle whose tip offset is ``x_mm`` (rising branch of the tip map)."""
    from scipy.optimize import brentq, minimize_scalar

    if x_mm == 0:
        return 0.0

    def gap(th):
        return tip_position(th, cfg.length, cfg.kinematics)[0] - abs(x_mm)

    hi = cfg.theta_limit
    if cfg.kinematics == "constant_curvature":
        hi = minimize_scalar(lambda th: -gap(th), bounds=(0.1, 3.1), method="bounded").x
    if gap(hi) < 0:
        raise ValueError(f"tip offset {x_mm} mm is not reachable")
    return float(np.sign(x_mm) * brentq(gap, 0.0, hi))


def protocol_schedule(p: DisturbanceProtocol, R: int, plant: FingerPlantConfig, seed: int):
    if not p.enabled:
        return DisturbanceSpec()
    theta_c = theta_for_tip(p.obstacle_side * p.obstacle_tip_mm, plant)
    return DisturbanceSpec((
        (p.impulse_round * R, (p.impulse_round + 1) * R,
         RandomImpulse(p.impulse_magnitude, p.impulse_probability, seed)),
        (p.obstacle_round * R, (p.obstacle_round + 1) * R,
         Obstacle(p.obstacle_axis, theta_c, p.obstacle_stiffness, p.obstacle_side)),
    ))


@dataclass
class ProtocolResult:
    report: RunReport
    round_mae: list
    round_mean_action: list  # mean actuation on the obstacle axis
    shift: float  # obstacle-round mean action minus first-round mean action
    shift_se: float  # standard error of the phase-paired differences
    labels: list

    @property
    def shift_z(self) -> float:
        return self.shift / self.shift_se if self.shift_se > 0 else float("inf")

    def to_csv(self) -> str:
        lines = ["round,disturbance,mae,mean_action"]
        for r, (lab, m, av) in enumerate(zip(self.labels, self.round_mae, self.round_mean_action)):
            lines.append(f"{r},{lab},{m!r},{av!r}")
        return "\n".join(lines) + "\n"


def run_disturbance_protocol(cfg: ExperimentConfig,
                             protocol: DisturbanceProtocol = DisturbanceProtocol(),
                             prep: Prepared | None = None) -> ProtocolResult:
    """Five Lissajous rounds: clean, impulses, clean, obstacle, clean.

    The shift statistic pairs each obstacle-round sample with the first-round
    sample at the same phase of the path, which cancels the periodic part of
    the actuation.
    """
    plant_cfg = cfg.plant if cfg.plant.axes == 2 else replace(cfg.plant, axes=2)
    cfg = replace(cfg, plant=plant_cfg, controller="adapj", rounds=protocol.rounds)
    traj = gen_trajectory("lissajous", {"rounds": protocol.rounds,
                                        "round_time": protocol.round_time},
                          dt=plant_cfg.dt, duration=protocol.rounds * protocol.round_time)
    R = traj.round_length
    spec = protocol_schedule(protocol, R, plant_cfg, cfg.seed)
    cfg = replace(cfg, disturbance=spec)
    report = run_tracking(cfg, prep, traj=traj)
    if report.status != "ok":
        raise IntegrationFault(f"protocol run aborted: {report.error}")
    slices = report.round_slices()
    err = report.errors
    av = report.a[:, protocol.obstacle_axis]
    round_mae = [float(err[sl].mean()) for sl in slices]
    round_av = [float(av[sl].mean()) for sl in slices]
    diff = av[slices[protocol.obstacle_round]] - av[slices[0]]
    se = float(diff.std(ddof=1) / np.sqrt(diff.size))
    labels = ["none"] * protocol.rounds
    if protocol.enabled:
        labels[protocol.impulse_round] = "random_impulse"
        labels[protocol.obstacle_round] = "obstacle"
    return ProtocolResult(report, round_mae, round_av, float(diff.mean()), se, labels)


# ---------------------------------------------------------------------------
# Timing


@dataclass(frozen=True)
class TimingRow:
    controller: str
    median_s: float
    p95_s: float
    iterations: int


def bench_step_time(controllers: dict, iterations: int = 1000, warmup: int = 100,
                    seed: int = 0, half_span: float = 0.5 * WORKSPACE_HALF_SPAN_MM):
    """Median and 95th-percentile time of ``act`` + ``observe`` per controller.

    Every controller sees the same pseudo-random input stream.
    """
    if iterations < 1000:
        raise ValueError("use at least 1000 iterations")
    rows = []
    for name, ctrl in controllers.items():
        rng = np.random.default_rng(seed)
        dim = _state_dim(ctrl)
        inputs = rng.uniform(-half_span, half_span, (warmup + iterations, 3, dim))
        ctrl.reset(np.zeros(dim))
        clock = time.perf_counter
        times = np.empty(iterations)
        for i, (sd_next, s, s_next) in enumerate(inputs):
            t0 = clock()
            ctrl.act(sd_next, s, sd_next)
            ctrl.observe(s_next)
            if i >= warmup:
                times[i - warmup] = clock() - t0
        rows.append(TimingRow(name, float(np.median(times)),
                              float(np.percentile(times, 95)), iterations))
    return rows


def _state_dim(ctrl) -> int:
    if isinstance(ctrl, AdapJController):
        return ctrl.m.d_s
    if isinstance(ctrl, JacobianController):
        return ctrl.state.J.shape[0]
    if isinstance(ctrl, MpcController):
        return ctrl.state.d_s
    if isinstance(ctrl, IfcController):
        return _state_dim(ctrl.state.inner)
    if isinstance(ctrl, RnnController):
        return ctrl.w.Wxh.shape[0] - ctrl.w.Why.shape[1]
    return int(getattr(ctrl, "d_s"))


def timing_csv(rows) -> str:
    lines = ["controller,median_s,p95_s,iterations"]
    lines += [f"{r.controller},{r.median_s!r},{r.p95_s!r},{r.iterations}" for r in rows]
    return "\n".join(lines) + "\n"
