"""Simulated soft finger / two-axis soft manipulator.

Each bending axis is a linear second-order system

    I_b * theta'' = g * c - k * theta - d * theta' + tau

integrated with 10 substeps per control period, and the tip position follows
constant-curvature kinematics ``x = L (1 - cos theta) / theta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .core import as_vec

log = logging.getLogger(__name__)

# Gain that puts the saturated tip (a = 1, ratio 1) at 131.9 mm.
CALIBRATED_TORQUE_GAIN = 0.67077296


class IntegrationFault(RuntimeError):
    pass


@dataclass(frozen=True)
class FingerPlantConfig:
    length: float = 0.2  # m
    stiffness: float = 0.4  # N m^2 (per rad)
    damping: float = 1.0  # N m s
    inertia: float = 1e-3  # kg m^2
    torque_gain: float = CALIBRATED_TORQUE_GAIN  # N m per unit actuation
    dt: float = 0.1
    substeps: int = 10
    stiffness_ratio: float = 1.0
    damping_ratio: float = 1.0
    axes: int = 1
    coupling: float = 0.0
    a_min: float = -1.0
    a_max: float = 1.0
    theta_limit: float = np.pi * (1 - 1e-9)
    kinematics: str = "constant_curvature"  # or "linear"

    def __post_init__(self):
        for name in ("length", "stiffness", "damping", "inertia", "torque_gain", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.stiffness_ratio > 0 and self.damping_ratio > 0):
            raise ValueError("property ratios must be positive")
        if self.substeps < 1 or self.axes not in (1, 2):
            raise ValueError("substeps >= 1 and axes in {1, 2} required")
        if self.a_max <= self.a_min:
            raise ValueError("a_max must exceed a_min")
        if self.kinematics not in ("constant_curvature", "linear"):
            raise ValueError(f"unknown kinematics {self.kinematics!r}")

    @property
    def k_eff(self) -> float:
        return self.stiffness * self.stiffness_ratio

    @property
    def d_eff(self) -> float:
        return self.damping * self.damping_ratio

    @property
    def d_s(self) -> int:
        return self.axes

    @property
    def d_a(self) -> int:
        return self.axes


def apply_property_ratio(
    cfg: FingerPlantConfig, stiffness_ratio: float = 1.0, damping_ratio: float = 1.0
) -> FingerPlantConfig:
    """Scale stiffness and damping multiplicatively; nominal values are kept."""
    if stiffness_ratio <= 0 or damping_ratio <= 0:
        raise ValueError("property ratios must be positive")
    return replace(
        cfg,
        stiffness_ratio=cfg.stiffness_ratio * stiffness_ratio,
        damping_ratio=cfg.damping_ratio * damping_ratio,
    )


def calibrate_torque_gain(cfg: FingerPlantConfig, reach_mm: float = 131.9) -> float:
    """Torque gain for which full actuation settles at a tip offset of ``reach_mm``."""
    from scipy.optimize import brentq, minimize_scalar

    peak = minimize_scalar(
        lambda th: -tip_position(th, cfg.length)[0], bounds=(0.1, 3.0), method="bounded"
    ).x
    theta = brentq(lambda th: tip_position(th, cfg.length)[0] - reach_mm, 1e-6, peak)
    return cfg.stiffness * theta / cfg.a_max


def tip_position(theta, length: float = 0.2, kinematics: str = "constant_curvature"):
    """Tip offset in mm for bending angle(s) ``theta`` (rad), one entry per axis."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(np.abs(th) >= 2 * np.pi):
        raise ValueError("|theta| must stay below 2*pi")
    if kinematics == "linear":
        return 500.0 * length * th
    safe = np.where(th == 0.0, 1.0, th)
    # 1 - cos(t) = 2 sin^2(t/2) avoids cancellation near zero
    return np.where(th == 0.0, 0.0, 2000.0 * length * np.sin(0.5 * th) ** 2 / safe)


@dataclass(frozen=True)
class PlantState:
    theta: np.ndarray
    theta_dot: np.ndarray
    length: float = 0.2
    kinematics: str = "constant_curvature"

    @classmethod
    def rest(cls, cfg: FingerPlantConfig) -> "PlantState":
        z = np.zeros(cfg.axes)
        return cls(z, z.copy(), cfg.length, cfg.kinematics)

    @property
    def tip(self) -> np.ndarray:
        return tip_position(self.theta, self.length, self.kinematics)

    def energy(self, cfg: FingerPlantConfig) -> float:
        return float(
            0.5 * cfg.inertia * self.theta_dot @ self.theta_dot
            + 0.5 * cfg.k_eff * self.theta @ self.theta
        )


@lru_cache(maxsize=64)
def _propagator(k: float, d: float, inertia: float, h: float, substeps: int):
    """Exact composition of ``substeps`` linear substeps for constant input."""
    D = 1.0 + h * d / inertia + h * h * k / inertia
    M = np.array(
        [[1.0 - h * h * k / (inertia * D), h / D], [-h * k / (inertia * D), 1.0 / D]]
    )
    n = np.array([h * h / (inertia * D), h / (inertia * D)])
    Mp = np.eye(2)
    acc = np.zeros(2)
    for _ in range(substeps):
        acc = M @ acc + n
        Mp = M @ Mp
    return Mp, acc


def plant_step(
    state: PlantState, a, cfg: FingerPlantConfig, tau=None, contact=None
) -> PlantState:
    """Advance the plant by one control period ``cfg.dt``.

    Substeps use semi-implicit Euler: stiffness and damping are taken at the new
    velocity (theta_{n+1} = theta_n + h * omega_{n+1}), actuation, coupling and
    external torques at the old state. ``contact`` is an optional callable
    ``theta -> (offset, contact_stiffness)`` describing obstacle springs whose
    torque is ``offset - contact_stiffness * theta``.
    """
    c = np.clip(as_vec(a, "actuation"), cfg.a_min, cfg.a_max)
    if c.size != cfg.axes:
        raise ValueError(f"expected {cfg.axes} actuation channels, got {c.size}")
    th = state.theta.astype(float).copy()
    om = state.theta_dot.astype(float).copy()
    if not (np.all(np.isfinite(th)) and np.all(np.isfinite(om))):
        raise IntegrationFault(f"non-finite plant state theta={th}, theta_dot={om}")
    tau = np.zeros(cfg.axes) if tau is None else np.broadcast_to(tau, (cfg.axes,))
    drive = cfg.torque_gain * c
    if cfg.axes == 2 and cfg.coupling:
        drive = drive + cfg.coupling * cfg.torque_gain * c[::-1]
    h = cfg.dt / cfg.substeps
    k, d, inertia = cfg.k_eff, cfg.d_eff, cfg.inertia
    if contact is None:
        Mp, acc = _propagator(k, d, inertia, h, cfg.substeps)
        u = drive + tau
        th_new = Mp[0, 0] * th + Mp[0, 1] * om + acc[0] * u
        # joint limit needs substep resolution; fall back to the loop near it
        if np.all(np.abs(th_new) < 0.95 * cfg.theta_limit) and np.all(
            np.abs(th) < 0.95 * cfg.theta_limit
        ):
            om = Mp[1, 0] * th + Mp[1, 1] * om + acc[1] * u
            if not (np.all(np.isfinite(th_new)) and np.all(np.isfinite(om))):
                raise IntegrationFault(f"integration produced non-finite state theta={th_new}")
            return PlantState(th_new, om, cfg.length, cfg.kinematics)
    for _ in range(cfg.substeps):
        kc = 0.0
        ext = tau
        if contact is not None:
            # contact torque is offset - kc * theta; the spring part goes implicit
            offset, kc = contact(th)
            ext = tau + offset
        k_tot = k + kc
        om = (om + h / inertia * (drive + ext - k_tot * th)) / (
            1.0 + h * d / inertia + h * h * k_tot / inertia
        )
        th = th + h * om
        over = np.abs(th) > cfg.theta_limit
        if np.any(over):
            th = np.where(over, np.sign(th) * cfg.theta_limit, th)
            om = np.where(over, 0.0, om)
    if not (np.all(np.isfinite(th)) and np.all(np.isfinite(om))):
        raise IntegrationFault(f"integration produced non-finite state theta={th}")
    return PlantState(th, om, cfg.length, cfg.kinematics)


# ---------------------------------------------------------------------------
# Disturbances


@dataclass(frozen=True)
class RandomImpulse:
    """Torque pulses of fixed magnitude and random sign, one draw per control step."""

    magnitude: float
    probability: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.magnitude) or not 0.0 <= self.probability <= 1.0:
            raise ValueError("impulse needs finite magnitude and probability in [0, 1]")


@dataclass(frozen=True)
class Obstacle:
    """One-sided contact on ``axis`` once the bending angle passes ``contact_angle``.

    ``side`` is +1 when the obstacle blocks positive bending and -1 otherwise.
    """

    axis: int
    contact_angle: float
    contact_stiffness: float
    side: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.contact_angle) and self.contact_stiffness >= 0):
            raise ValueError("obstacle needs a finite angle and nonnegative stiffness")
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")

    def spring(self, theta: np.ndarray):
        """``(offset, stiffness)`` with contact torque ``offset - stiffness * theta``."""
        offset = np.zeros_like(theta)
        kc = np.zeros_like(theta)
        if self.side * (theta[self.axis] - self.contact_angle) > 0:
            kc[self.axis] = self.contact_stiffness
            offset[self.axis] = self.contact_stiffness * self.contact_angle
        return offset, kc

    def torque(self, theta: np.ndarray) -> np.ndarray:
        offset, kc = self.spring(theta)
        return offset - kc * theta


@dataclass(frozen=True)
class DisturbanceSpec:
    """Piecewise schedule: ``[(start_step, stop_step, disturbance), ...]``."""

    schedule: tuple = ()

    def active(self, step: int):
        return [d for lo, hi, d in self.schedule if lo <= step < hi]


def inject_disturbance(
    spec: DisturbanceSpec, step: int, rng: np.random.Generator, theta: np.ndarray
) -> np.ndarray:
    """Total external torque per axis at ``step`` (contacts evaluated at ``theta``).

    The generator is consumed once per active impulse entry per step whatever the
    outcome, so the draw sequence depends only on the seed and the schedule.
    """
    theta = np.asarray(theta, dtype=float)
    tau = np.zeros_like(theta)
    for d in spec.active(step):
        if isinstance(d, RandomImpulse):
            tau += impulse_torque(d, rng, tau.size)
        elif isinstance(d, Obstacle):
            tau += d.torque(theta)
    return tau


def impulse_torque(d: RandomImpulse, rng: np.random.Generator, n_axes: int) -> np.ndarray:
    u, sign, axis = rng.random(), rng.random(), rng.integers(n_axes)
    tau = np.zeros(n_axes)
    if u < d.probability:
        tau[axis] = d.magnitude if sign < 0.5 else -d.magnitude
    return tau


# ---------------------------------------------------------------------------
# Stateful plant used by the harness


@dataclass
class SoftPlant:
    cfg: FingerPlantConfig = field(default_factory=FingerPlantConfig)
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)

    def __post_init__(self):
        self.reset()

    def reset(self, state: PlantState | None = None):
        self.state = state if state is not None else PlantState.rest(self.cfg)
        self.step_index = 0
        # one generator per impulse entry so schedules stay reproducible
        self._rngs = {
            id(d): np.random.default_rng(d.seed)
            for _, _, d in self.disturbance.schedule
            if isinstance(d, RandomImpulse)
        }
        self.last_tau = np.zeros(self.cfg.axes)

    @property
    def d_s(self) -> int:
        return self.cfg.axes

    @property
    def d_a(self) -> int:
        return self.cfg.axes

    @property
    def tip(self) -> np.ndarray:
        return self.state.tip

    def _impulse_torque(self) -> np.ndarray:
        tau = np.zeros(self.cfg.axes)
        for d in self.disturbance.active(self.step_index):
            if isinstance(d, RandomImpulse):
                tau += impulse_torque(d, self._rngs[id(d)], self.cfg.axes)
        return tau

    def _contact(self):
        obstacles = [
            d for d in self.disturbance.active(self.step_index) if isinstance(d, Obstacle)
        ]
        if not obstacles:
            return None

        def contact(theta):
            offset = np.zeros_like(theta)
            kc = np.zeros_like(theta)
            for ob in obstacles:
                o, k = ob.spring(theta)
                offset += o
                kc += k
            return offset, kc

        return contact

    def step(self, a) -> np.ndarray:
        tau = self._impulse_torque()
        self.last_tau = tau
        self.state = plant_step(self.state, a, self.cfg, tau=tau, contact=self._contact())
        self.step_index += 1
        return self.state.tip
