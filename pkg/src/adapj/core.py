"""Shared types: babbling datasets, trajectories, channel splitting and scaling."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WORKSPACE_HALF_SPAN_MM = 131.9


class RangeError(ValueError):
    """Input lies outside the declared range of a channel."""


class WorkspaceError(ValueError):
    """A trajectory would leave the plant workspace."""


def as_vec(x, name: str = "vector") -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries: {v}")
    return v


# ---------------------------------------------------------------------------
# Actuation channels


def split_channels(a) -> np.ndarray:
    """Map signed actuation channels to nonnegative chamber pressures.

    Each signed channel ``c`` drives a symmetric chamber pair as
    ``(max(0, c), max(0, -c))``; the output interleaves the pairs, so
    ``[a_h, a_v]`` becomes ``[a_I, a_II, a_III, a_IV]``.
    """
    c = as_vec(a, "actuation")
    out = np.empty(2 * c.size)
    out[0::2] = np.maximum(0.0, c)
    out[1::2] = np.maximum(0.0, -c)
    return out


def merge_channels(pressures) -> np.ndarray:
    p = as_vec(pressures, "pressures")
    if p.size % 2:
        raise ValueError("chamber pressures come in pairs")
    return p[0::2] - p[1::2]


# ---------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True)
class ScaleMap:
    """Per-channel affine map from ``[lo, hi]`` onto ``[-1, 1]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = np.broadcast_arrays(as_vec(self.lo, "lo"), as_vec(self.hi, "hi"))
        if np.any(hi <= lo):
            raise ValueError(f"ScaleMap needs hi > lo per channel (lo={lo}, hi={hi})")
        object.__setattr__(self, "lo", lo.copy())
        object.__setattr__(self, "hi", hi.copy())

    @classmethod
    def symmetric(cls, half_span: float, n: int) -> "ScaleMap":
        return cls(np.full(n, -half_span), np.full(n, half_span))

    def rescale(self, x, clip: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if clip:
            x = np.clip(x, self.lo, self.hi)
        else:
            bad = (x < self.lo) | (x > self.hi)
            if np.any(bad):
                ch = int(np.argwhere(bad.reshape(-1, self.lo.size).any(axis=0))[0, 0])
                raise RangeError(
                    f"channel {ch} out of range [{self.lo[ch]}, {self.hi[ch]}]"
                )
        return (2.0 * x - (self.hi + self.lo)) / (self.hi - self.lo)

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return 0.5 * (y * (self.hi - self.lo) + (self.hi + self.lo))


def rescale(x, m: ScaleMap) -> np.ndarray:
    return m.rescale(x)


# ---------------------------------------------------------------------------
# Babbling data


@dataclass(frozen=True)
class BabblingDataset:
    """Time-ordered ``(state, actuation)`` samples at a fixed control period.

    ``states[t]`` is the state measured at step ``t`` and ``actions[t]`` is the
    actuation applied from step ``t`` to ``t + 1``.
    """

    t: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        a = np.atleast_2d(np.asarray(self.actions, dtype=float))
        if s.shape[0] != t.size and s.shape[1] == t.size:
            s = s.T
        if a.shape[0] != t.size and a.shape[1] == t.size:
            a = a.T
        if not (t.size == s.shape[0] == a.shape[0]):
            raise ValueError("t, states and actions must have the same length")
        if t.size < 3:
            raise ValueError("a babbling dataset needs at least 3 samples")
        steps = np.diff(t)
        if np.any(steps <= 0) or np.any(steps != steps[0]):
            raise ValueError("timestep indices must be strictly increasing and uniform")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise ValueError("dataset contains non-finite values")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    def __len__(self) -> int:
        return self.t.size

    @property
    def d_s(self) -> int:
        return self.states.shape[1]

    @property
    def d_a(self) -> int:
        return self.actions.shape[1]

    def head(self, n: int) -> "BabblingDataset":
        return BabblingDataset(
            self.t[:n], self.states[:n], self.actions[:n], self.dt, dict(self.meta)
        )


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_to_csv(ds: BabblingDataset, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["t"] + [f"s_{i}" for i in range(ds.d_s)] + [f"a_{i}" for i in range(ds.d_a)]
    )
    for k in range(len(ds)):
        w.writerow(
            [str(int(ds.t[k]))]
            + [_fmt(v) for v in ds.states[k]]
            + [_fmt(v) for v in ds.actions[k]]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def dataset_from_csv(path, dt: float = 0.1, meta: dict | None = None) -> BabblingDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    s_cols = [i for i, h in enumerate(header) if h.startswith("s_")]
    a_cols = [i for i, h in enumerate(header) if h.startswith("a_")]
    data = np.array([[float(v) for v in r] for r in body])
    return BabblingDataset(
        data[:, 0].astype(np.int64), data[:, s_cols], data[:, a_cols], dt, meta or {}
    )


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class Trajectory:
    desired: np.ndarray  # (N, d_s)
    dt: float
    kind: str
    round_length: int | None = None

    def __len__(self) -> int:
        return self.desired.shape[0]

    @property
    def d_s(self) -> int:
        return self.desired.shape[1]


def trajectory_to_csv(traj: Trajectory, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"sd_{i}" for i in range(traj.d_s)])
    for k, row in enumerate(traj.desired):
        w.writerow([str(k)] + [_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


DEFAULT_SETPOINTS_MM = (26.0, -52.0, 78.0, -105.0)


def _sine_then_steps(p: dict, dt: float, duration: float, half_span: float):
    amp = p.get("amplitude", 0.8 * half_span)
    period = p.get("period", 25.0)
    sine_time = p.get("sine_duration", 0.6 * duration)
    setpoints = np.asarray(p.get("setpoints", DEFAULT_SETPOINTS_MM), dtype=float)
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    x = amp * np.sin(2.0 * np.pi * t / period)
    hold_idx = np.flatnonzero(t >= sine_time)
    if hold_idx.size and setpoints.size:
        hold = (duration - sine_time) / setpoints.size
        seg = np.minimum(((t[hold_idx] - sine_time) // hold).astype(int), setpoints.size - 1)
        x[hold_idx] = setpoints[seg]
    return x[:, None], None, max(abs(amp), np.max(np.abs(setpoints), initial=0.0))


def _spiral(p: dict, dt: float, duration: float, half_span: float):
    r_max = p.get("radius", 0.8 * half_span)
    turns = p.get("turns", 3.0)
    n = int(round(duration / dt)) + 1
    u = np.arange(n) * dt / duration
    r = r_max * u
    ang = 2.0 * np.pi * turns * u
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)]), None, r_max


def _polygon_vertices(n_vertices: int, radius: float, inner: float | None):
    if inner is None:
        ang = np.pi / 2 + 2 * np.pi * np.arange(n_vertices) / n_vertices
        return radius * np.column_stack([np.cos(ang), np.sin(ang)])
    ang = np.pi / 2 + np.pi * np.arange(2 * n_vertices) / n_vertices
    rad = np.where(np.arange(2 * n_vertices) % 2 == 0, radius, inner)
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def polygon_path(vertices: np.ndarray, speed: float, dt: float, laps: int = 1) -> np.ndarray:
    """Sample a closed polygon at constant speed; the last point closes the loop."""
    closed = np.vstack([vertices, vertices[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    perimeter = cum[-1] * laps
    count = math.ceil(perimeter / (speed * dt)) + 1
    arc = np.minimum(np.arange(count) * speed * dt, perimeter) % cum[-1]
    arc[-1] = 0.0 if count > 1 else arc[-1]
    x = np.interp(arc, cum, closed[:, 0])
    y = np.interp(arc, cum, closed[:, 1])
    return np.column_stack([x, y])


def _star_like(p: dict, dt: float, duration: float, half_span: float, star: bool):
    nv = int(p.get("vertices", 5 if star else 3))
    radius = p.get("radius", 0.8 * half_span)
    inner = p.get("inner_radius", 0.4 * radius) if star else None
    verts = _polygon_vertices(nv, radius, inner)
    laps = int(p.get("laps", 1))
    speed = p.get("speed")
    if speed is None:
        closed = np.vstack([verts, verts[:1]])
        perim = np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1))
        speed = laps * perim / duration
    return polygon_path(verts, speed, dt, laps), None, radius


def _lissajous(p: dict, dt: float, duration: float, half_span: float):
    amp = p.get("amplitude", 0.8 * half_span)
    ax, ay = np.broadcast_to(np.asarray(amp, dtype=float), (2,))
    fx, fy = p.get("ratio", (1, 2))
    phase = p.get("phase", 0.0)
    rounds = int(p.get("rounds", 5))
    round_time = p.get("round_time", duration / rounds)
    round_len = int(round(round_time / dt))
    t = np.arange(rounds * round_len) * dt
    w = 2.0 * np.pi / (round_len * dt)
    xy = np.column_stack([ax * np.sin(fx * w * t + phase), ay * np.sin(fy * w * t)])
    return xy, round_len, max(abs(ax), abs(ay))


_GENERATORS = {
    "sine_then_steps": _sine_then_steps,
    "spiral": _spiral,
    "star": lambda p, dt, d, h: _star_like(p, dt, d, h, star=True),
    "polygon": lambda p, dt, d, h: _star_like(p, dt, d, h, star=False),
    "lissajous": _lissajous,
}

TRAJECTORY_KINDS = tuple(_GENERATORS)


def gen_trajectory(
    kind: str,
    params: dict | None = None,
    dt: float = 0.1,
    duration: float = 500.0,
    half_span: float = WORKSPACE_HALF_SPAN_MM,
) -> Trajectory:
    """Generate a deterministic reference trajectory in millimeters.

    ``sine_then_steps`` is one-dimensional; the other kinds are planar.
    Amplitudes default to 80% of the workspace half-span.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown trajectory kind {kind!r}; choose from {TRAJECTORY_KINDS}")
    if duration <= 0 or dt <= 0:
        raise ValueError("duration and dt must be positive")
    params = dict(params or {})
    desired, round_len, reach = _GENERATORS[kind](params, dt, duration, half_span)
    if reach > half_span or np.max(np.abs(desired)) > half_span:
        raise WorkspaceError(
            f"{kind} trajectory reaches {max(reach, np.max(np.abs(desired))):.3f} mm, "
            f"beyond the workspace half-span {half_span} mm"
        )
    if desired.shape[0] == 0:
        raise ValueError("empty trajectory")
    return Trajectory(np.ascontiguousarray(desired, dtype=float), dt, kind, round_len)
