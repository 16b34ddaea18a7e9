"""Elman recurrent inverse-dynamics controller trained offline on babbling data.

Each window feeds ``n`` recurrent steps. Step ``j`` receives the pair
``(state slot, a_{t-n+j})``; the state slots hold ``s_{t-n+2} ... s_t`` and the
final slot carries the desired next state. The target is ``a_t``. Everything is
rescaled to ``[-1, 1]`` before it reaches the network.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import WORKSPACE_HALF_SPAN_MM, BabblingDataset, ScaleMap


class TrainingDivergence(RuntimeError):
    def __init__(self, message, last_stable_epoch):
        super().__init__(message)
        self.last_stable_epoch = last_stable_epoch


@dataclass(frozen=True)
class RnnConfig:
    n: int = 5
    hidden: int = 32
    lr: float = 5e-3
    epochs: int = 40
    batch: int = 64
    seed: int = 0
    min_updates: int = 0  # extra epochs are run until this many gradient steps
    state_half_span: float = WORKSPACE_HALF_SPAN_MM
    a_min: float = -1.0
    a_max: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.hidden < 1 or self.lr <= 0:
            raise ValueError("need n >= 1, hidden >= 1, lr > 0")


@dataclass(frozen=True)
class RnnWeights:
    Wxh: np.ndarray  # (d_in, H)
    Whh: np.ndarray  # (H, H)
    bh: np.ndarray  # (H,)
    Why: np.ndarray  # (H, d_a)
    by: np.ndarray  # (d_a,)
    state_map: ScaleMap | None = None
    act_map: ScaleMap | None = None

    def __post_init__(self):
        for name in ("Wxh", "Whh", "bh", "Why", "by"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        H = self.Whh.shape[0]
        if self.Wxh.shape[1] != H or self.Why.shape[0] != H or self.bh.shape != (H,):
            raise ValueError("inconsistent RNN weight shapes")

    @property
    def hidden(self) -> int:
        return self.Whh.shape[0]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in ("Wxh", "Whh", "bh", "Why", "by")}

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays().values())


@dataclass
class TrainingReport:
    losses: list = field(default_factory=list)  # full-data loss, index 0 = before training
    updates: int = 0

    def to_csv(self) -> str:
        rows = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(self.losses)]
        return "\n".join(rows) + "\n"


def default_maps(d_s: int, d_a: int, cfg: RnnConfig = RnnConfig()):
    return (
        ScaleMap.symmetric(cfg.state_half_span, d_s),
        ScaleMap(np.full(d_a, cfg.a_min), np.full(d_a, cfg.a_max)),
    )


def build_windows(ds: BabblingDataset, n: int, state_map=None, act_map=None):
    """Training windows ``X`` of shape ``(M, n, d_s + d_a)`` and targets ``(M, d_a)``.

    ``M = N - n - 1``; window ``i`` targets ``a_t`` with ``t = n + i``. States
    outside the scale range are clipped to it.
    """
    N = len(ds)
    if N < n + 2:
        raise ValueError(f"dataset of length {N} is too short for n={n} (need n + 2)")
    if state_map is None or act_map is None:
        state_map, act_map = default_maps(ds.d_s, ds.d_a)
    S = state_map.rescale(ds.states, clip=True)
    A = act_map.rescale(ds.actions, clip=True)
    ts = np.arange(n, N - 1)
    j = np.arange(n)
    # state slot j holds s_{t-n+2+j}; the last slot is s_{t+1} standing in for sd
    S_idx = ts[:, None] - n + 2 + j[None, :]
    A_idx = ts[:, None] - n + j[None, :]
    X = np.concatenate([S[S_idx], A[A_idx]], axis=2)
    return X, A[ts]


def init_weights(d_in: int, d_a: int, cfg: RnnConfig, maps=(None, None)) -> RnnWeights:
    rng = np.random.default_rng(cfg.seed)
    H = cfg.hidden

    def glorot(r, c):
        lim = np.sqrt(6.0 / (r + c))
        return rng.uniform(-lim, lim, (r, c))

    return RnnWeights(
        glorot(d_in, H), glorot(H, H), np.zeros(H), glorot(H, d_a), np.zeros(d_a), *maps
    )


def forward(w: RnnWeights, X: np.ndarray):
    """Batch forward pass; returns outputs ``(B, d_a)`` and hidden states ``(n+1, B, H)``."""
    B, n, _ = X.shape
    hs = np.zeros((n + 1, B, w.hidden))
    for j in range(n):
        hs[j + 1] = np.tanh(X[:, j] @ w.Wxh + hs[j] @ w.Whh + w.bh)
    return hs[n] @ w.Why + w.by, hs


def loss_and_grads(w: RnnWeights, X: np.ndarray, Y: np.ndarray):
    """Mean squared error and its gradient by backpropagation through time."""
    out, hs = forward(w, X)
    diff = out - Y
    loss = float(np.mean(diff**2))
    dy = 2.0 * diff / diff.size
    g = {
        "Why": hs[-1].T @ dy,
        "by": dy.sum(axis=0),
        "Wxh": np.zeros_like(w.Wxh),
        "Whh": np.zeros_like(w.Whh),
        "bh": np.zeros_like(w.bh),
    }
    dh = dy @ w.Why.T
    for j in range(X.shape[1] - 1, -1, -1):
        dz = dh * (1.0 - hs[j + 1] ** 2)
        g["Wxh"] += X[:, j].T @ dz
        g["Whh"] += hs[j].T @ dz
        g["bh"] += dz.sum(axis=0)
        dh = dz @ w.Whh.T
    return loss, g


def train(X: np.ndarray, Y: np.ndarray, cfg: RnnConfig = RnnConfig(), maps=(None, None)):
    """Adam mini-batch training; deterministic for a fixed ``cfg.seed``."""
    if X.shape[0] < 1:
        raise ValueError("need at least one training window")
    w = init_weights(X.shape[2], Y.shape[1], cfg, maps)
    params = {k: v.copy() for k, v in w.arrays().items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    rng = np.random.default_rng(cfg.seed + 1)
    M = X.shape[0]
    batch = min(cfg.batch, M)
    per_epoch = -(-M // batch)
    epochs = max(cfg.epochs, -(-cfg.min_updates // per_epoch))
    report = TrainingReport()

    def snapshot():
        return RnnWeights(**params, state_map=maps[0], act_map=maps[1])

    report.losses.append(float(np.mean((forward(w, X)[0] - Y) ** 2)))
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(M)
        for start in range(0, M, batch):
            idx = order[start : start + batch]
            with np.errstate(all="ignore"):  # non-finite values are rejected below
                _, g = loss_and_grads(_Raw(params), X[idx], Y[idx])
            step += 1
            for k in params:
                if not np.all(np.isfinite(g[k])):
                    raise TrainingDivergence(f"gradient overflow at epoch {epoch + 1}", epoch)
                m[k] = b1 * m[k] + (1 - b1) * g[k]
                v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
                mh = m[k] / (1 - b1**step)
                vh = v[k] / (1 - b2**step)
                params[k] -= cfg.lr * mh / (np.sqrt(vh) + eps)
        with np.errstate(all="ignore"):
            full = float(np.mean((forward(_Raw(params), X)[0] - Y) ** 2))
        if not np.isfinite(full):
            raise TrainingDivergence(f"loss diverged at epoch {epoch + 1}", epoch)
        report.losses.append(full)
    report.updates = step
    return snapshot(), report


class _Raw:
    """Lightweight mutable view used inside the training loop."""

    def __init__(self, p):
        self.__dict__.update(p)
        self.hidden = p["Whh"].shape[0]


def rnn_act(w: RnnWeights, window: np.ndarray, bounds=(-1.0, 1.0)) -> np.ndarray:
    """Actuation for one already-scaled window of shape ``(n, d_s + d_a)``."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[1] != w.Wxh.shape[0]:
        raise ValueError(f"window shape {window.shape} does not match input size {w.Wxh.shape[0]}")
    h = np.zeros(w.hidden)
    for x in window:
        h = np.tanh(x @ w.Wxh + h @ w.Whh + w.bh)
    y = h @ w.Why + w.by
    if w.act_map is not None:
        y = w.act_map.inverse(y)
    return np.clip(y, *bounds)


def fit_rnn(ds: BabblingDataset, cfg: RnnConfig = RnnConfig()):
    maps = default_maps(ds.d_s, ds.d_a, cfg)
    X, Y = build_windows(ds, cfg.n, *maps)
    return train(X, Y, cfg, maps)


class RnnController:
    """Frozen-weight recurrent controller with its own state/actuation history."""

    name = "rnn"

    def __init__(self, weights: RnnWeights, n: int, bounds=(-1.0, 1.0)):
        self.w = weights
        self.n = n
        self.bounds = bounds
        self.update_enabled = False
        d_a = weights.Why.shape[1]
        d_s = weights.Wxh.shape[0] - d_a
        self.reset(np.zeros(d_s), np.zeros(d_a))

    def reset(self, s0, a0=None):
        s0 = self.w.state_map.rescale(np.asarray(s0, float), clip=True)
        a0 = np.zeros(self.w.Why.shape[1]) if a0 is None else np.asarray(a0, float)
        self.states = deque([s0] * max(self.n - 1, 0), maxlen=max(self.n - 1, 1))
        self.actions = deque([self.w.act_map.rescale(a0, clip=True)] * self.n, maxlen=self.n)
        self.a = a0.copy()

    def window(self, sd_next, s) -> np.ndarray:
        sm = self.w.state_map
        if self.n > 1:
            self.states.append(sm.rescale(np.asarray(s, float), clip=True))
            slots = list(self.states)[-(self.n - 1):]
        else:
            slots = []
        slots.append(sm.rescale(np.asarray(sd_next, float), clip=True))
        return np.hstack([np.array(slots), np.array(self.actions)])

    def act(self, sd_next, s, sd_now=None):
        self.a = rnn_act(self.w, self.window(sd_next, s), self.bounds)
        self.saturated = bool(np.any(np.abs(self.a) >= self.bounds[1]))
        return self.a

    def observe(self, s_next) -> float:
        self.actions.append(self.w.act_map.rescale(np.asarray(self.a, float), clip=True))
        return 0.0

    def params(self):
        return {}


def weights_to_csv(w: RnnWeights) -> str:
    lines = ["layer,row,col,value"]
    for name, arr in w.arrays().items():
        a2 = arr.reshape(arr.shape[0], -1) if arr.ndim == 2 else arr[None, :]
        for i in range(a2.shape[0]):
            for j in range(a2.shape[1]):
                lines.append(f"{name},{i},{j},{float(a2[i, j])!r}")
    return "\n".join(lines) + "\n"
