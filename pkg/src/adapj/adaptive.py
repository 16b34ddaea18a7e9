"""Adaptive extended inverse-Jacobian controller.

The action law is ``a_t = A0 sd_{t+1} + A1 s_t + B0 a_{t-1}`` with the three
gain blocks kept independent. They are fitted to babbling data as an inverse
model (actuation from next state, current state and previous actuation) and
refined online with a clipped single-sample Gauss-Newton step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import BabblingDataset

log = logging.getLogger(__name__)


class DegenerateDataError(ValueError):
    """Babbling data does not excite every regressor direction."""


@dataclass(frozen=True)
class AdapJMatrices:
    """Gain blocks packed row-wise as ``W = [A0 A1 B0]`` (shape ``d_a x (2 d_s + d_a)``).

    ``W`` is the transpose of the stacked parameter matrix ``omega``.
    """

    W: np.ndarray
    d_s: int

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.shape[1] != 2 * self.d_s + W.shape[0]:
            raise ValueError(f"W has shape {W.shape}, inconsistent with d_s={self.d_s}")
        if not np.all(np.isfinite(W)):
            raise ValueError("AdapJ matrices must be finite")
        object.__setattr__(self, "W", W)

    @classmethod
    def from_blocks(cls, A0, A1, B0) -> "AdapJMatrices":
        A0, A1, B0 = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A0, A1, B0))
        if A0.shape != A1.shape or B0.shape != (A0.shape[0], A0.shape[0]):
            raise ValueError(
                f"block shapes A0{A0.shape} A1{A1.shape} B0{B0.shape} are inconsistent"
            )
        return cls(np.hstack([A0, A1, B0]), A0.shape[1])

    @classmethod
    def zeros(cls, d_s: int, d_a: int) -> "AdapJMatrices":
        return cls(np.zeros((d_a, 2 * d_s + d_a)), d_s)

    @classmethod
    def inverse_jacobian(cls, J) -> "AdapJMatrices":
        """The classical inverse-Jacobian law: ``A0 = -A1 = pinv(J)``, ``B0 = I``."""
        Jp = np.linalg.pinv(np.atleast_2d(J))
        return cls.from_blocks(Jp, -Jp, np.eye(Jp.shape[0]))

    @property
    def d_a(self) -> int:
        return self.W.shape[0]

    @property
    def A0(self) -> np.ndarray:
        return self.W[:, : self.d_s]

    @property
    def A1(self) -> np.ndarray:
        return self.W[:, self.d_s : 2 * self.d_s]

    @property
    def B0(self) -> np.ndarray:
        return self.W[:, 2 * self.d_s :]

    @property
    def omega(self) -> np.ndarray:
        return self.W.T


@dataclass(frozen=True)
class AdapJConfig:
    rho: float = 0.5
    delta_omega_max: float = 3e-3  # state is in mm, so gains are ~1e-2
    ridge_lambda: float = 1e-8
    init_method: str = "lstsq"  # or "minibatch"
    init_epochs: int = 200
    init_batch: int = 32
    init_lr: float = 0.5  # step in whitened coordinates
    a_min: float = -1.0
    a_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rho <= 0 or self.delta_omega_max <= 0 or self.ridge_lambda < 0:
            raise ValueError("need rho > 0, delta_omega_max > 0, ridge_lambda >= 0")
        if self.init_method not in ("lstsq", "minibatch"):
            raise ValueError(f"unknown init_method {self.init_method!r}")


def regressor(s_next, s, a_prev) -> np.ndarray:
    return np.concatenate([np.ravel(s_next), np.ravel(s), np.ravel(a_prev)])


def inverse_model_data(ds: BabblingDataset):
    """Stack regressors ``[s_{t+1}; s_t; a_{t-1}]`` and targets ``a_t`` for t in [1, N-2]."""
    S, A = ds.states, ds.actions
    Phi = np.hstack([S[2:], S[1:-1], A[:-2]])
    return Phi, A[1:-1]


def _check_rank(Phi: np.ndarray):
    sv = np.linalg.svd(Phi, compute_uv=False)
    tol = max(Phi.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > max(tol, 1e-12)))
    if rank < Phi.shape[1]:
        raise DegenerateDataError(
            f"regressor matrix has rank {rank} < {Phi.shape[1]}; "
            "collect richer babbling data (more samples or larger excitation)"
        )


def _minibatch_fit(Phi, Y, cfg: AdapJConfig) -> np.ndarray:
    """Variance-reduced mini-batch descent (SVRG) on whitened regressors.

    Each epoch anchors a full-data gradient that corrects every mini-batch
    step, so the iterate converges to the exact least-squares optimum rather
    than stalling at a noise floor.
    """
    G = Phi.T @ Phi / Phi.shape[0]
    L = np.linalg.cholesky(G)
    Z = np.linalg.solve(L, Phi.T).T
    rng = np.random.default_rng(cfg.seed)
    V = np.zeros((Z.shape[1], Y.shape[1]))
    n = Z.shape[0]
    batch = min(cfg.init_batch, n)
    for _ in range(cfg.init_epochs):
        anchor = V.copy()
        mu = Z.T @ (Z @ anchor - Y) / n
        order = rng.permutation(n)
        for start in range(0, n, batch):
            zb = Z[order[start : start + batch]]
            grad = zb.T @ (zb @ (V - anchor)) / zb.shape[0] + mu
            V -= cfg.init_lr * grad
    return np.linalg.solve(L.T, V)


def adapj_init(ds: BabblingDataset, cfg: AdapJConfig = AdapJConfig()) -> AdapJMatrices:
    """Fit the gain blocks to babbling data by least squares on the inverse model."""
    Phi, Y = inverse_model_data(ds)
    _check_rank(Phi)
    if cfg.init_method == "lstsq":
        omega, *_ = np.linalg.lstsq(Phi, Y, rcond=None)
    else:
        omega = _minibatch_fit(Phi, Y, cfg)
    return AdapJMatrices(omega.T.copy(), ds.d_s)


def adapj_act(m: AdapJMatrices, sd_next, s, a_prev, bounds=(-1.0, 1.0)):
    """Return ``(a, saturated)`` with ``a = clamp(A0 sd + A1 s + B0 a_prev)``."""
    phi = regressor(sd_next, s, a_prev)
    if phi.size != m.W.shape[1]:
        raise ValueError(f"input length {phi.size} does not match matrices ({m.W.shape[1]})")
    raw = m.W @ phi
    a = np.clip(raw, bounds[0], bounds[1])
    return a, bool(np.any(a != raw))


def gauss_newton_step(W, phi, target, rho, max_norm, ridge=0.0):
    """Clipped single-sample Gauss-Newton step for the linear map ``y = W phi``.

    The rank-one normal matrix ``phi phi^T`` is inverted in the pseudo-inverse
    sense, giving ``dW = rho * E phi^T / (phi^T phi + ridge)``. A step whose
    Frobenius norm exceeds ``max_norm`` is rescaled onto that norm. Returns
    ``(dW, norm)``; ``dW`` is None when ``phi`` carries no information.
    """
    pp = float(phi @ phi) + ridge
    if pp == 0.0:
        return None, 0.0
    E = target - W @ phi
    scale = rho / pp
    norm = scale * float(np.sqrt((E @ E) * (phi @ phi)))
    if norm > max_norm:
        scale *= max_norm / norm
    dW = scale * np.outer(E, phi)
    norm = float(np.linalg.norm(dW))
    while norm > max_norm:  # rounding can overshoot the cap by an ulp
        dW *= 1.0 - np.finfo(float).eps
        norm = float(np.linalg.norm(dW))
    return dW, norm


def adapj_update(
    m: AdapJMatrices, s_next, s, a_prev, a_executed, cfg: AdapJConfig = AdapJConfig()
):
    """One online update after ``a_executed`` produced ``s_next``.

    Returns ``(matrices, step_norm)``.
    """
    phi = regressor(s_next, s, a_prev)
    if phi.size != m.W.shape[1]:
        raise ValueError(f"input length {phi.size} does not match matrices ({m.W.shape[1]})")
    dW, norm = gauss_newton_step(
        m.W, phi, np.ravel(a_executed), cfg.rho, cfg.delta_omega_max, cfg.ridge_lambda
    )
    if dW is None:
        log.debug("zero regressor, update skipped")
        return m, 0.0
    return AdapJMatrices(m.W + dW, m.d_s), norm


class AdapJController:
    """Stateful wrapper used in closed loop: ``act`` then ``observe``."""

    name = "adapj"

    def __init__(self, matrices: AdapJMatrices, cfg: AdapJConfig = AdapJConfig(),
                 update: bool = True):
        self.m = matrices
        self.cfg = cfg
        self.update_enabled = update
        self.reset(np.zeros(matrices.d_s), np.zeros(matrices.d_a))

    def reset(self, s0, a0=None):
        self.s = np.array(s0, dtype=float)
        self.a_prev = np.zeros(self.m.d_a) if a0 is None else np.array(a0, dtype=float)
        self.a = self.a_prev.copy()
        self.saturated = False

    def act(self, sd_next, s, sd_now=None) -> np.ndarray:
        self.s = np.asarray(s, dtype=float)
        self.a, self.saturated = adapj_act(
            self.m, sd_next, self.s, self.a_prev, (self.cfg.a_min, self.cfg.a_max)
        )
        return self.a

    def observe(self, s_next) -> float:
        norm = 0.0
        if self.update_enabled:
            self.m, norm = adapj_update(self.m, s_next, self.s, self.a_prev, self.a, self.cfg)
        self.a_prev = self.a
        return norm

    def params(self) -> dict:
        return {"A0": self.m.A0, "A1": self.m.A1, "B0": self.m.B0}


def matrices_to_csv(m: AdapJMatrices) -> str:
    lines = ["block,row,col,value"]
    for name, blk in (("A0", m.A0), ("A1", m.A1), ("B0", m.B0)):
        for i in range(blk.shape[0]):
            for j in range(blk.shape[1]):
                lines.append(f"{name},{i},{j},{float(blk[i, j])!r}")
    return "\n".join(lines) + "\n"


def matrices_from_csv(text: str) -> AdapJMatrices:
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    blocks: dict[str, dict] = {}
    for name, i, j, v in rows:
        blocks.setdefault(name, {})[(int(i), int(j))] = float(v)

    def build(name):
        cells = blocks[name]
        shape = (max(k[0] for k in cells) + 1, max(k[1] for k in cells) + 1)
        out = np.zeros(shape)
        for (i, j), v in cells.items():
            out[i, j] = v
        return out

    return AdapJMatrices.from_blocks(build("A0"), build("A1"), build("B0"))
