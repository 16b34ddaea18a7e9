"""Reference controllers: classical Jacobian, one-step linear MPC, and the
RNN-plus-error-feedback controller (IFC)."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .adaptive import _check_rank, gauss_newton_step
from .core import BabblingDataset

log = logging.getLogger(__name__)


class SettleWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Jacobian controller


@dataclass(frozen=True)
class JacobianState:
    J: np.ndarray  # d_s x d_a
    alpha1: float = 0.0
    alpha2: float = 1.0
    beta1: float = 0.0
    beta2: float = 1.0
    smoothing: float = 1.0  # weight of the new estimate; 1 = no averaging
    eps: float = 1e-3
    ridge: float = 1e-6

    def __post_init__(self):
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        if not np.all(np.isfinite(J)):
            raise ValueError("Jacobian must be finite")
        if min(self.alpha1, self.alpha2, self.beta1, self.beta2) < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.alpha1 == 0 and self.alpha2 == 0:
            raise ValueError("alpha1 and alpha2 cannot both be zero")
        if not 0 < self.smoothing <= 1:
            raise ValueError("smoothing must lie in (0, 1]")
        object.__setattr__(self, "J", J)


def jacobian_init(plant, delta: float = 0.1, settle_steps: int = 400, tol: float = 1e-6):
    """Estimate ``J`` column by column from settled responses to ``+delta`` per channel.

    ``plant`` needs ``reset()``, ``step(a)``, ``tip`` and ``d_a``; it is reset
    before each probe and left at rest afterwards.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    cols = []
    for j in range(plant.d_a):
        plant.reset()
        s0 = plant.tip.copy()
        a = np.zeros(plant.d_a)
        a[j] = delta
        prev = s0
        for _ in range(settle_steps):
            cur = plant.step(a).copy()
            moved = np.max(np.abs(cur - prev))
            prev = cur
        if moved > tol:
            warnings.warn(
                f"channel {j} still moving by {moved:.3g} after {settle_steps} steps; "
                "using last measurement",
                SettleWarning,
            )
        cols.append((prev - s0) / delta)
    plant.reset()
    return np.column_stack(cols)


def _pinv(J: np.ndarray, ridge: float) -> np.ndarray:
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0] or sv[0] == 0.0:
        log.warning("rank-deficient Jacobian (sigma_min=%.3g); using ridge inverse", sv[-1])
        return J.T @ np.linalg.inv(J @ J.T + ridge * np.eye(J.shape[0]))
    return np.linalg.pinv(J)


def jacobian_act(state: JacobianState, sd_next, s, a_prev, variant: str = "inverse"):
    """Jacobian action.

    ``inverse``: ``a = pinv(J) (sd - s) + a_prev``.
    ``optimal``: minimize ``alpha1 |a|^2 + alpha2 |a - a_prev|^2`` subject to
    ``J (a - a_prev) = sd - s``; the unconstrained minimizer is projected onto the
    affine constraint set through ``pinv(J)``.
    """
    ds = np.ravel(sd_next) - np.ravel(s)
    a_prev = np.ravel(a_prev)
    Jp = _pinv(state.J, state.ridge)
    if variant == "inverse":
        return Jp @ ds + a_prev
    if variant != "optimal":
        raise ValueError(f"unknown variant {variant!r}")
    center = state.alpha2 * a_prev / (state.alpha1 + state.alpha2)
    target = state.J @ a_prev + ds
    return center + Jp @ (target - state.J @ center)


def jacobian_update(state: JacobianState, ds, da) -> JacobianState:
    """Rank-one correction from one observed ``(ds, da)`` pair.

    With both weights positive the regularized update
    ``dJ = beta1 r da^T / (beta2 + beta1 |da|^2)`` is used (``r = ds - J da``).
    If either weight is zero the secant (Broyden) update ``r da^T / |da|^2`` is
    used, and skipped when ``|da| < eps``.
    """
    ds = np.ravel(ds)
    da = np.ravel(da)
    r = ds - state.J @ da
    n2 = float(da @ da)
    if state.beta1 > 0 and state.beta2 > 0:
        dJ = state.beta1 * np.outer(r, da) / (state.beta2 + state.beta1 * n2)
    else:
        if np.sqrt(n2) < state.eps:
            log.debug("|da| < eps, Broyden update skipped")
            return state
        dJ = np.outer(r, da) / n2
    return replace(state, J=state.J + state.smoothing * dJ)


class JacobianController:
    name = "jacobian"

    def __init__(self, state: JacobianState, variant: str = "inverse",
                 bounds=(-1.0, 1.0), update: bool = True):
        self.state = state
        self.variant = variant
        self.bounds = bounds
        self.update_enabled = update
        d_s, d_a = state.J.shape
        self.reset(np.zeros(d_s), np.zeros(d_a))

    def reset(self, s0, a0=None):
        self.s = np.array(s0, dtype=float)
        self.a_prev = np.zeros(self.state.J.shape[1]) if a0 is None else np.array(a0, float)
        self.a = self.a_prev.copy()

    def act(self, sd_next, s, sd_now=None):
        self.s = np.asarray(s, dtype=float)
        raw = jacobian_act(self.state, sd_next, self.s, self.a_prev, self.variant)
        self.a = np.clip(raw, *self.bounds)
        self.saturated = bool(np.any(self.a != raw))
        return self.a

    def observe(self, s_next):
        norm = 0.0
        if self.update_enabled:
            old = self.state.J
            self.state = jacobian_update(self.state, np.asarray(s_next) - self.s,
                                         self.a - self.a_prev)
            norm = float(np.linalg.norm(self.state.J - old))
        self.a_prev = self.a
        return norm

    def params(self):
        return {"J": self.state.J}


# ---------------------------------------------------------------------------
# One-step MPC on a linear forward model


@dataclass(frozen=True)
class MpcState:
    """Forward model ``s_{t+1} = P0 s_t + P1 a_t + P2 a_{t-1}`` packed as ``P = [P0 P1 P2]``."""

    P: np.ndarray
    d_s: int
    alpha_da: float = 30.0
    rho: float = 0.5
    delta_max: float = 0.1
    ridge_lambda: float = 1e-8
    cond_max: float = 1e10

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape[0] != self.d_s or (P.shape[1] - self.d_s) % 2:
            raise ValueError(f"P has shape {P.shape}, inconsistent with d_s={self.d_s}")
        if not np.all(np.isfinite(P)) or self.alpha_da < 0:
            raise ValueError("model must be finite and alpha_da >= 0")
        object.__setattr__(self, "P", P)

    @classmethod
    def from_blocks(cls, P0, P1, P2, **kw) -> "MpcState":
        P0, P1, P2 = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (P0, P1, P2))
        return cls(np.hstack([P0, P1, P2]), P0.shape[0], **kw)

    @property
    def d_a(self) -> int:
        return (self.P.shape[1] - self.d_s) // 2

    @property
    def P0(self):
        return self.P[:, : self.d_s]

    @property
    def P1(self):
        return self.P[:, self.d_s : self.d_s + self.d_a]

    @property
    def P2(self):
        return self.P[:, self.d_s + self.d_a :]


def forward_model_data(ds: BabblingDataset):
    S, A = ds.states, ds.actions
    Psi = np.hstack([S[1:-1], A[1:-1], A[:-2]])
    return Psi, S[2:]


def mpc_fit(ds: BabblingDataset, **kw) -> MpcState:
    """Batch least-squares fit of the forward model."""
    Psi, Y = forward_model_data(ds)
    _check_rank(Psi)
    P, *_ = np.linalg.lstsq(Psi, Y, rcond=None)
    return MpcState(P.T.copy(), ds.d_s, **kw)


def mpc_update(state: MpcState, s_next, s, a, a_prev):
    """Clipped single-sample Gauss-Newton correction of the forward model.

    Returns ``(state, step_norm)``.
    """
    psi = np.concatenate([np.ravel(s), np.ravel(a), np.ravel(a_prev)])
    dP, norm = gauss_newton_step(
        state.P, psi, np.ravel(s_next), state.rho, state.delta_max, state.ridge_lambda
    )
    if dP is None:
        return state, 0.0
    return replace(state, P=state.P + dP), norm


def mpc_fit_and_update(state: MpcState | None, data, **kw):
    """Batch fit when ``data`` is a dataset, otherwise one online step from
    ``(s_next, s, a, a_prev)``."""
    if isinstance(data, BabblingDataset):
        return mpc_fit(data, **kw)
    return mpc_update(state, *data)[0]


def mpc_act(state: MpcState, sd_next, s, a_prev):
    """Minimize ``|sd - (P0 s + P1 a + P2 a_prev)|^2 + alpha_da |a - a_prev|^2``."""
    a_prev = np.ravel(a_prev)
    P1 = state.P1
    free = state.P0 @ np.ravel(s) + state.P2 @ a_prev
    H = P1.T @ P1 + state.alpha_da * np.eye(state.d_a)
    g = P1.T @ (np.ravel(sd_next) - free) + state.alpha_da * a_prev
    if np.linalg.cond(H) > state.cond_max:
        log.warning("ill-conditioned MPC normal matrix; adding ridge")
        H = H + 1e-6 * max(np.trace(H), 1.0) * np.eye(state.d_a)
    return np.linalg.solve(H, g)


class MpcController:
    name = "mpc"

    def __init__(self, state: MpcState, bounds=(-1.0, 1.0), update: bool = True):
        self.state = state
        self.bounds = bounds
        self.update_enabled = update
        self.reset(np.zeros(state.d_s), np.zeros(state.d_a))

    def reset(self, s0, a0=None):
        self.s = np.array(s0, dtype=float)
        self.a_prev = np.zeros(self.state.d_a) if a0 is None else np.array(a0, float)
        self.a = self.a_prev.copy()

    def act(self, sd_next, s, sd_now=None):
        self.s = np.asarray(s, dtype=float)
        raw = mpc_act(self.state, sd_next, self.s, self.a_prev)
        self.a = np.clip(raw, *self.bounds)
        self.saturated = bool(np.any(self.a != raw))
        return self.a

    def observe(self, s_next):
        norm = 0.0
        if self.update_enabled:
            self.state, norm = mpc_update(self.state, s_next, self.s, self.a, self.a_prev)
        self.a_prev = self.a
        return norm

    def params(self):
        return {"P0": self.state.P0, "P1": self.state.P1, "P2": self.state.P2}


# ---------------------------------------------------------------------------
# Iterative feedback controller


@dataclass(frozen=True)
class IfcState:
    inner: object  # RnnController
    gamma: np.ndarray  # d_a x d_s, acts on normalized tracking error

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if not np.all(np.isfinite(g)):
            raise ValueError("gamma must be finite")
        object.__setattr__(self, "gamma", g)


def ifc_act(state: IfcState, a_rnn, sd_now, s_now, bounds=(-1.0, 1.0), error_scale=None):
    """``a = a_rnn + gamma (sd_now - s_now)``, clamped.

    ``error_scale`` maps the tracking error into the units ``gamma`` expects
    (defaults to identity).
    """
    err = np.ravel(sd_now) - np.ravel(s_now)
    if error_scale is not None:
        err = err / error_scale
    return np.clip(np.ravel(a_rnn) + state.gamma @ err, *bounds)


class IfcController:
    name = "ifc"

    def __init__(self, state: IfcState, bounds=(-1.0, 1.0), error_scale=None):
        self.state = state
        self.bounds = bounds
        self.error_scale = error_scale
        self.update_enabled = False

    def reset(self, s0, a0=None):
        self.state.inner.reset(s0, a0)

    def act(self, sd_next, s, sd_now=None):
        a_rnn = self.state.inner.act(sd_next, s)
        sd_now = s if sd_now is None else sd_now
        self.a = ifc_act(self.state, a_rnn, sd_now, s, self.bounds, self.error_scale)
        # the recurrent history must hold what was actually executed
        self.state.inner.a = self.a
        self.saturated = bool(np.any(np.abs(self.a) >= self.bounds[1]))
        return self.a

    def observe(self, s_next):
        return self.state.inner.observe(s_next)

    def params(self):
        return {"gamma": self.state.gamma}
