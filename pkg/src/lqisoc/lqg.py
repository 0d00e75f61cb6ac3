"""Finite-horizon LQG: Riccati gains and exact moment propagation.

The closed loop is ``u_t = -L_t xhat_t`` with the one-step predictor
``xhat_{t+1} = A xhat_t + B u_t + K_t (y_t - H xhat_t)``. The joint state
``(x_t, xhat_t)`` evolves linearly, so its mean and covariance follow a
2n-dimensional recursion driven by the block propagator

    [[A,      -B L_t          ],
     [K_t H,  A - K_t H - B L_t]]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError
from .model import CostModel, NoiseModel, SystemModel, assemble_cost, assemble_noise

JITTER = 1e-12


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def solve_sym(S: np.ndarray, rhs: np.ndarray, jitter: float = JITTER) -> np.ndarray:
    """Solve ``S X = rhs`` for symmetric PSD ``S``.

    If the smallest eigenvalue of ``S`` is below ``jitter * trace(S)`` the
    system is regularised by adding that amount to the diagonal. An all-zero
    ``S`` gets an absolute ``jitter``.
    """
    S = sym(S)
    tr = float(np.trace(S))
    if not np.isfinite(tr):
        raise NumericalError("non-finite matrix in symmetric solve")
    floor = jitter * tr if tr > 0 else jitter
    if np.linalg.eigvalsh(S)[0] < floor:
        S = S + floor * np.eye(S.shape[0])
    try:
        X = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular system after regularisation: {exc}") from exc
    if not np.all(np.isfinite(X)):
        raise NumericalError("non-finite solution in symmetric solve")
    return X


@dataclass(frozen=True)
class GainSchedule:
    """Control gains ``L`` (N, m, n) and filter gains ``K`` (N, n, r)."""

    L: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        K = np.array(self.K, dtype=float)
        if L.ndim != 3 or K.ndim != 3 or L.shape[0] != K.shape[0]:
            raise DimensionError(f"gain shapes {L.shape} / {K.shape} are inconsistent")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(K))):
            raise NumericalError("gain schedule contains non-finite entries")
        L.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "K", K)

    @property
    def N(self) -> int:
        return self.L.shape[0]

    def to_dict(self) -> dict:
        return {"L": self.L.tolist(), "K": self.K.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GainSchedule":
        return cls(d["L"], d["K"])


@dataclass(frozen=True)
class MomentTrajectory:
    """Joint moments of ``(x_t, xhat_t)`` for t = 0..N.

    ``mean`` has shape (N+1, 2n); ``cov`` has shape (N+1, 2n, 2n) with
    blocks ``[[Cov x, Cov(x, xhat)], [Cov(xhat, x), Cov xhat]]``.
    """

    mean: np.ndarray
    cov: np.ndarray

    @property
    def n(self) -> int:
        return self.mean.shape[1] // 2

    @property
    def state_mean(self) -> np.ndarray:
        return self.mean[:, : self.n]

    @property
    def state_cov(self) -> np.ndarray:
        n = self.n
        return self.cov[:, :n, :n]

    def measured(self, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean (N+1, nbar) and covariance (N+1, nbar, nbar) of ``M x_t``."""
        return self.state_mean @ M.T, M @ self.state_cov @ M.T


def control_gains(A, B, QN, Q, R, N: int) -> np.ndarray:
    """Backward Riccati sweep from ``Z_N = Q_N``; returns L of shape (N, m, n)."""
    n, m = B.shape
    L = np.empty((N, m, n))
    Z = QN
    for t in range(N - 1, -1, -1):
        BtZ = B.T @ Z
        L[t] = solve_sym(R + BtZ @ B, BtZ @ A)
        Z = sym(Q + A.T @ Z @ (A - B @ L[t]))
        if not np.all(np.isfinite(Z)):
            raise NumericalError(f"control Riccati diverged at t={t}")
    return L


def filter_gains(A, H, Omega_xi, Omega_omega, P0, N: int) -> np.ndarray:
    """Forward filter Riccati sweep from ``P_0``; returns K of shape (N, n, r).

    The covariance update is written in Joseph form, which stays exact when
    the innovation covariance had to be regularised.
    """
    n, r = A.shape[0], H.shape[0]
    K = np.empty((N, n, r))
    P = P0
    for t in range(N):
        S = H @ P @ H.T + Omega_omega
        K[t] = solve_sym(S, H @ P @ A.T).T
        AKH = A - K[t] @ H
        P = sym(AKH @ P @ AKH.T + K[t] @ Omega_omega @ K[t].T + Omega_xi)
        if not np.all(np.isfinite(P)):
            raise NumericalError(f"filter Riccati diverged at t={t}")
    return K


def lqg_control_gains(system: SystemModel, cost: CostModel) -> np.ndarray:
    QN, Q, R = assemble_cost(cost)
    return control_gains(system.A, system.B, QN, Q, R, system.N)


def lqg_filter_gains(system: SystemModel, noise: NoiseModel) -> np.ndarray:
    Oxi, Oom, _, _ = assemble_noise(noise, system.B, system.H)
    return filter_gains(system.A, system.H, Oxi, Oom, system.Omega_x0, system.N)


def lqg_gains(system: SystemModel, cost: CostModel, noise: NoiseModel) -> GainSchedule:
    return GainSchedule(lqg_control_gains(system, cost), lqg_filter_gains(system, noise))


def propagate_moments(
    system: SystemModel,
    gains: GainSchedule,
    Omega_xi: np.ndarray,
    Omega_omega: np.ndarray,
    C: np.ndarray | None = None,
    D: np.ndarray | None = None,
    Omega_eta: np.ndarray | None = None,
) -> MomentTrajectory:
    """Mean/covariance recursion of the joint state for given gains.

    With ``C``, ``D`` and ``Omega_eta`` supplied the signal-dependent noise
    terms are added; without them this is the plain LQG recursion.
    """
    A, B, H = system.A, system.B, system.H
    n, N = system.n, system.N
    if gains.N != N:
        raise DimensionError(f"gain schedule has {gains.N} steps, horizon is {N}")
    if gains.L.shape[1:] != (system.m, n) or gains.K.shape[1:] != (n, system.r):
        raise DimensionError("gain shapes do not match the system")
    mean = np.empty((N + 1, 2 * n))
    cov = np.empty((N + 1, 2 * n, 2 * n))
    mean[0, :n] = mean[0, n:] = system.x0_mean
    cov[0] = 0.0
    cov[0, :n, :n] = system.Omega_x0
    Q_add = np.zeros((2 * n, 2 * n))
    Q_add[:n, :n] = Omega_xi
    calA = np.empty((2 * n, 2 * n))
    calA[:n, :n] = A
    C = np.zeros((0, n, system.m)) if C is None else C
    D = np.zeros((0, system.r, n)) if D is None else D
    multiplicative = len(C) > 0 or len(D) > 0
    for t in range(N):
        L, K = gains.L[t], gains.K[t]
        BL = B @ L
        KH = K @ H
        calA[:n, n:] = -BL
        calA[n:, :n] = KH
        calA[n:, n:] = A - KH - BL
        mean[t + 1] = calA @ mean[t]
        Q_add[n:, n:] = K @ Omega_omega @ K.T
        if Omega_eta is not None:
            Q_add[n:, n:] += Omega_eta
        nxt = calA @ cov[t] @ calA.T + Q_add
        if multiplicative:
            mx, mh = mean[t, :n], mean[t, n:]
            Exx = cov[t, :n, :n] + np.outer(mx, mx)
            Ehh = cov[t, n:, n:] + np.outer(mh, mh)
            LEL = L @ Ehh @ L.T
            for Ci in C:
                nxt[:n, :n] += Ci @ LEL @ Ci.T
            for Di in D:
                KD = K @ Di
                nxt[n:, n:] += KD @ Exx @ KD.T
        cov[t + 1] = sym(nxt)
    return MomentTrajectory(mean, cov)


def lqg_propagate_moments(system: SystemModel, gains: GainSchedule, noise: NoiseModel) -> MomentTrajectory:
    Oxi, Oom, _, _ = assemble_noise(noise, system.B, system.H)
    return propagate_moments(system, gains, Oxi, Oom)
