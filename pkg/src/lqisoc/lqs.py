"""Linear-quadratic control under signal-dependent noise.

Control-dependent process noise ``sum_i eps_i C_i u_t`` and state-dependent
observation noise ``sum_i eps'_i D_i x_t`` break certainty equivalence, so
the control gains depend on the filter and vice versa. Gains are found by
alternating a backward control sweep (filter fixed) and a forward filter
sweep (controller fixed) until the gains stop moving.

Backward sweep, with cost-to-go ``x^T Zx x + e^T Ze e`` (``e = x - xhat``)::

    L_t  = (R + B'Zx B + sum C_i'(Zx + Ze)C_i)^-1 B'Zx A
    Zx_t = Q + A'Zx(A - B L_t) + sum D_i'K_t' Ze K_t D_i
    Ze_t = A'Zx B L_t + (A - K_t H)' Ze (A - K_t H)

Forward sweep over the non-central second moments ``Pe = E[e e']``,
``Pxh = E[xhat xhat']`` and ``Pxhe = E[xhat e']``::

    K_t = A Pe H' (H Pe H' + Om_omega + sum D_i E[x x'] D_i')^-1

followed by exact propagation of the three moments under ``(L_t, K_t)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .lqg import GainSchedule, MomentTrajectory, filter_gains, propagate_moments, solve_sym, sym
from .model import CostModel, NoiseModel, SystemModel, assemble_cost, assemble_noise

MAX_ITERS = 500
TOL = 1e-9


@dataclass(frozen=True)
class LqsSolverState:
    Zx: np.ndarray
    Ze: np.ndarray
    Pe: np.ndarray
    Pxh: np.ndarray
    Pxhe: np.ndarray
    iteration: int
    gain_delta: float
    converged: bool

    @property
    def Pexh(self) -> np.ndarray:
        return np.swapaxes(self.Pxhe, 1, 2)

    def diagnostics(self) -> dict:
        return {"iterations": self.iteration, "gain_delta": self.gain_delta,
                "converged": self.converged}


def _check(X, what, t):
    if not np.all(np.isfinite(X)):
        raise NumericalError(f"{what} diverged at t={t}")


def control_sweep(A, B, H, QN, Q, R, C, D, K):
    """Backward sweep for fixed filter gains; returns (L, Zx, Ze)."""
    N = K.shape[0]
    n, m = B.shape
    L = np.empty((N, m, n))
    Zx = np.empty((N + 1, n, n))
    Ze = np.empty((N + 1, n, n))
    Zx[N] = QN
    Ze[N] = 0.0
    for t in range(N - 1, -1, -1):
        zx, ze = Zx[t + 1], Ze[t + 1]
        zsum = zx + ze
        BtZ = B.T @ zx
        G = R + BtZ @ B
        for Ci in C:
            G = G + Ci.T @ zsum @ Ci
        L[t] = solve_sym(G, BtZ @ A)
        AKH = A - K[t] @ H
        new_x = Q + A.T @ zx @ (A - B @ L[t])
        for Di in D:
            KD = K[t] @ Di
            new_x = new_x + KD.T @ ze @ KD
        Zx[t] = sym(new_x)
        Ze[t] = sym(A.T @ zx @ B @ L[t] + AKH.T @ ze @ AKH)
        _check(Zx[t], "control sweep", t)
        _check(Ze[t], "control sweep", t)
    return L, Zx, Ze


def filter_sweep(A, B, H, Oxi, Oom, Oeta, C, D, L, P0, m0):
    """Forward sweep for fixed control gains; returns (K, Pe, Pxh, Pxhe)."""
    N = L.shape[0]
    n, r = A.shape[0], H.shape[0]
    K = np.empty((N, n, r))
    Pe = np.empty((N + 1, n, n))
    Pxh = np.empty((N + 1, n, n))
    Pxhe = np.empty((N + 1, n, n))
    Pe[0] = P0
    Pxh[0] = np.outer(m0, m0)
    Pxhe[0] = 0.0
    for t in range(N):
        pe, ph, phe = Pe[t], Pxh[t], Pxhe[t]
        Exx = pe + ph + phe + phe.T
        meas = Oom.copy()
        for Di in D:
            meas = meas + Di @ Exx @ Di.T
        K[t] = solve_sym(H @ pe @ H.T + meas, H @ pe @ A.T).T
        k = K[t]
        ABL = A - B @ L[t]
        AKH = A - k @ H
        KH = k @ H
        kmk = k @ meas @ k.T
        ctrl = np.zeros((n, n))
        LPL = L[t] @ ph @ L[t].T
        for Ci in C:
            ctrl = ctrl + Ci @ LPL @ Ci.T
        Pe[t + 1] = sym(AKH @ pe @ AKH.T + Oxi + Oeta + ctrl + kmk)
        cross = ABL @ phe @ KH.T
        Pxh[t + 1] = sym(ABL @ ph @ ABL.T + cross + cross.T + KH @ pe @ KH.T + kmk + Oeta)
        Pxhe[t + 1] = ABL @ phe @ AKH.T + KH @ pe @ AKH.T - kmk - Oeta
        _check(Pe[t + 1], "filter sweep", t)
        _check(Pxh[t + 1], "filter sweep", t)
    return K, Pe, Pxh, Pxhe


def lqs_gains(
    system: SystemModel,
    cost: CostModel,
    noise: NoiseModel,
    max_iters: int = MAX_ITERS,
    tol: float = TOL,
) -> tuple[GainSchedule, LqsSolverState]:
    """Fixed-point iteration for the signal-dependent-noise gains.

    The iteration is warm-started with the LQG filter gains of the same
    additive noise. It stops when the largest elementwise change of ``L``
    and ``K`` between sweeps drops below ``tol``; if ``max_iters`` is hit
    first the last iterate is returned with ``converged=False``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    A, B, H = system.A, system.B, system.H
    QN, Q, R = assemble_cost(cost)
    Oxi, Oom, C, D = assemble_noise(noise, B, H)
    Oeta = noise.Omega_eta
    K = filter_gains(A, H, Oxi, Oom, system.Omega_x0, system.N)
    L_prev = None
    delta = np.inf
    converged = False
    for it in range(1, max_iters + 1):
        L, Zx, Ze = control_sweep(A, B, H, QN, Q, R, C, D, K)
        K_new, Pe, Pxh, Pxhe = filter_sweep(A, B, H, Oxi, Oom, Oeta, C, D, L,
                                            system.Omega_x0, system.x0_mean)
        dK = np.abs(K_new - K).max() if K.size else 0.0
        dL = np.inf if L_prev is None else np.abs(L - L_prev).max()
        delta = float(max(dK, dL))
        K, L_prev = K_new, L
        if delta < tol:
            converged = True
            break
    state = LqsSolverState(Zx, Ze, Pe, Pxh, Pxhe, it, delta, converged)
    return GainSchedule(L, K), state


def lqs_propagate_moments(system: SystemModel, gains: GainSchedule, noise: NoiseModel) -> MomentTrajectory:
    Oxi, Oom, C, D = assemble_noise(noise, system.B, system.H)
    return propagate_moments(system, gains, Oxi, Oom, C, D, noise.Omega_eta)
