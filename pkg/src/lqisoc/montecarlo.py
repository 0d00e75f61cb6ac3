"""Seeded simulation of the closed estimation-control loop.

Samples are generated in fixed-size blocks. Block ``b`` draws from a Philox
generator keyed by ``SeedSequence(seed, spawn_key=(b,))``, so a batch depends
only on ``(seed, n_samples, mode)`` and not on how blocks are distributed
over workers. Within a block the draw order is: initial state, then per step
process noise, observation noise, control-noise factors, state-noise factors
and internal-model noise (the last three only in ``lqs`` mode).
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, InvalidConfig
from .lqg import GainSchedule
from .model import GroundTruthMoments, NoiseModel, SystemModel, assemble_noise

BLOCK = 1024


@dataclass(frozen=True)
class TrajectoryBatch:
    """Measured-state realisations, shape (K, N+1, nbar)."""

    samples: np.ndarray
    seed: int
    mode: str

    @property
    def K(self) -> int:
        return self.samples.shape[0]


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _simulate_block(args) -> np.ndarray:
    system, gains, noise, mode, seed, block, size = args
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))
    A, B, H, M = system.A, system.B, system.H, system.M
    n, N = system.n, system.N
    _, _, C, D = assemble_noise(noise, B, H)
    Sxi, Som = noise.Sigma_xi, noise.Sigma_omega
    lqs = mode == "lqs"
    eta_root = _sqrt_psd(noise.Omega_eta) if lqs else None

    x = system.x0_mean + rng.standard_normal((size, n)) @ _sqrt_psd(system.Omega_x0).T
    xh = np.broadcast_to(system.x0_mean, (size, n)).copy()
    out = np.empty((size, N + 1, M.shape[0]))
    for t in range(N):
        out[:, t] = x @ M.T
        alpha = rng.standard_normal((size, Sxi.shape[1]))
        beta = rng.standard_normal((size, Som.shape[1]))
        u = -xh @ gains.L[t].T
        y = x @ H.T + beta @ Som.T
        x_next = x @ A.T + u @ B.T + alpha @ Sxi.T
        if lqs:
            eps = rng.standard_normal((size, len(C)))
            eps_obs = rng.standard_normal((size, len(D)))
            eta = rng.standard_normal((size, n)) @ eta_root.T
            for i, Ci in enumerate(C):
                x_next += eps[:, i:i + 1] * (u @ Ci.T)
            for i, Di in enumerate(D):
                y += eps_obs[:, i:i + 1] * (x @ Di.T)
        xh = xh @ A.T + u @ B.T + (y - xh @ H.T) @ gains.K[t].T
        if lqs:
            xh += eta
        x = x_next
    out[:, N] = x @ M.T
    return out


def sample_trajectories(
    system: SystemModel,
    gains: GainSchedule,
    noise: NoiseModel,
    n_samples: int,
    seed: int,
    mode: str = "lqg",
    workers: int = 1,
) -> TrajectoryBatch:
    """Simulate ``n_samples`` closed-loop rollouts and record ``M x_t``.

    ``mode="lqg"`` ignores the signal-dependent and internal-model noise of
    ``noise``; ``mode="lqs"`` includes them.
    """
    if mode not in ("lqg", "lqs"):
        raise InvalidConfig(f"mode must be 'lqg' or 'lqs', got {mode!r}")
    if n_samples < 1:
        raise InsufficientSamples("need at least one sample")
    seed = int(seed)
    jobs = []
    for b, start in enumerate(range(0, n_samples, BLOCK)):
        jobs.append((system, gains, noise, mode, seed, b, min(BLOCK, n_samples - start)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_block, jobs))
    else:
        parts = [_simulate_block(j) for j in jobs]
    return TrajectoryBatch(np.concatenate(parts, axis=0), seed, mode)


def estimate_moments(batch: TrajectoryBatch) -> GroundTruthMoments:
    """Sample mean and unbiased sample covariance per time step."""
    X = batch.samples
    K = X.shape[0]
    if K < 2:
        raise InsufficientSamples(f"covariance needs at least 2 samples, got {K}")
    mean = X.mean(axis=0)
    dev = X - mean
    cov = np.einsum("kti,ktj->tij", dev, dev) / (K - 1)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return GroundTruthMoments(mean, cov)
