"""File formats: moment CSVs, trajectory batches, tidy plot data and run manifests.

Floats are written with ``repr`` so every file round-trips bit-exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .lqg import MomentTrajectory
from .model import GroundTruthMoments
from .montecarlo import TrajectoryBatch


def _fmt(x: float) -> str:
    return repr(float(x))


def moments_header(k: int) -> list[str]:
    return (["t"] + [f"mean_{i}" for i in range(1, k + 1)]
            + [f"cov_{i}_{j}" for i in range(1, k + 1) for j in range(1, k + 1)])


def write_moments_csv(path, mean, cov) -> None:
    """One row per t: ``t, mean_1..mean_k, cov_1_1, cov_1_2, ..., cov_k_k`` (row-major)."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    T, k = mean.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(moments_header(k))
        for t in range(T):
            w.writerow([t] + [_fmt(v) for v in mean[t]] + [_fmt(v) for v in cov[t].ravel()])


def read_moments_csv(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: cannot read ({exc})") from exc
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    n_cols = len(header) - 1
    k = int(round((np.sqrt(1 + 4 * n_cols) - 1) / 2))
    if k < 1 or header != moments_header(k):
        raise FormatError(f"{path}: header does not match the moments layout")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError(f"{path}: ragged rows")
    if not np.array_equal(data[:, 0], np.arange(len(body))):
        raise FormatError(f"{path}: t column must run 0, 1, 2, ...")
    return data[:, 1:k + 1], data[:, k + 1:].reshape(-1, k, k)


def write_truth_csv(path, truth: GroundTruthMoments) -> None:
    write_moments_csv(path, truth.m_hat, truth.Omega_hat)


def read_truth_csv(path) -> GroundTruthMoments:
    mean, cov = read_moments_csv(path)
    return GroundTruthMoments(mean, cov)


def write_trajectory_csv(path, traj: MomentTrajectory) -> None:
    """Full joint ``(x, xhat)`` moments."""
    write_moments_csv(path, traj.mean, traj.cov)


def write_batch(path, batch: TrajectoryBatch) -> Path:
    """CSV with columns ``sample, t, x_1..x_k`` plus a JSON sidecar; returns the sidecar path."""
    path = Path(path)
    K, T, k = batch.samples.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "t"] + [f"x_{i}" for i in range(1, k + 1)])
        for s in range(K):
            for t in range(T):
                w.writerow([s, t] + [_fmt(v) for v in batch.samples[s, t]])
    side = path.with_suffix(".json")
    side.write_text(json.dumps({"seed": batch.seed, "K": K, "mode": batch.mode,
                                "horizon": T - 1, "n_measured": k}, indent=1))
    return side


def read_batch(path) -> TrajectoryBatch:
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        K, T, k = meta["K"], meta["horizon"] + 1, meta["n_measured"]
        samples = data[:, 2:].reshape(K, T, k)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed trajectory batch ({exc})") from exc
    return TrajectoryBatch(samples, int(meta["seed"]), meta["mode"])


def write_plot_csv(path, sources: dict, channels=None) -> None:
    """Tidy export: ``channel, t, mean, variance, source`` for each named (mean, cov) pair."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "t", "mean", "variance", "source"])
        for name, (mean, cov) in sources.items():
            mean = np.asarray(mean)
            var = np.diagonal(np.asarray(cov), axis1=1, axis2=2)
            labels = channels or [f"x{i + 1}" for i in range(mean.shape[1])]
            for i, ch in enumerate(labels):
                for t in range(mean.shape[0]):
                    w.writerow([ch, t, _fmt(mean[t, i]), _fmt(var[t, i]), name])


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What was run, on which inputs, with which settings."""

    command: str
    argv: list
    inputs: dict = field(default_factory=dict)
    seed: int | None = None
    config: dict | None = None
    version: str = ""
    wall_time: float = 0.0
    outputs: list = field(default_factory=list)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256(path)

    def to_dict(self) -> dict:
        return {"command": self.command, "argv": self.argv, "inputs": self.inputs,
                "seed": self.seed, "config": self.config, "version": self.version,
                "wall_time": self.wall_time, "outputs": self.outputs}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))
