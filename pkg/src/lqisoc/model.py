"""Problem definition: plant, cost, noise and parameter layout.

All types are frozen dataclasses holding read-only numpy arrays, so a model
can be shared between worker processes without defensive copies.

The flattened noise-parameter vector ``sigma`` has a fixed order::

    vec(Sigma_xi)  (column-major), vec(Sigma_omega) (column-major),
    sigma_u[0..c), sigma_x[0..d)

and ``ParameterLayout`` indexes into that vector and into the cost weights
``s = (s_N, s_Q, s_R)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, InvalidCost, InvalidModel

PSD_RTOL = 1e-10
KINDS = ("lqg", "lqs")


def _ro(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.size == 0 and arr.ndim != ndim:
        arr = arr.reshape((0,) * ndim)
    if arr.ndim != ndim:
        raise DimensionError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def check_psd(mat: np.ndarray, name: str, rtol: float = PSD_RTOL) -> None:
    """Raise InvalidModel unless ``mat`` is symmetric positive semi-definite."""
    if mat.size == 0:
        return
    scale = float(np.abs(mat).max())
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * max(scale, 1e-300)):
        raise InvalidModel(f"{name} is not symmetric")
    if scale == 0.0:
        return
    eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if eig.min() < -rtol * max(np.abs(eig).max(), np.trace(mat)):
        raise InvalidModel(f"{name} is not positive semi-definite (min eig {eig.min():.3e})")


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    M: np.ndarray
    x0_mean: np.ndarray
    Omega_x0: np.ndarray
    N: int
    dt: float = 0.01

    def __post_init__(self):
        for name, nd in (("A", 2), ("B", 2), ("H", 2), ("M", 2), ("x0_mean", 1), ("Omega_x0", 2)):
            object.__setattr__(self, name, _ro(getattr(self, name), nd, name))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape}")
        if self.H.shape[1] != n:
            raise DimensionError(f"H must have {n} columns, got {self.H.shape}")
        if self.M.shape[1] != n or self.M.shape[0] == 0:
            raise DimensionError(f"M must be (nbar, {n}), got {self.M.shape}")
        if self.x0_mean.shape != (n,) or self.Omega_x0.shape != (n, n):
            raise DimensionError("initial mean/covariance do not match the state dimension")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidModel(f"horizon N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "dt", float(self.dt))
        # M rows: distinct standard unit vectors
        ones = np.argmax(self.M, axis=1)
        expected = np.eye(n)[ones]
        if not np.array_equal(self.M, expected) or len(set(ones.tolist())) != len(ones):
            raise InvalidModel("each row of M must be a distinct standard unit vector")
        check_psd(self.Omega_x0, "Omega_x0")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def r(self) -> int:
        return self.H.shape[0]

    @property
    def n_measured(self) -> int:
        return self.M.shape[0]

    @property
    def measured_indices(self) -> np.ndarray:
        return np.argmax(self.M, axis=1)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "H": self.H.tolist(),
            "M": self.M.tolist(), "x0_mean": self.x0_mean.tolist(),
            "Omega_x0": self.Omega_x0.tolist(), "N": self.N, "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        return cls(**{k: d[k] for k in ("A", "B", "H", "M", "x0_mean", "Omega_x0", "N")},
                   dt=d.get("dt", 0.01))


@dataclass(frozen=True)
class CostModel:
    """Quadratic cost written as weighted outer products of basis vectors.

    ``Q_N = sum_i s_N[i] q_N[i] q_N[i]^T`` and likewise for ``Q`` and ``R``.
    Bases are stored row-wise; ``s`` concatenates the three weight blocks.
    """

    qN_basis: np.ndarray
    qQ_basis: np.ndarray
    qR_basis: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        for name in ("qN_basis", "qQ_basis", "qR_basis"):
            object.__setattr__(self, name, _ro(getattr(self, name), 2, name))
        object.__setattr__(self, "s", _ro(self.s, 1, "s"))
        widths = {b.shape[1] for b in (self.qN_basis, self.qQ_basis) if b.shape[0] > 0}
        if len(widths) > 1:
            raise DimensionError("terminal and running basis vectors differ in length")
        if not widths:
            raise InvalidModel("cost needs at least one state basis vector")
        if self.qR_basis.shape[0] == 0:
            raise InvalidModel("cost needs at least one control basis vector")
        if self.s.shape[0] != self.n_weights:
            raise DimensionError(f"s has {self.s.shape[0]} entries, bases need {self.n_weights}")
        if not np.all(np.isfinite(self.s)) or np.any(self.s < 0):
            raise InvalidCost("cost weights must be finite and nonnegative")

    @property
    def n(self) -> int:
        return (self.qN_basis if self.qN_basis.shape[0] else self.qQ_basis).shape[1]

    @property
    def m(self) -> int:
        return self.qR_basis.shape[1]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.qN_basis.shape[0], self.qQ_basis.shape[0], self.qR_basis.shape[0]

    @property
    def n_weights(self) -> int:
        return sum(self.sizes)

    def with_s(self, s) -> "CostModel":
        return replace(self, s=np.asarray(s, dtype=float))

    def to_dict(self) -> dict:
        return {
            "qN_basis": self.qN_basis.tolist(), "qQ_basis": self.qQ_basis.tolist(),
            "qR_basis": self.qR_basis.tolist(), "s": self.s.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        return cls(d["qN_basis"], d.get("qQ_basis", []), d["qR_basis"], d["s"])


@dataclass(frozen=True)
class NoiseModel:
    """Additive scales plus signal-dependent noise structure.

    ``C_i = sigma_u[i] * B @ F[i]`` scales control-dependent process noise and
    ``D_i = sigma_x[i] * H @ G[i]`` scales state-dependent observation noise.
    """

    Sigma_xi: np.ndarray
    Sigma_omega: np.ndarray
    F: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    sigma_u: np.ndarray = field(default_factory=lambda: np.zeros(0))
    G: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    sigma_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Omega_eta: np.ndarray | None = None

    def __post_init__(self):
        for name, nd in (("Sigma_xi", 2), ("Sigma_omega", 2), ("F", 3), ("sigma_u", 1),
                         ("G", 3), ("sigma_x", 1)):
            object.__setattr__(self, name, _ro(getattr(self, name), nd, name))
        n = self.Sigma_xi.shape[0]
        if self.Omega_eta is None:
            object.__setattr__(self, "Omega_eta", _ro(np.zeros((n, n)), 2, "Omega_eta"))
        else:
            object.__setattr__(self, "Omega_eta", _ro(self.Omega_eta, 2, "Omega_eta"))
        if self.Omega_eta.shape != (n, n):
            raise DimensionError(f"Omega_eta must be {n}x{n}")
        if self.F.shape[0] != self.sigma_u.shape[0]:
            raise DimensionError("F and sigma_u lengths differ")
        if self.G.shape[0] != self.sigma_x.shape[0]:
            raise DimensionError("G and sigma_x lengths differ")
        if self.G.shape[0] and self.G.shape[1:] != (n, n):
            raise DimensionError(f"G matrices must be {n}x{n}")
        if self.F.shape[0] and self.F.shape[1] != self.F.shape[2]:
            raise DimensionError("F matrices must be square")
        vec = self.sigma_vector()
        if not np.all(np.isfinite(vec)):
            raise InvalidModel("noise parameters must be finite")
        if np.any(self.sigma_u < 0) or np.any(self.sigma_x < 0):
            raise InvalidModel("signal-dependent noise scales must be nonnegative")
        check_psd(self.Omega_eta, "Omega_eta")

    @property
    def c(self) -> int:
        return self.sigma_u.shape[0]

    @property
    def d(self) -> int:
        return self.sigma_x.shape[0]

    @property
    def has_multiplicative(self) -> bool:
        return self.c > 0 or self.d > 0

    def sigma_vector(self) -> np.ndarray:
        return np.concatenate([
            self.Sigma_xi.ravel(order="F"), self.Sigma_omega.ravel(order="F"),
            self.sigma_u, self.sigma_x,
        ])

    def with_sigma_vector(self, vec) -> "NoiseModel":
        vec = np.asarray(vec, dtype=float)
        sizes = [self.Sigma_xi.size, self.Sigma_omega.size, self.c, self.d]
        if vec.shape != (sum(sizes),):
            raise DimensionError(f"sigma vector must have {sum(sizes)} entries")
        a, b, c, _ = np.split(vec, np.cumsum(sizes)[:-1])
        return replace(
            self,
            Sigma_xi=a.reshape(self.Sigma_xi.shape, order="F"),
            Sigma_omega=b.reshape(self.Sigma_omega.shape, order="F"),
            sigma_u=c,
            sigma_x=vec[sum(sizes[:3]):],
        )

    def to_dict(self) -> dict:
        return {
            "Sigma_xi": self.Sigma_xi.tolist(), "Sigma_omega": self.Sigma_omega.tolist(),
            "F": self.F.tolist(), "sigma_u": self.sigma_u.tolist(),
            "G": self.G.tolist(), "sigma_x": self.sigma_x.tolist(),
            "Omega_eta": self.Omega_eta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(
            d["Sigma_xi"], d["Sigma_omega"], d.get("F", []), d.get("sigma_u", []),
            d.get("G", []), d.get("sigma_x", []), d.get("Omega_eta"),
        )


def _as_groups(indices) -> tuple[tuple[int, ...], ...]:
    out = []
    for g in indices:
        grp = (int(g),) if np.ndim(g) == 0 else tuple(int(i) for i in g)
        if not grp:
            raise InvalidModel("empty sigma index group")
        out.append(grp)
    return tuple(out)


@dataclass(frozen=True)
class ParameterLayout:
    """Which cost weights and noise parameters are free.

    Each entry of ``free_sigma_indices`` is a group of flat sigma positions
    sharing one free value (a plain int is a group of one). Groups let one
    scalar drive several structural entries, e.g. a single control-noise
    scale shared by two ``F`` matrices.
    """

    free_s_indices: tuple[int, ...]
    free_sigma_indices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "free_s_indices", tuple(int(i) for i in self.free_s_indices))
        object.__setattr__(self, "free_sigma_indices", _as_groups(self.free_sigma_indices))
        if len(set(self.free_s_indices)) != len(self.free_s_indices):
            raise InvalidModel("duplicate free s index")
        flat = [i for g in self.free_sigma_indices for i in g]
        if len(set(flat)) != len(flat):
            raise InvalidModel("duplicate free sigma index")

    @property
    def n_free_s(self) -> int:
        return len(self.free_s_indices)

    @property
    def n_free_sigma(self) -> int:
        return len(self.free_sigma_indices)

    def validate(self, cost: CostModel, noise: NoiseModel) -> None:
        S = cost.n_weights
        n_sigma = noise.sigma_vector().shape[0]
        if any(i < 0 or i >= S for i in self.free_s_indices):
            raise InvalidModel(f"free s index out of range [0, {S})")
        if any(i < 0 or i >= n_sigma for g in self.free_sigma_indices for i in g):
            raise InvalidModel(f"free sigma index out of range [0, {n_sigma})")

    def get_s(self, cost: CostModel) -> np.ndarray:
        return cost.s[list(self.free_s_indices)].copy()

    def get_sigma(self, noise: NoiseModel) -> np.ndarray:
        vec = noise.sigma_vector()
        return np.array([vec[g[0]] for g in self.free_sigma_indices])

    def set_s(self, cost: CostModel, theta) -> CostModel:
        s = cost.s.copy()
        s[list(self.free_s_indices)] = theta
        return cost.with_s(s)

    def set_sigma(self, noise: NoiseModel, theta) -> NoiseModel:
        vec = noise.sigma_vector()
        for g, val in zip(self.free_sigma_indices, np.asarray(theta, dtype=float), strict=True):
            vec[list(g)] = val
        return noise.with_sigma_vector(vec)

    def to_dict(self) -> dict:
        return {
            "free_s_indices": list(self.free_s_indices),
            "free_sigma_indices": [g[0] if len(g) == 1 else list(g) for g in self.free_sigma_indices],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterLayout":
        return cls(d["free_s_indices"], d["free_sigma_indices"])


@dataclass(frozen=True)
class GroundTruthMoments:
    """Mean and covariance of the measured states over t = 0..N."""

    m_hat: np.ndarray
    Omega_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m_hat", _ro(self.m_hat, 2, "m_hat"))
        object.__setattr__(self, "Omega_hat", _ro(self.Omega_hat, 3, "Omega_hat"))
        T, k = self.m_hat.shape
        if self.Omega_hat.shape != (T, k, k):
            raise DimensionError(f"Omega_hat must be ({T}, {k}, {k}), got {self.Omega_hat.shape}")
        if not (np.all(np.isfinite(self.m_hat)) and np.all(np.isfinite(self.Omega_hat))):
            raise InvalidModel("ground-truth moments must be finite")
        for t in range(T):
            check_psd(self.Omega_hat[t], f"Omega_hat[{t}]", rtol=1e-8)

    @property
    def horizon(self) -> int:
        return self.m_hat.shape[0] - 1

    @property
    def n_measured(self) -> int:
        return self.m_hat.shape[1]

    @property
    def variances(self) -> np.ndarray:
        return np.diagonal(self.Omega_hat, axis1=1, axis2=2)


@dataclass(frozen=True)
class Problem:
    """Everything the forward and inverse solvers need; the JSON exchange unit."""

    system: SystemModel
    cost: CostModel
    noise: NoiseModel
    layout: ParameterLayout
    kind: str = "lqg"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidModel(f"kind must be one of {KINDS}, got {self.kind!r}")
        sys_, cost, noise = self.system, self.cost, self.noise
        if cost.n != sys_.n or cost.m != sys_.m:
            raise DimensionError("cost basis dimensions do not match the system")
        if noise.Sigma_xi.shape[0] != sys_.n or noise.Sigma_omega.shape[0] != sys_.r:
            raise DimensionError("noise scale matrices do not match the system")
        if noise.c and noise.F.shape[1] != sys_.m:
            raise DimensionError(f"F matrices must be {sys_.m}x{sys_.m}")
        self.layout.validate(cost, noise)

    def with_params(self, s=None, sigma=None) -> "Problem":
        """Copy with free parameters replaced (values ordered as in the layout)."""
        cost = self.cost if s is None else self.layout.set_s(self.cost, s)
        noise = self.noise if sigma is None else self.layout.set_sigma(self.noise, sigma)
        return replace(self, cost=cost, noise=noise)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "system": self.system.to_dict(),
            "cost": self.cost.to_dict(),
            "noise": self.noise.to_dict(),
            "layout": self.layout.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        try:
            noise = NoiseModel.from_dict(d["noise"])
            kind = d.get("kind", "lqs" if noise.has_multiplicative else "lqg")
            return cls(
                SystemModel.from_dict(d["system"]), CostModel.from_dict(d["cost"]),
                noise, ParameterLayout.from_dict(d["layout"]), kind,
            )
        except (KeyError, TypeError) as exc:
            raise InvalidModel(f"malformed model description: {exc!r}") from exc


def save_problem(problem: Problem, path) -> None:
    Path(path).write_text(json.dumps(problem.to_dict(), indent=1))


def load_problem(path) -> Problem:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidModel(f"{path}: not valid JSON ({exc})") from exc
    return Problem.from_dict(data)


def _outer_sum(weights: np.ndarray, basis: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((dim, dim))
    for w, q in zip(weights, basis):
        # w * (q_i q_j) is symmetric bit for bit
        out += w * np.outer(q, q)
    return out


def assemble_cost(cost: CostModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(Q_N, Q, R)``; raises InvalidCost unless R is positive definite."""
    SN, SQ, _ = cost.sizes
    n, m = cost.n, cost.m
    s = cost.s
    QN = _outer_sum(s[:SN], cost.qN_basis, n)
    Q = _outer_sum(s[SN:SN + SQ], cost.qQ_basis, n)
    R = _outer_sum(s[SN + SQ:], cost.qR_basis, m)
    tr = np.trace(R)
    if not tr > 0 or np.linalg.eigvalsh(R).min() <= 1e-12 * tr:
        raise InvalidCost("assembled R is not positive definite")
    return QN, Q, R


def assemble_noise(noise: NoiseModel, B: np.ndarray, H: np.ndarray):
    """Return ``(Omega_xi, Omega_omega, C, D)`` with C of shape (c, n, m), D of shape (d, r, n)."""
    B = np.asarray(B, dtype=float)
    H = np.asarray(H, dtype=float)
    n, m = B.shape
    r = H.shape[0]
    if noise.Sigma_xi.shape[0] != n or noise.Sigma_omega.shape[0] != r or H.shape[1] != n:
        raise DimensionError("noise scales do not match B/H")
    if noise.c and noise.F.shape[1:] != (m, m):
        raise DimensionError(f"F matrices must be {m}x{m}")
    if noise.d and noise.G.shape[1:] != (n, n):
        raise DimensionError(f"G matrices must be {n}x{n}")
    Omega_xi = noise.Sigma_xi @ noise.Sigma_xi.T
    Omega_omega = noise.Sigma_omega @ noise.Sigma_omega.T
    C = np.array([su * (B @ F) for su, F in zip(noise.sigma_u, noise.F)]).reshape(noise.c, n, m)
    D = np.array([sx * (H @ G) for sx, G in zip(noise.sigma_x, noise.G)]).reshape(noise.d, r, n)
    return Omega_xi, Omega_omega, C, D


# -- planar reaching example -------------------------------------------------

REACH_S = (1.0, 1.0, 0.04, 0.04, 0.0004, 0.0004, 1e-5 / 42, 1e-5 / 42)
REACH_SIGMA_OMEGA = (0.02, 0.02, 0.2, 0.2, 1.0, 1.0)


def build_reaching_model(
    target: Sequence[float] = (0.1, 0.1),
    kind: str = "lqg",
    *,
    mass: float = 1.0,
    tau1: float = 0.04,
    tau2: float = 0.04,
    dt: float = 0.01,
    N: int = 41,
) -> Problem:
    """Planar point-to-point hand movement with second-order muscle filters.

    State order is ``(p_x, p_y, v_x, v_y, f_x, f_y, g_x, g_y, ref_x, ref_y)``.
    The two reference states have identity dynamics, no input, no noise and
    are known exactly at t = 0, which turns the terminal tracking cost
    ``(x_N - x_ref)^T Q_N (x_N - x_ref)`` into a plain quadratic form. They
    are not observed; the estimator starts at the true reference instead.

    Only positions and velocities are measured. With ``kind="lqs"`` the
    additive process noise is removed and control-dependent noise
    (``C_1 = 0.5 B``, ``C_2 = 0.5 B [-e2 e1]``) plus state-dependent
    observation noise (``D = 0.1 H``) are added.
    """
    if kind not in KINDS:
        raise InvalidModel(f"kind must be one of {KINDS}")
    n, m = 10, 2
    A = np.eye(n)
    B = np.zeros((n, m))
    for ax in range(2):
        p, v, f, g = ax, 2 + ax, 4 + ax, 6 + ax
        A[p, v] = dt
        A[v, f] = dt / mass
        A[f, f] = 1.0 - dt / tau2
        A[f, g] = dt / tau2
        A[g, g] = 1.0 - dt / tau1
        B[g, ax] = dt / tau1
    H = np.zeros((6, n))
    H[:, :6] = np.eye(6)
    M = np.eye(n)[:4]
    x0 = np.zeros(n)
    x0[8:] = target
    system = SystemModel(A, B, H, M, x0, np.zeros((n, n)), N, dt)

    e = np.eye(n)
    qN = np.array([e[0] - e[8], e[1] - e[9], e[2], e[3], e[4], e[5]])
    cost = CostModel(qN, np.zeros((0, n)), np.eye(m), REACH_S)

    Sigma_xi = np.zeros((n, n))
    if kind == "lqg":
        Sigma_xi[6, 6] = Sigma_xi[7, 7] = 1.5
        noise = NoiseModel(Sigma_xi, np.diag(REACH_SIGMA_OMEGA))
    else:
        F = np.array([np.eye(m), [[0.0, 1.0], [-1.0, 0.0]]])
        noise = NoiseModel(
            Sigma_xi, np.diag(REACH_SIGMA_OMEGA),
            F=F, sigma_u=[0.5, 0.5], G=np.eye(n)[None], sigma_x=[0.1],
        )

    # free sigma: 8 process-noise diagonals, 6 observation-noise diagonals,
    # then (lqs) one shared control-noise scale and one state-noise scale
    groups: list = [i * n + i for i in range(8)]
    groups += [n * n + j * 6 + j for j in range(6)]
    if kind == "lqs":
        base = n * n + 36
        groups += [[base, base + 1], base + 2]
    layout = ParameterLayout(tuple(range(8)), groups)
    return Problem(system, cost, noise, layout, kind)
