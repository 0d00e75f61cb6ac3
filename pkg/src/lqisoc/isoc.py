"""Inverse solver: alternating bi-level grid search over cost and noise parameters.

The outer loop alternates two searches: cost weights with the noise fixed,
then noise parameters with the cost fixed, shrinking the search bounds after
every round. Each search is a subset-wise grid search whose intervals are
re-centred on the incumbent and narrowed when a full pass stops improving
the objective. Every grid point is scored by solving the forward problem and
comparing the predicted moments of the measured states with the ground truth.
"""
from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InvalidConfig, IsocError
from .lqg import (GainSchedule, MomentTrajectory, control_gains, filter_gains, lqg_gains,
                  lqg_propagate_moments)
from .lqs import lqs_gains, lqs_propagate_moments
from .model import GroundTruthMoments, Problem, assemble_cost, assemble_noise
from .objective import FitReport, ObjectiveConfig, fit_report, j_isoc, vaf_cov, vaf_mean

NEG_INF = float("-inf")


@dataclass(frozen=True)
class GridSearchConfig:
    lower: np.ndarray
    upper: np.ndarray
    n_points: int
    subsets: tuple[tuple[int, ...], ...]
    objective: ObjectiveConfig
    shrink: float = 2.0
    shrink_tol: float = 0.01
    stop_tol: float = 0.001
    max_iters: int = 20
    elitism: bool = True

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "subsets", tuple(tuple(int(i) for i in p) for p in self.subsets))
        if lo.shape != hi.shape:
            raise InvalidConfig("lower and upper bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidConfig("bounds must be finite")
        if np.any(lo < 0) or np.any(hi < lo):
            raise InvalidConfig("bounds need 0 <= lower <= upper")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise InvalidConfig("n_points must be an integer >= 2")
        if not self.shrink > 1:
            raise InvalidConfig("shrink factor must exceed 1")
        if not (self.shrink_tol > 0 and self.stop_tol > 0):
            raise InvalidConfig("tolerances must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidConfig("max_iters must be an integer >= 1")
        covered = {i for p in self.subsets for i in p}
        if any(not p for p in self.subsets) or any(i < 0 or i >= lo.size for i in covered):
            raise InvalidConfig("subsets must be non-empty and index existing parameters")
        if covered != set(range(lo.size)):
            raise InvalidConfig("every parameter must appear in at least one subset")

    @property
    def dim(self) -> int:
        return self.lower.size

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(), "upper": self.upper.tolist(),
            "n_points": int(self.n_points), "subsets": [list(p) for p in self.subsets],
            "objective": self.objective.to_dict(), "shrink": self.shrink,
            "shrink_tol": self.shrink_tol, "stop_tol": self.stop_tol,
            "max_iters": int(self.max_iters), "elitism": self.elitism,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSearchConfig":
        d = dict(d)
        d["objective"] = ObjectiveConfig.from_dict(d["objective"])
        for k in ("shrink_tol", "stop_tol"):
            if isinstance(d.get(k), str):
                d[k] = float(d[k])
        return cls(**d)


@dataclass(frozen=True)
class IsocConfig:
    s_grid: GridSearchConfig
    sigma_grid: GridSearchConfig
    outer_shrink: float = 2.0
    max_outer: int = 3
    kind: str = "lqg"
    lqs_max_iters: int = 500
    lqs_tol: float = 1e-9

    def __post_init__(self):
        if not self.outer_shrink > 1:
            raise InvalidConfig("outer shrink factor must exceed 1")
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise InvalidConfig("max_outer must be an integer >= 1")
        if self.kind not in ("lqg", "lqs"):
            raise InvalidConfig(f"kind must be 'lqg' or 'lqs', got {self.kind!r}")

    def check_against(self, problem: Problem) -> None:
        if problem.kind != self.kind:
            raise InvalidConfig(f"config is for {self.kind}, model is {problem.kind}")
        if self.s_grid.dim != problem.layout.n_free_s:
            raise InvalidConfig(f"s grid has {self.s_grid.dim} parameters, layout frees {problem.layout.n_free_s}")
        if self.sigma_grid.dim != problem.layout.n_free_sigma:
            raise InvalidConfig(
                f"sigma grid has {self.sigma_grid.dim} parameters, layout frees {problem.layout.n_free_sigma}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "outer_shrink": self.outer_shrink, "max_outer": int(self.max_outer),
            "lqs_max_iters": self.lqs_max_iters, "lqs_tol": self.lqs_tol,
            "s_grid": self.s_grid.to_dict(), "sigma_grid": self.sigma_grid.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsocConfig":
        try:
            d = dict(d)
            d["s_grid"] = GridSearchConfig.from_dict(d["s_grid"])
            d["sigma_grid"] = GridSearchConfig.from_dict(d["sigma_grid"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"malformed inversion config: {exc!r}") from exc


@dataclass
class IsocResult:
    s_tilde: np.ndarray
    sigma_tilde: np.ndarray
    problem: Problem
    fit: FitReport
    trace: list = field(default_factory=list)
    n_evaluations: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "s_tilde": self.s_tilde.tolist(),
            "sigma_tilde": self.sigma_tilde.tolist(),
            "s_full": self.problem.cost.s.tolist(),
            "sigma_full": self.problem.noise.sigma_vector().tolist(),
            "fit": self.fit.to_dict(),
            "n_evaluations": self.n_evaluations,
            "wall_time": self.wall_time,
        }


# -- forward evaluation ------------------------------------------------------

def forward(problem: Problem, lqs_max_iters: int = 500, lqs_tol: float = 1e-9):
    """Gains and joint moments for the problem's current parameters.

    Returns ``(gains, moments, diagnostics)``; diagnostics is empty for LQG.
    """
    sys_ = problem.system
    if problem.kind == "lqg":
        gains = lqg_gains(sys_, problem.cost, problem.noise)
        return gains, lqg_propagate_moments(sys_, gains, problem.noise), {}
    gains, state = lqs_gains(sys_, problem.cost, problem.noise, lqs_max_iters, lqs_tol)
    return gains, lqs_propagate_moments(sys_, gains, problem.noise), state.diagnostics()


class CandidateEvaluator:
    """Scores parameter vectors for one search step (``"s"`` or ``"sigma"``).

    ``lam`` holds the fixed values of the other parameter block. For LQG the
    gain that does not depend on the searched block is computed once up front
    (control gains ignore the noise, filter gains ignore the cost). Any
    failure of the forward solve scores ``-inf``.
    """

    def __init__(self, problem: Problem, truth: GroundTruthMoments, objective: ObjectiveConfig,
                 step: str, lam, lqs_max_iters: int = 500, lqs_tol: float = 1e-9):
        if step not in ("s", "sigma"):
            raise InvalidConfig(f"step must be 's' or 'sigma', got {step!r}")
        self.step = step
        self.problem = problem.with_params(sigma=lam) if step == "s" else problem.with_params(s=lam)
        self.truth = truth
        self.objective = objective
        self.lqs_max_iters = lqs_max_iters
        self.lqs_tol = lqs_tol
        self._fixed = None
        self._fixed_failed = False
        if problem.kind == "lqg":
            sys_ = self.problem.system
            try:
                if step == "s":
                    Oxi, Oom, _, _ = assemble_noise(self.problem.noise, sys_.B, sys_.H)
                    self._fixed = filter_gains(sys_.A, sys_.H, Oxi, Oom, sys_.Omega_x0, sys_.N)
                else:
                    QN, Q, R = assemble_cost(self.problem.cost)
                    self._fixed = control_gains(sys_.A, sys_.B, QN, Q, R, sys_.N)
            except (IsocError, np.linalg.LinAlgError):
                self._fixed_failed = True

    def candidate(self, theta) -> Problem:
        if self.step == "s":
            return self.problem.with_params(s=theta)
        return self.problem.with_params(sigma=theta)

    def moments(self, theta) -> MomentTrajectory:
        prob = self.candidate(theta)
        sys_ = prob.system
        if prob.kind == "lqg" and self._fixed is not None:
            if self.step == "s":
                QN, Q, R = assemble_cost(prob.cost)
                gains = GainSchedule(control_gains(sys_.A, sys_.B, QN, Q, R, sys_.N), self._fixed)
            else:
                Oxi, Oom, _, _ = assemble_noise(prob.noise, sys_.B, sys_.H)
                gains = GainSchedule(self._fixed, filter_gains(sys_.A, sys_.H, Oxi, Oom, sys_.Omega_x0, sys_.N))
            return lqg_propagate_moments(sys_, gains, prob.noise)
        return forward(prob, self.lqs_max_iters, self.lqs_tol)[1]

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if self._fixed_failed or np.any(theta < 0) or not np.all(np.isfinite(theta)):
            return NEG_INF
        try:
            with np.errstate(all="ignore"):
                traj = self.moments(theta)
                mean, cov = traj.measured(self.problem.system.M)
                if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
                    return NEG_INF
                m_vaf = vaf_mean(mean, self.truth)
                o_vaf = vaf_cov(cov, self.truth, self.objective.mode)
                j = j_isoc(m_vaf, o_vaf, self.objective)
        except (IsocError, np.linalg.LinAlgError, FloatingPointError, ValueError):
            return NEG_INF
        return j if np.isfinite(j) else NEG_INF

    def evaluate_many(self, thetas) -> list[float]:
        return [self(th) for th in thetas]


def evaluate_candidate(theta, lam, problem: Problem, truth: GroundTruthMoments,
                       objective: ObjectiveConfig, step: str = "s") -> float:
    """One-off score of ``theta`` for the given step; ``-inf`` on any failure."""
    return CandidateEvaluator(problem, truth, objective, step, lam)(theta)


# -- grid search -------------------------------------------------------------

@dataclass
class GridSearchResult:
    theta: np.ndarray
    j: float
    history: list
    n_evaluations: int
    records: list
    gammas: list


def _first_argmax(values: np.ndarray) -> int:
    vals = np.where(np.isnan(values), -np.inf, values)
    return int(np.argmax(vals))  # np.argmax returns the first maximal index


def _close(a: float, b: float, tol: float) -> bool:
    """``|a - b| < tol``; a missing (-inf) history entry never qualifies."""
    diff = abs(a - b)
    return bool(np.isfinite(diff) and diff < tol)


def subset_grid(theta: np.ndarray, subset: Sequence[int], cfg: GridSearchConfig, gamma: float) -> np.ndarray:
    """All candidates for one subset pass, in lexicographic order."""
    axes = []
    for i in subset:
        half = (cfg.upper[i] - cfg.lower[i]) / gamma
        axes.append(np.linspace(max(0.0, theta[i] - half), theta[i] + half, int(cfg.n_points)))
    grid = np.repeat(theta[None, :], int(cfg.n_points) ** len(subset), axis=0)
    for row, combo in enumerate(itertools.product(*axes)):
        grid[row, list(subset)] = combo
    return grid


def grid_search(
    theta0,
    evaluate: Callable[[np.ndarray], Sequence[float]],
    cfg: GridSearchConfig,
    on_record: Callable[[dict], None] | None = None,
    dump_candidates: bool = False,
) -> GridSearchResult:
    """Subset-wise shrinking grid search maximising ``evaluate``.

    ``evaluate`` maps a (k, dim) array of candidates to k scores. Subsets are
    visited in order and the incumbent is updated after each one. After a
    full pass the interval divisor ``gamma`` (initially 2) is multiplied by
    ``cfg.shrink`` if the best score moved by less than ``cfg.shrink_tol``.
    The search ends after ``cfg.max_iters`` passes, or once the last pass
    agrees with both of the two before it to within ``cfg.stop_tol``.

    One record per subset visit is passed to ``on_record``; with
    ``dump_candidates`` it also carries every candidate and its score.
    """
    theta = np.array(theta0, dtype=float).ravel()
    if theta.size != cfg.dim:
        raise DimensionError(f"theta0 has {theta.size} entries, config expects {cfg.dim}")
    if np.any(theta < 0):
        raise InvalidConfig("initial parameters must be nonnegative")
    gamma = 2.0
    hist = [NEG_INF, NEG_INF]  # J after passes -1 and 0
    gammas = []
    records = []
    n_eval = 0
    best_j = NEG_INF
    v = 1
    while True:
        gammas.append(gamma)
        for k, subset in enumerate(cfg.subsets):
            cands = subset_grid(theta, subset, cfg, gamma)
            if cfg.elitism:
                cands = np.vstack([cands, theta])
            scores = np.asarray(evaluate(cands), dtype=float)
            n_eval += len(cands)
            j = _first_argmax(scores)
            theta = cands[j].copy()
            best_j = float(scores[j]) if not np.isnan(scores[j]) else NEG_INF
            rec = {"v": v, "subset": k, "params": list(subset), "gamma": gamma,
                   "n_candidates": len(cands), "n_failed": int(np.sum(~np.isfinite(scores))),
                   "best_j": best_j, "theta": theta.tolist()}
            if dump_candidates:
                rec["candidates"] = cands.tolist()
                rec["scores"] = [s if np.isfinite(s) else None for s in scores.tolist()]
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        # an infinite threshold shrinks unconditionally, even on the first pass
        if math.isinf(cfg.shrink_tol) or _close(best_j, hist[-1], cfg.shrink_tol):
            gamma *= cfg.shrink
        hist.append(best_j)
        v += 1
        # hist[k + 1] holds J after pass k
        j1, j2, j3 = hist[v], hist[v - 1], hist[v - 2]
        if v > cfg.max_iters or (_close(j1, j2, cfg.stop_tol) and _close(j1, j3, cfg.stop_tol)):
            break
    return GridSearchResult(theta, best_j, hist[2:], n_eval, records, gammas)


# -- outer loop --------------------------------------------------------------

class _Runner:
    """Evaluates candidate batches in order, optionally on a process pool."""

    def __init__(self, workers: int):
        self.workers = max(1, int(workers))
        self.pool = ProcessPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def __call__(self, evaluator: CandidateEvaluator):
        def run(cands: np.ndarray) -> list[float]:
            if self.pool is None:
                return evaluator.evaluate_many(cands)
            size = max(1, math.ceil(len(cands) / (4 * self.workers)))
            chunks = [cands[i:i + size] for i in range(0, len(cands), size)]
            out: list[float] = []
            for part in self.pool.map(evaluator.evaluate_many, chunks):
                out.extend(part)
            return out
        return run

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def isoc_solve(
    truth: GroundTruthMoments,
    problem: Problem,
    cfg: IsocConfig,
    workers: int = 1,
    on_record: Callable[[dict], None] | None = None,
    dump_candidates: bool = False,
) -> IsocResult:
    """Recover the free cost weights and noise parameters from ground-truth moments.

    The noise parameters start at zero and the cost weights at the centres of
    their bounds. Values of non-free parameters are taken from ``problem``.
    """
    cfg.check_against(problem)
    sys_ = problem.system
    if truth.horizon != sys_.N or truth.n_measured != sys_.n_measured:
        raise DimensionError(
            f"ground truth is ({truth.horizon + 1}, {truth.n_measured}); model needs "
            f"({sys_.N + 1}, {sys_.n_measured})")
    for grid in (cfg.s_grid, cfg.sigma_grid):
        if grid.objective.w_m.size != sys_.n_measured:
            raise InvalidConfig("objective weights do not match the number of measured states")
    start = time.perf_counter()
    s_grid, sigma_grid = cfg.s_grid, cfg.sigma_grid
    s = 0.5 * (s_grid.lower + s_grid.upper)
    sigma = np.zeros(sigma_grid.dim)
    trace: list = []
    n_eval = 0
    runner = _Runner(workers)
    try:
        for l in range(1, int(cfg.max_outer) + 1):
            for step, grid in (("s", s_grid), ("sigma", sigma_grid)):
                lam = sigma if step == "s" else s
                theta0 = s if step == "s" else sigma
                ev = CandidateEvaluator(problem, truth, grid.objective, step, lam,
                                        cfg.lqs_max_iters, cfg.lqs_tol)

                def record(rec, l=l, step=step):
                    rec = {"l": l, "step": step, **rec}
                    trace.append(rec)
                    if on_record is not None:
                        on_record(rec)

                res = grid_search(theta0, runner(ev), grid, record, dump_candidates)
                n_eval += res.n_evaluations
                if step == "s":
                    s = res.theta
                else:
                    sigma = res.theta
            s_grid = replace(s_grid, upper=s_grid.lower + (s_grid.upper - s_grid.lower) / cfg.outer_shrink)
            sigma_grid = replace(sigma_grid,
                                 upper=sigma_grid.lower + (sigma_grid.upper - sigma_grid.lower) / cfg.outer_shrink)
    finally:
        runner.close()
    fitted = problem.with_params(s=s, sigma=sigma)
    report = fit_final(fitted, truth, cfg)
    return IsocResult(s, sigma, fitted, report, trace, n_eval, time.perf_counter() - start)


def fit_final(problem: Problem, truth: GroundTruthMoments, cfg: IsocConfig | None = None) -> FitReport:
    """VAF of a fitted model against the truth, scored with uniform weights."""
    mode = cfg.sigma_grid.objective.mode if cfg is not None else "diagonal"
    kw = {} if cfg is None else {"lqs_max_iters": cfg.lqs_max_iters, "lqs_tol": cfg.lqs_tol}
    try:
        _, traj, _ = forward(problem, **kw)
    except IsocError:
        nbar = truth.n_measured
        nan = np.full(nbar if mode == "diagonal" else (nbar, nbar), np.nan)
        return FitReport(np.full(nbar, np.nan), nan, NEG_INF)
    mean, cov = traj.measured(problem.system.M)
    return fit_report(mean, cov, truth, ObjectiveConfig.uniform(truth.n_measured, mode))


# -- reaching-task presets ---------------------------------------------------

def reaching_config(kind: str = "lqg", budget: str = "paper") -> IsocConfig:
    """Search settings for the reaching example.

    ``budget="paper"`` uses 8 (LQG) or 10 (LQS) grid points, 20 passes and 3
    rounds; ``budget="desk"`` uses 6 points, 10 passes and 2 rounds.
    """
    n_points, max_iters, max_outer = {"paper": (8 if kind == "lqg" else 10, 20, 3),
                                      "desk": (6, 10, 2)}[budget]
    s_obj = ObjectiveConfig([0.9] * 4, [0.1] * 4)
    sig_obj = ObjectiveConfig([0.1] * 4, [0.9] * 4)
    s_upper = [4, 4, 0.4, 0.4, 0.004, 0.004, 4e-6, 4e-6]
    s_grid = GridSearchConfig(np.zeros(8), s_upper, n_points, [[0, 2, 4, 6], [1, 3, 5, 7]], s_obj,
                              max_iters=max_iters)
    if kind == "lqg":
        subsets = [[0, 2, 4, 6], [1, 3, 5, 7], [8, 10, 12], [9, 11, 13]]
        dim = 14
    else:
        subsets = [[0, 2], [1, 3], [4, 6, 14], [5, 7, 14], [8, 10, 12, 15], [9, 11, 13, 15]]
        dim = 16
    sigma_grid = GridSearchConfig(np.zeros(dim), np.full(dim, 4.0), n_points, subsets, sig_obj,
                                  max_iters=max_iters)
    return IsocConfig(s_grid, sigma_grid, 2.0, max_outer, kind)


def reaching_lqs_reduced(n_points: int = 8, max_iters: int = 8, max_outer: int = 2) -> tuple[Problem, IsocConfig]:
    """Reaching LQS problem with only four free parameters, plus its search settings.

    Free are the two terminal position weights and the control- and
    state-noise scales; everything else stays at its true value. This is the
    smallest LQS inversion that still exercises the signal-dependent noise.
    """
    from .model import ParameterLayout, build_reaching_model

    base = build_reaching_model(kind="lqs")
    groups = base.layout.free_sigma_indices
    problem = replace(base, layout=ParameterLayout((0, 1), groups[-2:]))
    s_grid = GridSearchConfig([0, 0], [4, 4], n_points, [[0, 1]],
                              ObjectiveConfig([0.9] * 4, [0.1] * 4), max_iters=max_iters)
    sigma_grid = GridSearchConfig([0, 0], [4, 4], n_points, [[0, 1]],
                                  ObjectiveConfig([0.1] * 4, [0.9] * 4), max_iters=max_iters)
    return problem, IsocConfig(s_grid, sigma_grid, 2.0, max_outer, "lqs")
