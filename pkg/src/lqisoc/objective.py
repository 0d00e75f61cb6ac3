"""Variance-accounted-for fit metrics and the weighted fitting objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidConfig, InvalidNormalizer
from .model import GroundTruthMoments

MODES = ("diagonal", "full")


def vaf(predicted, truth) -> np.ndarray:
    """VAF along axis 0: ``1 - sum_t (pred - truth)^2 / sum_t (truth - mean_t truth)^2``.

    Channels whose truth is constant over time have no defined VAF and are
    returned as NaN.
    """
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise DimensionError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    resid = ((predicted - truth) ** 2).sum(axis=0)
    total = ((truth - truth.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(resid == 0, 1.0, 1.0 - resid / total)
    # exact zero residual scores 1 even if the total underflowed
    return np.where(np.ptp(truth, axis=0) > 0, out, np.nan)


def vaf_mean(predicted, truth: GroundTruthMoments) -> np.ndarray:
    return vaf(predicted, truth.m_hat)


def vaf_cov(predicted, truth: GroundTruthMoments, mode: str = "diagonal") -> np.ndarray:
    """Per-entry VAF of covariances; only the variances in diagonal mode."""
    predicted = np.asarray(predicted, dtype=float)
    if mode == "diagonal":
        return vaf(np.diagonal(predicted, axis1=1, axis2=2), truth.variances)
    if mode == "full":
        return vaf(predicted, truth.Omega_hat)
    raise InvalidConfig(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights on the mean VAF (``w_m``) and covariance VAF (``w_v``) entries.

    ``w_v`` has one weight per measured state in diagonal mode and ``nbar**2``
    weights (row-major) in full mode.
    """

    w_m: np.ndarray
    w_v: np.ndarray
    mode: str = "diagonal"

    def __post_init__(self):
        w_m = np.array(self.w_m, dtype=float).ravel()
        w_v = np.array(self.w_v, dtype=float).ravel()
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "full" and w_v.size != w_m.size ** 2:
            raise InvalidConfig("full mode needs nbar**2 covariance weights")
        if self.mode == "diagonal" and w_v.size != w_m.size:
            raise InvalidConfig("diagonal mode needs nbar covariance weights")
        if np.any(w_m < 0) or np.any(w_v < 0) or not np.all(np.isfinite(np.r_[w_m, w_v])):
            raise InvalidConfig("objective weights must be finite and nonnegative")
        if w_m.sum() + w_v.sum() <= 0:
            raise InvalidConfig("objective weights are all zero")
        object.__setattr__(self, "w_m", w_m)
        object.__setattr__(self, "w_v", w_v)

    @classmethod
    def uniform(cls, nbar: int, mode: str = "diagonal") -> "ObjectiveConfig":
        return cls(np.ones(nbar), np.ones(nbar if mode == "diagonal" else nbar * nbar), mode)

    def to_dict(self) -> dict:
        return {"w_m": self.w_m.tolist(), "w_v": self.w_v.tolist(), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveConfig":
        return cls(d["w_m"], d["w_v"], d.get("mode", "diagonal"))


def j_isoc(m_vaf, omega_vaf, cfg: ObjectiveConfig) -> float:
    """Weighted mean of VAF entries, normalised by the L1 norm of the weights.

    NaN entries (constant-truth channels) are dropped together with their
    weights, so a perfect fit still scores exactly 1.
    """
    m_vaf = np.asarray(m_vaf, dtype=float).ravel()
    o_vaf = np.asarray(omega_vaf, dtype=float)
    if cfg.mode == "diagonal" and o_vaf.ndim == 2:
        o_vaf = np.diagonal(o_vaf)
    o_vaf = o_vaf.ravel()
    if m_vaf.size != cfg.w_m.size or o_vaf.size != cfg.w_v.size:
        raise DimensionError("VAF sizes do not match the objective weights")
    vals = np.r_[m_vaf, o_vaf]
    w = np.r_[cfg.w_m, cfg.w_v]
    keep = ~np.isnan(vals)
    denom = w[keep].sum()
    if denom <= 0:
        raise InvalidConfig("no weighted channel with a defined VAF")
    num = w[keep] @ vals[keep] if np.all(np.isfinite(vals[keep])) else -np.inf
    return float(num / denom)


@dataclass(frozen=True)
class FitReport:
    m_vaf: np.ndarray
    omega_vaf: np.ndarray
    j_isoc: float

    def to_dict(self) -> dict:
        def clean(a):
            return [None if np.isnan(v) else float(v) for v in np.ravel(a)]
        return {
            "m_vaf": clean(self.m_vaf),
            "omega_vaf": clean(self.omega_vaf) if np.ndim(self.omega_vaf) == 1
            else [clean(row) for row in self.omega_vaf],
            "j_isoc": self.j_isoc,
        }


def fit_report(pred_mean, pred_cov, truth: GroundTruthMoments, cfg: ObjectiveConfig) -> FitReport:
    m = vaf_mean(pred_mean, truth)
    o = vaf_cov(pred_cov, truth, cfg.mode)
    return FitReport(m, o, j_isoc(m, o, cfg))


@dataclass(frozen=True)
class ParameterErrors:
    """Relative parameter errors; entries flagged ``raw`` hold the estimate itself."""

    delta_s: np.ndarray
    delta_sigma: np.ndarray
    s_raw: np.ndarray
    sigma_raw: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("delta_s", "delta_sigma", "s_raw", "sigma_raw")}


def parameter_errors(s_tilde, s_star, sigma_tilde, sigma_star, normalizer_index: int = 0) -> ParameterErrors:
    """Scale-normalised cost-weight errors and relative noise-parameter errors.

    Cost weights are compared after dividing both vectors by their entry at
    ``normalizer_index``, which removes the overall scale ambiguity of the cost.
    Where the ground truth is zero the estimate is returned unchanged and
    flagged raw.
    """
    s_tilde, s_star = np.asarray(s_tilde, float), np.asarray(s_star, float)
    sig_t, sig_s = np.asarray(sigma_tilde, float), np.asarray(sigma_star, float)
    if s_tilde.shape != s_star.shape or sig_t.shape != sig_s.shape:
        raise DimensionError("estimated and true parameter vectors differ in shape")
    if s_tilde[normalizer_index] == 0 or s_star[normalizer_index] == 0:
        raise InvalidNormalizer(f"normalising weight s[{normalizer_index}] is zero")
    scale = s_star[normalizer_index] / s_tilde[normalizer_index]
    s_raw = s_star == 0
    sig_raw = sig_s == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ds = np.where(s_raw, s_tilde, np.abs(1.0 - s_tilde / s_star * scale))
        dsig = np.where(sig_raw, sig_t, np.abs(1.0 - sig_t / sig_s))
    return ParameterErrors(ds, dsig, s_raw, sig_raw)
