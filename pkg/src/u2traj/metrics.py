"""Scene-level and agent-wise error metrics, uncertainty quality, ranking.

Displacement errors are Euclidean distances averaged over *unobserved*
states only (mask value 0); observed states never contribute.  Scene-level
metrics (SADE/SFDE) select one mode jointly for the whole scene, agent-wise
metrics (ADE/FDE) select the best mode independently per agent, so
``min_ade_k <= min_sade_k`` on every scene.

"Final" under an arbitrary completion mask means each agent's last
unobserved timestep; fully observed agents are excluded from the average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateCorrelationError, DomainError, ParameterError
from .sampling import ModeSet, PosteriorField

__all__ = [
    "sade",
    "sfde",
    "min_sade_k",
    "min_sfde_k",
    "min_ade_k",
    "min_fde_k",
    "acc_rate",
    "gaussian_nll",
    "spearman",
    "top_k_select",
    "evaluate_topk",
    "EvalReport",
]


def _as_mode_means(modes) -> np.ndarray:
    """Accept a ModeSet, a sequence of PosteriorField, or a (K,T,N,2) array."""
    if isinstance(modes, ModeSet):
        return modes.means()
    if isinstance(modes, (list, tuple)) and modes and isinstance(modes[0], PosteriorField):
        return np.stack([f.mean for f in modes])
    arr = np.asarray(modes, dtype=np.float64)
    if arr.ndim != 4:
        raise ParameterError(f"expected (K, T, N, 2) mode means, got shape {arr.shape}")
    return arr


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if np.all(mask == 1.0):
        raise DomainError("mask has no unobserved states to evaluate")
    return mask


def _errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-state Euclidean errors, shape (T, N)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return np.linalg.norm(pred - gt, axis=-1)


def sade(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Euclidean error averaged over the scene's unobserved states."""
    mask = _check_mask(mask)
    w = 1.0 - mask
    return float(np.sum(_errors(pred, gt) * w) / np.sum(w))


def _last_unobserved_index(mask: np.ndarray) -> np.ndarray:
    """Per agent, the index of the last unobserved timestep (-1 if none)."""
    unobs = mask == 0.0
    T = mask.shape[0]
    rev = unobs[::-1].argmax(axis=0)
    last = T - 1 - rev
    last[~unobs.any(axis=0)] = -1
    return last


def sfde(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Euclidean error at each agent's last unobserved timestep, averaged."""
    mask = _check_mask(mask)
    err = _errors(pred, gt)
    last = _last_unobserved_index(mask)
    agents = np.nonzero(last >= 0)[0]
    return float(np.mean(err[last[agents], agents]))


def min_sade_k(modes, gt, mask) -> tuple[float, int]:
    """Minimum per-mode SADE over jointly selected modes; ties go to the lowest index."""
    means = _as_mode_means(modes)
    values = np.array([sade(m, gt, mask) for m in means])
    idx = int(np.argmin(values))
    return float(values[idx]), idx


def min_sfde_k(modes, gt, mask) -> tuple[float, int]:
    """Minimum per-mode SFDE over jointly selected modes."""
    means = _as_mode_means(modes)
    values = np.array([sfde(m, gt, mask) for m in means])
    idx = int(np.argmin(values))
    return float(values[idx]), idx


def min_ade_k(modes, gt, mask) -> float:
    """Best mode per agent (not jointly), then mean over agents."""
    means = _as_mode_means(modes)
    mask = _check_mask(mask)
    w = 1.0 - mask
    counts = w.sum(axis=0)
    err = np.stack([_errors(m, gt) for m in means])  # (K, T, N)
    agents = np.nonzero(counts > 0)[0]
    per_agent_ade = (err[:, :, agents] * w[:, agents]).sum(axis=1) / counts[agents]
    return float(per_agent_ade.min(axis=0).mean())


def min_fde_k(modes, gt, mask) -> float:
    """Best final-step error per agent, then mean over agents."""
    means = _as_mode_means(modes)
    mask = _check_mask(mask)
    last = _last_unobserved_index(mask)
    agents = np.nonzero(last >= 0)[0]
    err = np.stack([_errors(m, gt) for m in means])  # (K, T, N)
    final = err[:, last[agents], agents]  # (K, len(agents))
    return float(final.min(axis=0).mean())


def acc_rate(
    field: PosteriorField,
    gt: np.ndarray,
    mask: np.ndarray,
    confidence: float = 0.95,
    elliptical: bool = False,
) -> float:
    """Percentage of unobserved states inside the predicted confidence region.

    Default rule: both coordinates within z*sigma per-coordinate intervals
    (z = 1.9600 at 95%), matching the diagonal-covariance output.  With
    ``elliptical`` the region is the chi-square ellipse (2 dof) instead.
    A zero-variance coordinate counts as covered only at exactly zero error.
    """
    mask = _check_mask(mask)
    if not 0.0 < confidence < 1.0:
        raise ParameterError(f"confidence must lie in (0, 1), got {confidence}")
    gt = np.asarray(gt, dtype=np.float64)
    unobs = mask == 0.0
    err = np.abs(field.mean - gt)[unobs]       # (#states, 2)
    var = np.asarray(field.var, dtype=np.float64)[unobs]
    if np.any(var < 0):
        raise DomainError("variance must be entrywise nonnegative")
    if elliptical:
        thresh = stats.chi2.ppf(confidence, df=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(var > 0, err**2 / var, np.where(err == 0, 0.0, np.inf))
        covered = d2.sum(axis=1) <= thresh
    else:
        z = stats.norm.ppf(0.5 + confidence / 2.0)
        covered = np.all(err <= z * np.sqrt(var), axis=1)
    return float(covered.mean() * 100.0)


def gaussian_nll(field: PosteriorField, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean negative log-likelihood over unobserved states and coordinates.

    Per entry: log(sqrt(2*pi)*sigma) + (gt - mean)^2 / (2*sigma^2).
    """
    mask = _check_mask(mask)
    gt = np.asarray(gt, dtype=np.float64)
    unobs = mask == 0.0
    var = np.asarray(field.var, dtype=np.float64)[unobs]
    if np.any(var <= 0):
        raise DomainError("NLL requires strictly positive variance on evaluated states")
    resid = (np.asarray(field.mean) - gt)[unobs]
    nll = 0.5 * np.log(2.0 * np.pi * var) + resid**2 / (2.0 * var)
    return float(nll.mean())


def spearman(a, b) -> float:
    """Rank correlation: Pearson correlation of average-tie ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ParameterError("spearman expects two 1-D arrays of equal length >= 2")
    ra = stats.rankdata(a, method="average")
    rb = stats.rankdata(b, method="average")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    na, nb = np.linalg.norm(ra), np.linalg.norm(rb)
    if na == 0.0 or nb == 0.0:
        raise DegenerateCorrelationError("an input has zero rank variance")
    return float(np.dot(ra, rb) / (na * nb))


def top_k_select(scores, k: int, direction: str = "min") -> np.ndarray:
    """Indices of the k best scores ("min": lowest), stable tie-break by index."""
    scores = np.asarray(scores, dtype=np.float64)
    K = scores.shape[0]
    if not 1 <= k <= K:
        raise ParameterError(f"k must lie in [1, {K}], got {k}")
    if direction not in ("min", "max"):
        raise ParameterError(f"direction must be 'min' or 'max', got {direction!r}")
    key = scores if direction == "min" else -scores
    return np.argsort(key, kind="stable")[:k]


def evaluate_topk(modes, scores, gt, mask, k: int) -> float:
    """minSADE restricted to the k modes with the best predicted scores."""
    means = _as_mode_means(modes)
    idx = top_k_select(scores, k)
    value, _ = min_sade_k(means[idx], gt, mask)
    return value


@dataclass
class EvalReport:
    """Aggregate metrics over a set of evaluated scenes."""

    min_ade: float
    min_fde: float
    min_sade: float
    min_sfde: float
    acc_rate: float
    nll: float
    per_scene_rho: list[float] = field(default_factory=list)

    def rho_mean(self) -> float:
        return float(np.mean(self.per_scene_rho)) if self.per_scene_rho else float("nan")

    def rho_median(self) -> float:
        return float(np.median(self.per_scene_rho)) if self.per_scene_rho else float("nan")

    def to_text(self, header: str | None = None) -> str:
        lines = []
        if header:
            lines.append(header)
        lines += [
            f"min_ade = {self.min_ade:.6f}",
            f"min_fde = {self.min_fde:.6f}",
            f"min_sade = {self.min_sade:.6f}",
            f"min_sfde = {self.min_sfde:.6f}",
            f"acc_rate = {self.acc_rate:.4f}",
            f"nll = {self.nll:.6f}",
            f"rho_mean = {self.rho_mean():.6f}",
            f"rho_median = {self.rho_median():.6f}",
        ]
        return "\n".join(lines) + "\n"
