"""Noise schedules and the elementwise diffusion steps built on them.

Conventions used throughout:

- Steps are indexed 1..S; step 0 is clean data.  Every derived sequence is
  stored with length S+1 so that ``alpha_hat[s]`` is literally the value at
  step s; index 0 carries the boundary convention alpha_hat[0] = 1, a[0] = 0.
- The forward process sampled at an arbitrary step is
  ``x_s = sqrt(alpha_hat_s) * x0 + sqrt(1 - alpha_hat_s) * eps``.
- The beta sequence is quadratic: linear interpolation in sqrt(beta) between
  the two endpoints, which are hit exactly.

All step operations are pure elementwise maps and broadcast over arbitrary
leading batch dimensions of the state arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ParameterError, StepRangeError

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_sample",
    "ddpm_step",
    "ddim_step",
    "propagate_variance",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed diffusion schedule.

    Arrays have length S+1 and are indexed directly by step; index 0 is
    the clean-data boundary (beta[0] and posterior_sigma[0] are unused
    placeholders, alpha[0] = alpha_hat[0] = 1, a[0] = 0).
    """

    S: int
    beta: np.ndarray            # beta[s], s in 1..S
    alpha: np.ndarray           # 1 - beta[s]
    alpha_hat: np.ndarray       # prod alpha[1..s], alpha_hat[0] = 1
    a: np.ndarray               # sqrt(1 - alpha_hat[s]), a[0] = 0
    posterior_sigma: np.ndarray  # sqrt(((1-ah[s-1])/(1-ah[s])) * beta[s])
    zeta: int                   # deterministic-sampler skip interval
    s_hat: int                  # step at/below which variance propagation is active

    def validate(self) -> None:
        """Check the defining recurrences and range invariants."""
        if self.beta.shape != (self.S + 1,):
            raise ParameterError("schedule arrays must have length S+1")
        b = self.beta[1:]
        if not (np.all(b > 0) and np.all(b < 1)):
            raise ParameterError("beta values must lie in (0, 1)")
        if not np.all(np.diff(b) > 0):
            raise ParameterError("beta must be strictly increasing")
        ah = self.alpha_hat
        if ah[0] != 1.0 or self.a[0] != 0.0:
            raise ParameterError("boundary convention alpha_hat[0]=1, a[0]=0 broken")
        if not np.all(np.diff(ah) < 0):
            raise ParameterError("alpha_hat must be strictly decreasing")
        if not (np.all(ah > 0) and np.all(ah <= 1)):
            raise ParameterError("alpha_hat must lie in (0, 1]")
        rec = ah[1:] - ah[:-1] * self.alpha[1:]
        if np.max(np.abs(rec)) >= 1e-12:
            raise ParameterError("alpha_hat recurrence violated beyond 1e-12")
        if np.max(np.abs(self.a**2 + ah - 1.0)) >= 1e-12:
            raise ParameterError("a^2 + alpha_hat = 1 violated beyond 1e-12")


def make_schedule(
    S: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.5,
    zeta: int = 10,
    s_hat: int = 30,
) -> NoiseSchedule:
    """Build a quadratic beta schedule with exact endpoints.

    beta_s = (sqrt(beta_start) + ((s-1)/(S-1)) * (sqrt(beta_end) - sqrt(beta_start)))^2
    """
    if not isinstance(S, (int, np.integer)) or S < 2:
        raise ParameterError(f"S must be an integer >= 2, got {S!r}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start < beta_end < 1, got {beta_start!r}, {beta_end!r}"
        )
    if not 1 <= zeta <= S:
        raise ParameterError(f"zeta must lie in [1, S], got {zeta!r}")
    if not 0 <= s_hat <= S:
        raise ParameterError(f"s_hat must lie in [0, S], got {s_hat!r}")

    steps = np.arange(1, S + 1, dtype=np.float64)
    root = np.sqrt(beta_start) + (steps - 1.0) / (S - 1.0) * (
        np.sqrt(beta_end) - np.sqrt(beta_start)
    )
    beta = np.concatenate([[0.0], root**2])
    # pin the endpoints bit-exactly; the interpolant already equals them to rounding
    beta[1] = beta_start
    beta[S] = beta_end

    alpha = 1.0 - beta
    alpha[0] = 1.0
    alpha_hat = np.cumprod(alpha)
    a = np.sqrt(1.0 - alpha_hat)

    posterior_sigma = np.zeros(S + 1)
    posterior_sigma[1:] = np.sqrt(
        (1.0 - alpha_hat[:-1]) / (1.0 - alpha_hat[1:]) * beta[1:]
    )

    sched = NoiseSchedule(
        S=int(S),
        beta=beta,
        alpha=alpha,
        alpha_hat=alpha_hat,
        a=a,
        posterior_sigma=posterior_sigma,
        zeta=int(zeta),
        s_hat=int(s_hat),
    )
    sched.validate()
    return sched


def _check_step(s: int, schedule: NoiseSchedule) -> None:
    if not 1 <= s <= schedule.S:
        raise StepRangeError(f"step {s} outside [1, {schedule.S}]")


def forward_sample(
    x0: np.ndarray, s: int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Noise clean data to step s: sqrt(ah_s) * x0 + sqrt(1 - ah_s) * eps."""
    _check_step(s, schedule)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ah = schedule.alpha_hat[s]
    return np.sqrt(ah) * x0 + schedule.a[s] * eps


def ddpm_step(
    x_s: np.ndarray,
    eps_mean: np.ndarray,
    s: int,
    z: np.ndarray,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """One stochastic reverse step with the fixed posterior variance.

    x_{s-1} = (x_s - beta_s / sqrt(1 - ah_s) * eps_mean) / sqrt(alpha_s)
              + posterior_sigma_s * z
    """
    _check_step(s, schedule)
    x_s = np.asarray(x_s, dtype=np.float64)
    eps_mean = np.asarray(eps_mean, dtype=np.float64)
    if x_s.shape != eps_mean.shape:
        raise DimensionError(f"x_s shape {x_s.shape} != eps_mean shape {eps_mean.shape}")
    mean = (x_s - schedule.beta[s] / schedule.a[s] * eps_mean) / np.sqrt(
        schedule.alpha[s]
    )
    return mean + schedule.posterior_sigma[s] * np.asarray(z, dtype=np.float64)


def _resolve_dst(s: int, schedule: NoiseSchedule, dst: int | None) -> int:
    _check_step(s, schedule)
    if dst is None:
        dst = s - schedule.zeta
    if dst < 0:
        raise StepRangeError(f"destination step {dst} below 0 (s={s})")
    if dst >= s:
        raise StepRangeError(f"destination step {dst} must be below source step {s}")
    return dst


def ddim_step(
    x_s: np.ndarray,
    eps_mean: np.ndarray,
    s: int,
    schedule: NoiseSchedule,
    dst: int | None = None,
) -> np.ndarray:
    """One deterministic reverse jump from step s to ``dst`` (default s - zeta).

    x_dst = sqrt(ah_dst / ah_s) * x_s + (a_dst - sqrt(ah_dst / ah_s) * a_s) * eps_mean

    With dst = 0 the jump inverts the forward map exactly (a_0 = 0, ah_0 = 1).
    """
    dst = _resolve_dst(s, schedule, dst)
    x_s = np.asarray(x_s, dtype=np.float64)
    eps_mean = np.asarray(eps_mean, dtype=np.float64)
    if x_s.shape != eps_mean.shape:
        raise DimensionError(f"x_s shape {x_s.shape} != eps_mean shape {eps_mean.shape}")
    ratio = np.sqrt(schedule.alpha_hat[dst] / schedule.alpha_hat[s])
    coeff = schedule.a[dst] - ratio * schedule.a[s]
    return ratio * x_s + coeff * eps_mean


def propagate_variance(
    var_s: np.ndarray,
    eps_std: np.ndarray,
    s: int,
    schedule: NoiseSchedule,
    dst: int | None = None,
) -> np.ndarray:
    """Push per-state variance through one deterministic reverse jump.

    Var(x_dst) = (ah_dst / ah_s) * Var(x_s)
                 + (a_dst - sqrt(ah_dst / ah_s) * a_s)^2 * eps_std^2

    Cross-covariance between the state and the predicted noise is treated as
    null.  For source steps above ``s_hat`` the result is zero: variance only
    starts accumulating once the chain reaches s_hat.
    """
    dst = _resolve_dst(s, schedule, dst)
    var_s = np.asarray(var_s, dtype=np.float64)
    eps_std = np.asarray(eps_std, dtype=np.float64)
    if np.any(var_s < 0):
        raise DomainError("var_s must be entrywise nonnegative")
    if np.any(eps_std < 0):
        raise DomainError("eps_std must be entrywise nonnegative")
    if s > schedule.s_hat:
        return np.zeros(np.broadcast_shapes(var_s.shape, eps_std.shape))
    ratio = schedule.alpha_hat[dst] / schedule.alpha_hat[s]
    coeff = schedule.a[dst] - np.sqrt(ratio) * schedule.a[s]
    return ratio * var_s + coeff**2 * eps_std**2
