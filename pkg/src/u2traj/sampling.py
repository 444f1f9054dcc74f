"""Reverse-chain sampling with analytic variance propagation.

A *denoiser* here is any callable

    fn(x_s, s, x_obs, mask) -> (eps_mean, eps_std)

where ``x_s`` and ``x_obs`` are float arrays of shape (M, T, N, 2) for a
stack of M modes sharing one prior, ``mask`` is (M, T, N), ``s`` is the
integer step, and both outputs have the shape of ``x_s``.  Conditioning is
injected only through the denoiser inputs: observed states are never
overwritten in the latent chain, the model is trained to reconstruct them.

The skip chain evaluates the denoiser at steps S, S-zeta, ..., zeta, then 1:
deterministic jumps down to step 1 and a final stochastic-form step (with
zero noise) from 1 to 0.  The returned per-state variance is Var(x_1); the
final step does not propagate it further.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .schedule import NoiseSchedule, ddim_step, ddpm_step, propagate_variance

__all__ = [
    "LatentState",
    "PosteriorField",
    "ModeSet",
    "reverse_chain_steps",
    "sample_mode",
    "generate_modes",
]

SeedLike = int | np.random.SeedSequence


@dataclass
class LatentState:
    """Latent positions and their accumulated variance at one chain step."""

    x_s: np.ndarray    # (..., T, N, 2)
    var: np.ndarray    # (..., T, N, 2), entrywise >= 0
    s: int


@dataclass
class PosteriorField:
    """Predicted per-state mean and variance for one generated mode."""

    mean: np.ndarray   # (T, N, 2)
    var: np.ndarray    # (T, N, 2), entrywise >= 0


@dataclass
class ModeSet:
    """K generated modes under one shared prior.

    ``e`` (per-mode error probabilities) and ``sade`` (per-mode scene errors)
    are filled in by ranking/evaluation when available.
    """

    fields: list[PosteriorField]
    e: np.ndarray | None = None
    sade: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.fields)

    def means(self) -> np.ndarray:
        """Stack of mode means, shape (K, T, N, 2)."""
        return np.stack([f.mean for f in self.fields])

    def variances(self) -> np.ndarray:
        """Stack of mode variances, shape (K, T, N, 2)."""
        return np.stack([f.var for f in self.fields])


def reverse_chain_steps(schedule: NoiseSchedule) -> list[tuple[int, int]]:
    """(source, destination) pairs of the skip chain, final pair (1, 0).

    Requires zeta to divide S so the deterministic jumps land exactly on
    zeta before the final step; other configurations are rejected rather
    than guessed at.
    """
    S, zeta = schedule.S, schedule.zeta
    if S % zeta != 0:
        raise ConfigError(
            f"skip interval {zeta} does not divide step count {S}; "
            "the reverse chain would not land on the final step"
        )
    pairs = []
    s = S
    while s > zeta:
        pairs.append((s, s - zeta))
        s -= zeta
    if s > 1:
        pairs.append((s, 1))
    pairs.append((1, 0))
    return pairs


def _mode_seed(seed: SeedLike, k: int) -> np.random.SeedSequence:
    """Counter-based per-mode seed: mode k of base ``seed``.

    A pure function of (base seed, mode index), so K parallel modes are
    order-independent and mode 0 of any set equals a single draw.
    """
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(entropy=base.entropy, spawn_key=base.spawn_key + (k,))


def _run_chain(denoiser, x_init, x_obs, mask, schedule):
    """Run the skip chain on a stacked (M, T, N, 2) batch of modes."""
    x = x_init
    var = np.zeros_like(x)
    for src, dst in reverse_chain_steps(schedule):
        eps_mean, eps_std = denoiser(x, src, x_obs, mask)
        eps_mean = np.asarray(eps_mean, dtype=np.float64)
        eps_std = np.asarray(eps_std, dtype=np.float64)
        if dst == 0:
            # final step: stochastic form with zero noise, variance frozen
            x = ddpm_step(x, eps_mean, src, 0.0, schedule)
        else:
            var = propagate_variance(var, eps_std, src, schedule, dst=dst)
            x = ddim_step(x, eps_mean, src, schedule, dst=dst)
    return x, var


def sample_mode(
    denoiser,
    x_obs: np.ndarray,
    mask: np.ndarray,
    schedule: NoiseSchedule,
    seed: SeedLike,
) -> PosteriorField:
    """Draw one completed scene with its propagated per-state variance.

    The latent chain starts from standard-normal noise drawn from ``seed``
    with zero variance; identical seeds and inputs give bit-identical
    output.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    rng = np.random.default_rng(_mode_seed(seed, 0))
    x_init = rng.standard_normal(x_obs.shape)[None]
    mean, var = _run_chain(denoiser, x_init, x_obs[None], mask[None], schedule)
    return PosteriorField(mean=mean[0], var=var[0])


def generate_modes(
    denoiser,
    x_obs: np.ndarray,
    mask: np.ndarray,
    schedule: NoiseSchedule,
    K: int,
    seed: SeedLike,
) -> ModeSet:
    """Draw K exchangeable modes under one shared prior.

    Per-mode seeds derive from (seed, mode index) via a counter-based
    split, so the set is independent of evaluation order.  The modes share
    one stacked chain purely as a batching detail; each mode's randomness
    is its own initial noise.
    """
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    x_init = np.stack(
        [
            np.random.default_rng(_mode_seed(seed, k)).standard_normal(x_obs.shape)
            for k in range(K)
        ]
    )
    x_obs_b = np.broadcast_to(x_obs, x_init.shape).copy()
    mask_b = np.broadcast_to(mask, (K,) + mask.shape).copy()
    mean, var = _run_chain(denoiser, x_init, x_obs_b, mask_b, schedule)
    fields = [PosteriorField(mean=mean[k], var=var[k]) for k in range(K)]
    return ModeSet(fields=fields)
