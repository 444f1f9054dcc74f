"""Conditioning-mask generators for the completion task families.

A mask is a (T, N) float array of {0, 1}: 1 marks an observed state, 0 a
state to infer.  Five strategies are provided: forecast (future hidden),
gap (an interior run hidden per agent), agent (whole agents hidden),
random_state (i.i.d. per-state dropout), and mixed (uniform choice among
the other four).  Every generator is a pure function of its parameters and
the supplied random generator.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

__all__ = [
    "validate_mask",
    "forecast_mask",
    "gap_mask",
    "agent_mask",
    "random_state_mask",
    "mixed_mask",
    "make_mask",
    "MIXED_STRATEGIES",
]

_REDRAW_LIMIT = 100


def validate_mask(m: np.ndarray) -> np.ndarray:
    """Check the mask contract: binary, at least one 0 and one 1."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ParameterError(f"mask must be 2-D (T, N), got shape {m.shape}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ParameterError("mask entries must be 0 or 1")
    if not np.any(m == 1.0):
        raise ParameterError("mask has no observed states")
    if not np.any(m == 0.0):
        raise ParameterError("mask has no states to infer")
    return m


def forecast_mask(T: int, N: int, observed_prefix: int) -> np.ndarray:
    """Observe the first ``observed_prefix`` frames, hide the rest."""
    if not 1 <= observed_prefix < T:
        raise ParameterError(
            f"observed_prefix must lie in [1, T-1], got {observed_prefix} for T={T}"
        )
    m = np.zeros((T, N))
    m[:observed_prefix] = 1.0
    return m


def gap_mask(T: int, N: int, gap_len: int, rng: np.random.Generator) -> np.ndarray:
    """Hide one contiguous interior run of ``gap_len`` frames per agent.

    The run is placed uniformly at random strictly inside the sequence, so
    the first and last frames of every agent stay observed.
    """
    if not 1 <= gap_len <= T - 2:
        raise ParameterError(f"gap_len must lie in [1, T-2], got {gap_len} for T={T}")
    m = np.ones((T, N))
    # 0-based start index in [1, T-1-gap_len]
    starts = rng.integers(1, T - gap_len, size=N)
    for n in range(N):
        m[starts[n] : starts[n] + gap_len, n] = 0.0
    return m


def agent_mask(T: int, N: int, hidden_agents: int, rng: np.random.Generator) -> np.ndarray:
    """Hide a uniform random subset of agents entirely."""
    if not 1 <= hidden_agents < N:
        raise ParameterError(
            f"hidden_agents must lie in [1, N-1], got {hidden_agents} for N={N}"
        )
    m = np.ones((T, N))
    hidden = rng.choice(N, size=hidden_agents, replace=False)
    m[:, hidden] = 0.0
    return m


def random_state_mask(
    T: int, N: int, missing_ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """Hide each state independently with probability ``missing_ratio``.

    Degenerate all-observed or all-hidden draws are re-drawn a bounded
    number of times before erroring out.
    """
    if not 0.0 < missing_ratio < 1.0:
        raise ParameterError(f"missing_ratio must lie in (0, 1), got {missing_ratio}")
    for _ in range(_REDRAW_LIMIT):
        m = (rng.random((T, N)) >= missing_ratio).astype(np.float64)
        if np.any(m == 0.0) and np.any(m == 1.0):
            return m
    raise ParameterError(
        f"could not draw a non-degenerate mask in {_REDRAW_LIMIT} tries "
        f"(T={T}, N={N}, missing_ratio={missing_ratio})"
    )


MIXED_STRATEGIES = ("forecast", "gap", "agent", "random_state")


def mixed_mask(
    T: int,
    N: int,
    rng: np.random.Generator,
    observed_prefix: int | None = None,
    gap_len: int | None = None,
    hidden_agents: int | None = None,
    missing_ratio: float = 0.5,
) -> np.ndarray:
    """Pick one of the four base strategies uniformly at random.

    Unspecified parameters default to: one third of the frames observed
    (forecast), a gap of one third of the frames, and half the agents
    hidden (capped at 5).
    """
    if observed_prefix is None:
        observed_prefix = max(1, T // 3)
    if gap_len is None:
        gap_len = min(max(1, T // 3), T - 2)
    if hidden_agents is None:
        hidden_agents = max(1, min(5, N - 1, N // 2))
    choice = MIXED_STRATEGIES[rng.integers(len(MIXED_STRATEGIES))]
    if choice == "forecast":
        return forecast_mask(T, N, observed_prefix)
    if choice == "gap":
        return gap_mask(T, N, gap_len, rng)
    if choice == "agent":
        return agent_mask(T, N, hidden_agents, rng)
    return random_state_mask(T, N, missing_ratio, rng)


def make_mask(
    strategy: str,
    T: int,
    N: int,
    rng: np.random.Generator,
    observed_prefix: int | None = None,
    gap_len: int | None = None,
    hidden_agents: int | None = None,
    missing_ratio: float = 0.5,
) -> np.ndarray:
    """Dispatch on the strategy name, using the mixed-mask defaults."""
    if strategy == "forecast":
        return forecast_mask(T, N, observed_prefix or max(1, T // 3))
    if strategy == "gap":
        return gap_mask(T, N, gap_len or min(max(1, T // 3), T - 2), rng)
    if strategy == "agent":
        return agent_mask(T, N, hidden_agents or max(1, min(5, N - 1, N // 2)), rng)
    if strategy == "random_state":
        return random_state_mask(T, N, missing_ratio, rng)
    if strategy == "mixed":
        return mixed_mask(T, N, rng, observed_prefix, gap_len, hidden_agents, missing_ratio)
    raise ParameterError(f"unknown mask strategy {strategy!r}")
