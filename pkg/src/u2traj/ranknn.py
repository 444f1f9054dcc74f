"""Per-mode error-probability estimation and its rank-correlation objective.

Given K completed modes of one scene (means, variances, shared mask), the
rank network produces a probability simplex over the modes whose ordering
is trained to match the per-mode scene errors: the loss is the negative
soft Spearman correlation between the two, built from a pairwise-sigmoid
differentiable rank operator.  ``avg_ucty`` is the unsupervised baseline:
the mean predicted standard deviation of a mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import Scene
from .denoiser import Denoiser, SocialAttention, TemporalRecurrence
from .errors import (
    ConfigError,
    DegenerateCorrelationError,
    DimensionError,
    DomainError,
    NumericError,
    ParameterError,
)
from .metrics import sade
from .sampling import ModeSet, PosteriorField, generate_modes
from .schedule import NoiseSchedule

__all__ = [
    "RankConfig",
    "avg_ucty",
    "build_rank_input",
    "RankNN",
    "soft_rank",
    "spearman_soft",
    "RankTrainResult",
    "train_ranknn",
]


@dataclass
class RankConfig:
    width: int = 64
    heads: int = 4
    ffn: int = 256
    tau: float = 0.1
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 20
    K: int = 20

    def validate(self) -> None:
        if self.width % self.heads != 0:
            raise ConfigError(f"width ({self.width}) must be divisible by heads ({self.heads})")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.K < 2:
            raise ConfigError(f"K must be >= 2 for ranking, got {self.K}")
        if self.lr <= 0 or self.batch < 1 or self.epochs < 1:
            raise ConfigError("lr must be positive, batch and epochs >= 1")


def avg_ucty(
    field: PosteriorField, mask: np.ndarray | None = None, unobserved_only: bool = False
) -> float:
    """Mean predicted standard deviation over all states of one mode.

    With ``unobserved_only`` the average is restricted to mask-0 states.
    """
    var = np.asarray(field.var, dtype=np.float64)
    if np.any(var < 0):
        raise DomainError("variance must be entrywise nonnegative")
    std = np.sqrt(var)
    if unobserved_only:
        if mask is None:
            raise ParameterError("unobserved_only requires a mask")
        sel = np.asarray(mask) == 0.0
        return float(std[sel].mean())
    return float(std.mean())


def build_rank_input(modes: ModeSet, mask: np.ndarray) -> np.ndarray:
    """(K, T, N, 5) tensor: mean_x, mean_y, var_x, var_y, mask."""
    if modes.K < 1:
        raise ParameterError("mode set is empty")
    shape = modes.fields[0].mean.shape
    for f in modes.fields:
        if f.mean.shape != shape or f.var.shape != shape:
            raise DimensionError("modes disagree on (T, N) geometry")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} != scene geometry {shape[:2]}")
    means = modes.means()
    variances = modes.variances()
    m = np.broadcast_to(mask[None, :, :, None], (modes.K,) + mask.shape + (1,))
    return np.concatenate([means, variances, m], axis=-1)


class RankNN(nn.Module):
    """Maps K stacked modes to a probability simplex of error estimates.

    Per-state embedding -> temporal recurrence per (mode, agent) -> agent
    attention per (mode, timestep) -> mean pool over states -> attention
    across the K mode slots (no positional encoding, so K is free) ->
    per-mode projection head -> softmax.
    """

    def __init__(self, config: RankConfig | None = None):
        super().__init__()
        self.config = config or RankConfig()
        self.config.validate()
        W = self.config.width
        self.embed = nn.Linear(5, W)
        self.temporal = TemporalRecurrence(W)
        self.social = SocialAttention(W, self.config.heads, self.config.ffn)
        self.mode_attn = SocialAttention(W, self.config.heads, self.config.ffn)
        self.head_hidden = nn.Linear(W, W)
        self.head_out = nn.Linear(W, 1)

    @property
    def dtype(self) -> torch.dtype:
        return self.embed.weight.dtype

    def forward(self, rank_input) -> torch.Tensor:
        if isinstance(rank_input, torch.Tensor):
            x = rank_input.to(self.dtype)
        else:
            x = torch.as_tensor(np.asarray(rank_input), dtype=self.dtype)
        if x.dim() != 4 or x.shape[-1] != 5:
            raise DimensionError(f"expected (K, T, N, 5) input, got {tuple(x.shape)}")
        K = x.shape[0]
        if K < 2:
            raise ParameterError(f"ranking needs K >= 2 modes, got {K}")
        h = self.embed(x)                     # (K, T, N, W)
        h = self.social(self.temporal(h))     # modes ride along the batch axis
        pooled = h.mean(dim=(1, 2))           # (K, W)
        pooled = self.mode_attn(pooled[None, None])[0, 0]
        logits = self.head_out(F.relu(self.head_hidden(pooled))).squeeze(-1)
        return torch.softmax(logits, dim=0)


def soft_rank(v, tau: float) -> torch.Tensor:
    """Differentiable ranks: R[v_i] = 1 + sum_{j != i} sigmoid((v_i - v_j) / tau).

    Converges to average-tie hard ranks as tau -> 0 on distinct values;
    exact ties receive the average rank at any tau by symmetry.
    """
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if not isinstance(v, torch.Tensor):
        v = torch.as_tensor(np.asarray(v), dtype=torch.float64)
    if v.dim() != 1 or v.numel() < 1:
        raise ParameterError("soft_rank expects a 1-D vector")
    diff = (v[:, None] - v[None, :]) / tau
    sig = torch.sigmoid(diff)
    sig = sig - torch.diag_embed(torch.diagonal(sig))
    return 1.0 + sig.sum(dim=1)


def spearman_soft(e, sade_values, tau: float, eps: float = 0.0) -> torch.Tensor:
    """Correlation of the soft ranks of two score vectors, in (-1, 1).

    With ``eps`` = 0 a zero-variance rank vector raises; a small positive
    ``eps`` regularizes the normalization so training can leave a
    constant-output start.
    """
    re = soft_rank(e, tau)
    rs = soft_rank(sade_values, tau)
    if re.numel() < 2:
        raise ParameterError("spearman_soft needs K >= 2")
    rs = rs.to(re.dtype)
    rec = re - re.mean()
    rsc = rs - rs.mean()
    ne, ns = torch.linalg.norm(rec), torch.linalg.norm(rsc)
    if eps == 0.0 and (float(ne) == 0.0 or float(ns) == 0.0):
        raise DegenerateCorrelationError("soft ranks have zero variance")
    return (rec * rsc).sum() / (ne * ns + eps)


@dataclass
class RankTrainResult:
    model: RankNN
    losses: list[float]


def train_ranknn(
    denoiser: Denoiser,
    dataset,
    schedule: NoiseSchedule,
    config: RankConfig,
    seed: int,
    log_fn=None,
    deterministic: bool = True,
) -> RankTrainResult:
    """Train the rank network on modes generated online with frozen weights.

    Per scene and epoch: draw K fresh modes under the scene's mask, score
    them by scene error against ground truth, and take an Adam step on the
    batch-mean negative soft Spearman correlation.
    """
    if denoiser is None:
        raise ConfigError("rank training requires a trained denoiser")
    scenes = [sc for sc in dataset]
    if not scenes:
        raise ConfigError("rank training dataset is empty")
    for sc in scenes:
        if not isinstance(sc, Scene):
            raise ConfigError("rank training expects Scene objects with masks")
    config.validate()
    if deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(seed)
    model = RankNN(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(seed)
    noise_fn = denoiser.as_noise_fn()
    base = np.random.SeedSequence(seed)

    losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(scenes))
        total, count = 0.0, 0
        for j in range(0, len(order), config.batch):
            batch = order[j : j + config.batch]
            loss = 0.0
            for i in batch:
                sc = scenes[i]
                mode_seed = np.random.SeedSequence(
                    entropy=base.entropy, spawn_key=(epoch, int(i))
                )
                modes = generate_modes(
                    noise_fn, sc.x_obs(), sc.mask, schedule, config.K, mode_seed
                )
                sades = torch.tensor(
                    [sade(f.mean, sc.x, sc.mask) for f in modes.fields],
                    dtype=torch.float64,
                )
                e = model(build_rank_input(modes, sc.mask))
                loss = loss - spearman_soft(e, sades, config.tau, eps=1e-8)
            loss = loss / len(batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(f"non-finite rank loss at epoch {epoch}")
            total += value
            count += 1
        losses.append(total / count)
        if log_fn is not None:
            log_fn(epoch, losses[-1])
    return RankTrainResult(model=model, losses=losses)
