"""Conditional noise-prediction network and its training objective.

The network maps (noised states, step, observed states, mask) to the mean
and standard deviation of the injected noise.  Processing is decoupled:
a bidirectional gated linear recurrence runs over time independently per
agent (sequential order-awareness without positional encodings, any T),
and a transformer encoder attends across agents independently per
timestep (any N).  Two residual blocks combine these with a gate-filter
unit conditioned on the step embedding and a mask/agent-embedding tensor;
their skip outputs are summed into the output head.

The training loss is the plain noise regression plus a weighted Gaussian
negative log-likelihood of the noise whose mean branch is gradient-blocked,
so the likelihood term trains only the standard-deviation head.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import Scene
from .errors import ConfigError, DimensionError, DomainError, NumericError, ParameterError
from .schedule import NoiseSchedule

__all__ = [
    "DenoiserConfig",
    "DenoiserOutput",
    "DenoiserActivations",
    "StepEmbedding",
    "GatedScan",
    "TemporalRecurrence",
    "SocialAttention",
    "ResidualBlock",
    "Denoiser",
    "loss_simple",
    "loss_nll",
    "loss_total",
    "TrainResult",
    "train_denoiser",
]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class DenoiserConfig:
    channels: int = 256
    blocks: int = 2
    heads: int = 8
    ffn: int = 1024
    step_emb: int = 128
    agent_emb: int = 64
    lambda_nll: float = 0.01   # 0.001 suits high-dynamics data
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 100
    max_agents: int = 32
    loss_unobserved_only: bool = False

    def validate(self) -> None:
        if self.channels % self.heads != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by heads ({self.heads})"
            )
        if self.lambda_nll < 0:
            raise ConfigError(f"lambda_nll must be >= 0, got {self.lambda_nll}")
        if self.step_emb % 2 != 0:
            raise ConfigError(f"step_emb must be even, got {self.step_emb}")
        for name in ("channels", "blocks", "heads", "ffn", "step_emb", "agent_emb",
                     "batch", "epochs", "max_agents"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")


@dataclass
class DenoiserOutput:
    """Predicted noise mean and sigmoid-bounded std, each (..., T, N, 2)."""

    eps_mean: torch.Tensor
    eps_std: torch.Tensor


@dataclass
class DenoiserActivations:
    """Intermediate tensors of one forward pass, for inspection and tests."""

    J: torch.Tensor
    J_skip: list[torch.Tensor] = field(default_factory=list)
    M_emb: torch.Tensor | None = None


class StepEmbedding(nn.Module):
    """Sinusoidal step features projected through a linear layer and SiLU."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.proj = nn.Linear(dim, dim)

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        dtype = self.proj.weight.dtype
        half = self.dim // 2
        i = torch.arange(half, dtype=dtype, device=s.device)
        freq = torch.pow(torch.tensor(10000.0, dtype=dtype), -i / max(half - 1, 1))
        ang = s.to(dtype)[:, None] * freq[None, :]
        feats = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
        return F.silu(self.proj(feats))


class GatedScan(nn.Module):
    """One direction of an input-gated diagonal linear recurrence.

    h_t = g_t * h_{t-1} + (1 - g_t) * u_t with g_t = sigmoid(W_g x_t),
    u_t = W_u x_t; scans over the second-to-last axis.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.gate = nn.Linear(channels, channels)
        self.inp = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = torch.sigmoid(self.gate(x))
        u = self.inp(x)
        h = torch.zeros_like(x[..., 0, :])
        out = []
        for t in range(x.shape[-2]):
            h = g[..., t, :] * h + (1.0 - g[..., t, :]) * u[..., t, :]
            out.append(h)
        return torch.stack(out, dim=-2)


class TemporalRecurrence(nn.Module):
    """Causal and anticausal gated scans over time per agent, summed."""

    def __init__(self, channels: int):
        super().__init__()
        self.fwd = GatedScan(channels)
        self.rev = GatedScan(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, T, N, C) -> scan over T independently per agent
        y = x.permute(0, 2, 1, 3)
        out = self.fwd(y) + self.rev(y.flip(-2)).flip(-2)
        return out.permute(0, 2, 1, 3)


class SocialAttention(nn.Module):
    """Pre-norm self-attention across the agent axis at each timestep."""

    def __init__(self, channels: int, heads: int, ffn: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(channels)
        self.ln2 = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.ff = nn.Sequential(
            nn.Linear(channels, ffn), nn.ReLU(), nn.Linear(ffn, channels)
        )

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        B, T, N, C = x.shape
        y = x.reshape(B * T, N, C)
        q = self.ln1(y)
        att, w = self.attn(q, q, q, need_weights=return_weights)
        y = y + att
        y = y + self.ff(self.ln2(y))
        y = y.reshape(B, T, N, C)
        if return_weights:
            return y, w.reshape(B, T, N, N)
        return y


class ResidualBlock(nn.Module):
    """Temporal + social processing feeding a gate-filter unit.

    Returns the refined embedding (input plus residual) and a skip tensor.
    The final projection carries no bias so a closed gate yields a zero
    residual.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        C = config.channels
        self.step_proj = nn.Linear(config.step_emb, C)
        self.temporal = TemporalRecurrence(C)
        self.social = SocialAttention(C, config.heads, config.ffn)
        self.mid_proj = nn.Linear(C, 2 * C)
        self.mask_proj = nn.Linear(1 + config.agent_emb, 2 * C)
        self.out_proj = nn.Linear(C, 2 * C, bias=False)

    def forward(self, J, s_emb, m_emb):
        y = J + self.step_proj(s_emb)[:, None, None, :]
        y = self.social(self.temporal(y))
        y = self.mid_proj(y) + self.mask_proj(m_emb)
        gate, filt = y.chunk(2, dim=-1)
        y = torch.sigmoid(gate) * torch.tanh(filt)
        residual, skip = self.out_proj(y).chunk(2, dim=-1)
        return J + residual, skip


class Denoiser(nn.Module):
    """Noise-prediction network over (x_s, s, x_obs, mask).

    Accepts unbatched (T, N, 2) or batched (B, T, N, 2) states; the step
    may be an int or a per-element tensor.  Agents index a fixed-capacity
    learnable embedding table; scenes with fewer agents use a prefix.
    """

    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        self.config.validate()
        C = self.config.channels
        self.input_proj = nn.Linear(4, C)
        self.step_emb = StepEmbedding(self.config.step_emb)
        self.agent_emb = nn.Parameter(
            torch.randn(self.config.max_agents, self.config.agent_emb)
        )
        self.blocks = nn.ModuleList(
            [ResidualBlock(self.config) for _ in range(self.config.blocks)]
        )
        self.out1 = nn.Linear(C, C)
        self.out2 = nn.Linear(C, 4)
        nn.init.zeros_(self.out2.bias)  # start with eps_std ~ sigmoid(0) = 0.5

    @property
    def dtype(self) -> torch.dtype:
        return self.input_proj.weight.dtype

    def embed_input(self, x_obs: torch.Tensor, x_s: torch.Tensor) -> torch.Tensor:
        """Pointwise embedding of the concatenated observed/noised 4-vector."""
        if x_obs.shape != x_s.shape or x_s.shape[-1] != 2:
            raise DimensionError(
                f"x_obs {tuple(x_obs.shape)} and x_s {tuple(x_s.shape)} must match "
                "with trailing dimension 2"
            )
        return F.relu(self.input_proj(torch.cat([x_obs, x_s], dim=-1)))

    def _coerce(self, x) -> torch.Tensor:
        if isinstance(x, torch.Tensor):
            return x.to(self.dtype)
        return torch.as_tensor(np.asarray(x), dtype=self.dtype)

    def _prepare(self, x_s, s, x_obs, mask):
        x_s = self._coerce(x_s)
        x_obs = self._coerce(x_obs)
        mask = self._coerce(mask)
        unbatched = x_s.dim() == 3
        if unbatched:
            x_s, x_obs, mask = x_s[None], x_obs[None], mask[None]
        if x_s.dim() != 4 or x_s.shape[-1] != 2:
            raise DimensionError(f"expected (B, T, N, 2) states, got {tuple(x_s.shape)}")
        if x_obs.shape != x_s.shape:
            raise DimensionError(
                f"x_obs shape {tuple(x_obs.shape)} != x_s shape {tuple(x_s.shape)}"
            )
        if mask.shape != x_s.shape[:3]:
            raise DimensionError(
                f"mask shape {tuple(mask.shape)} incompatible with states {tuple(x_s.shape)}"
            )
        B, _, N, _ = x_s.shape
        if N > self.config.max_agents:
            raise ParameterError(
                f"scene has {N} agents but the embedding table holds {self.config.max_agents}"
            )
        if isinstance(s, torch.Tensor):
            s_t = s.reshape(-1)
            if s_t.numel() == 1:
                s_t = s_t.expand(B)
        else:
            s_t = torch.full((B,), int(s))
        return x_s, s_t, x_obs, mask, unbatched

    def _mask_embedding(self, mask: torch.Tensor) -> torch.Tensor:
        B, T, N = mask.shape
        emb = self.agent_emb[:N].to(self.dtype)
        emb = emb[None, None].expand(B, T, N, emb.shape[-1])
        return torch.cat([mask.unsqueeze(-1), emb], dim=-1)

    def _trunk(self, x_s, s_t, x_obs, mask, collect: bool = False):
        J = self.embed_input(x_obs, x_s)
        s_emb = self.step_emb(s_t)
        m_emb = self._mask_embedding(mask)
        acts = DenoiserActivations(J=J, M_emb=m_emb) if collect else None
        skip_sum = None
        for block in self.blocks:
            J, skip = block(J, s_emb, m_emb)
            skip_sum = skip if skip_sum is None else skip_sum + skip
            if collect:
                acts.J_skip.append(skip)
        out = self.out2(F.relu(self.out1(skip_sum)))
        return out, acts

    def forward(self, x_s, s, x_obs, mask) -> DenoiserOutput:
        x_s, s_t, x_obs, mask, unbatched = self._prepare(x_s, s, x_obs, mask)
        out, _ = self._trunk(x_s, s_t, x_obs, mask)
        eps_mean = out[..., :2]
        eps_std = torch.sigmoid(out[..., 2:])
        if unbatched:
            eps_mean, eps_std = eps_mean[0], eps_std[0]
        return DenoiserOutput(eps_mean=eps_mean, eps_std=eps_std)

    def trace(self, x_s, s, x_obs, mask) -> DenoiserActivations:
        """Forward pass that also returns the intermediate activations."""
        x_s, s_t, x_obs, mask, _ = self._prepare(x_s, s, x_obs, mask)
        _, acts = self._trunk(x_s, s_t, x_obs, mask, collect=True)
        return acts

    def mean_head_parameters(self) -> list[torch.Tensor]:
        """Slices of the output projection that feed only the noise mean."""
        return [self.out2.weight[:2], self.out2.bias[:2]]

    def as_noise_fn(self):
        """Adapter to the numpy sampling contract (no gradients)."""

        def fn(x_s, s, x_obs, mask):
            with torch.no_grad():
                out = self(x_s, int(s), x_obs, mask)
            return (
                out.eps_mean.double().numpy(),
                out.eps_std.double().numpy(),
            )

        return fn


def _weighted_mean(values: torch.Tensor, weight: torch.Tensor | None) -> torch.Tensor:
    if weight is None:
        return values.mean()
    w = weight.to(values.dtype).unsqueeze(-1)
    denom = w.sum() * values.shape[-1]
    if float(denom) == 0.0:
        raise DomainError("loss weight selects no states")
    return (values * w).sum() / denom


def _coerce_like(x, ref: torch.Tensor) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(ref.dtype)
    return torch.as_tensor(np.asarray(x), dtype=ref.dtype)


def loss_simple(eps, out: DenoiserOutput, weight=None) -> torch.Tensor:
    """Mean squared error between the true and predicted noise."""
    eps = _coerce_like(eps, out.eps_mean)
    return _weighted_mean((eps - out.eps_mean) ** 2, _opt_weight(weight, out))


def loss_nll(eps, out: DenoiserOutput, weight=None) -> torch.Tensor:
    """Gaussian negative log-likelihood of the noise.

    The predicted mean is gradient-blocked, so this term trains only the
    standard-deviation branch.
    """
    eps = _coerce_like(eps, out.eps_mean)
    sigma = out.eps_std
    if torch.any(sigma <= 0):
        raise DomainError("loss_nll requires strictly positive eps_std")
    resid = eps - out.eps_mean.detach()
    values = torch.log(sigma) + LOG_SQRT_2PI + resid**2 / (2.0 * sigma**2)
    return _weighted_mean(values, _opt_weight(weight, out))


def loss_total(eps, out: DenoiserOutput, lambda_nll: float, weight=None) -> torch.Tensor:
    """loss_simple + lambda * loss_nll."""
    if lambda_nll < 0:
        raise ParameterError(f"lambda_nll must be >= 0, got {lambda_nll}")
    total = loss_simple(eps, out, weight)
    if lambda_nll > 0:
        total = total + lambda_nll * loss_nll(eps, out, weight)
    return total


def _opt_weight(weight, out: DenoiserOutput):
    if weight is None:
        return None
    return _coerce_like(weight, out.eps_mean)


@dataclass
class TrainResult:
    model: Denoiser
    losses: list[float]


def train_denoiser(
    dataset,
    mask_sampler,
    schedule: NoiseSchedule,
    config: DenoiserConfig,
    seed: int,
    log_fn=None,
    deterministic: bool = True,
) -> TrainResult:
    """Train the noise predictor on scenes in model units.

    Per batch: a uniform step, fresh standard-normal noise, the noised
    states via the closed-form forward map, a fresh conditioning mask, and
    one Adam step on the total loss.  ``mask_sampler(T, N, rng)`` supplies
    masks.  Deterministic under the seed when single-threaded (the
    default pins the torch thread count to 1).
    """
    scenes = list(dataset)
    if not scenes:
        raise ConfigError("training dataset is empty")
    config.validate()
    if deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(seed)
    model = Denoiser(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(seed)

    arrays = [
        np.asarray(sc.x if isinstance(sc, Scene) else sc, dtype=np.float64)
        for sc in scenes
    ]
    buckets: dict[tuple, list[int]] = defaultdict(list)
    for i, arr in enumerate(arrays):
        if arr.ndim != 3 or arr.shape[-1] != 2:
            raise DimensionError(f"scene {i} must be (T, N, 2), got {arr.shape}")
        buckets[arr.shape].append(i)

    losses: list[float] = []
    for epoch in range(config.epochs):
        batches: list[np.ndarray] = []
        for shape in sorted(buckets):
            order = rng.permutation(buckets[shape])
            for j in range(0, len(order), config.batch):
                batches.append(order[j : j + config.batch])
        total, count = 0.0, 0
        for bi in rng.permutation(len(batches)):
            batch = batches[bi]
            x0 = np.stack([arrays[i] for i in batch])
            B, T, N, _ = x0.shape
            s = rng.integers(1, schedule.S + 1, size=B)
            eps = rng.standard_normal(x0.shape)
            ah = schedule.alpha_hat[s][:, None, None, None]
            x_s = np.sqrt(ah) * x0 + np.sqrt(1.0 - ah) * eps
            masks = np.stack([mask_sampler(T, N, rng) for _ in batch])
            x_obs = x0 * masks[..., None]

            out = model(x_s, torch.as_tensor(s), x_obs, masks)
            weight = (1.0 - masks) if config.loss_unobserved_only else None
            loss = loss_total(eps, out, config.lambda_nll, weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            total += value
            count += 1
        losses.append(total / count)
        if log_fn is not None:
            log_fn(epoch, losses[-1])
    return TrainResult(model=model, losses=losses)
