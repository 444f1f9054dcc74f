"""Flat key=value run configuration with a strict schema.

Lines are ``key = value``; ``#`` starts a comment.  Unknown or duplicate
keys are errors so typos surface immediately.  Every value is validated
against the operation preconditions before any command does work.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .data import DynamicsParams
from .denoiser import DenoiserConfig
from .errors import ConfigError
from .masking import MIXED_STRATEGIES
from .ranknn import RankConfig
from .schedule import NoiseSchedule, make_schedule

__all__ = ["RunConfig", "CONFIG_SCHEMA", "parse_config", "load_config"]

_STRATEGIES = MIXED_STRATEGIES + ("mixed",)


@dataclass
class RunConfig:
    # diffusion schedule
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.5
    zeta: int = 10
    s_hat: int = 30
    # denoiser
    lambda_nll: float = 0.01
    channels: int = 256
    blocks: int = 2
    heads: int = 8
    ffn: int = 1024
    step_emb: int = 128
    agent_emb: int = 64
    max_agents: int = 32
    loss_unobserved_only: bool = False
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 100
    # mode generation and ranking
    K: int = 20
    tau: float = 0.1
    rank_width: int = 64
    rank_heads: int = 4
    rank_ffn: int = 256
    rank_lr: float = 1e-3
    rank_batch: int = 32
    rank_epochs: int = 20
    rank_scenes: int = 0          # 0 = use every training scene
    # randomness
    seed: int = 0
    # masks
    mask_strategy: str = "mixed"
    observed_prefix: int = 0      # 0 = one third of the frames
    gap_len: int = 0              # 0 = one third of the frames
    hidden_agents: int = 0        # 0 = half the agents, capped at 5
    missing_ratio: float = 0.5
    # synthetic data
    n_scenes: int = 100
    T: int = 50
    N: int = 11
    dt: float = 0.16
    train_frac: float = 0.8
    court_width: float = 28.65
    court_height: float = 15.24
    v_max: float = 6.0
    accel_std: float = 2.5
    waypoint_frames: int = 18
    possession_frames: int = 22
    ball_gain: float = 0.55
    ball_noise: float = 0.25
    # paths
    data_dir: str = "data"
    checkpoint: str = "checkpoint.u2df"
    rank_checkpoint: str = "rank.u2df"
    out_dir: str = "out"
    report: str = ""              # "" = <out_dir>/report.txt

    def validate(self) -> None:
        if self.steps < 2:
            raise ConfigError(f"steps must be >= 2, got {self.steps}")
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ConfigError(
                f"need 0 < beta_start < beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        if not 1 <= self.zeta <= self.steps:
            raise ConfigError(f"zeta must lie in [1, steps], got {self.zeta}")
        if self.steps % self.zeta != 0:
            raise ConfigError(
                f"zeta ({self.zeta}) must divide steps ({self.steps}) for the skip chain"
            )
        if not 0 <= self.s_hat <= self.steps:
            raise ConfigError(f"s_hat must lie in [0, steps], got {self.s_hat}")
        if self.lambda_nll < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_nll}")
        if self.channels % self.heads != 0:
            raise ConfigError("channels must be divisible by heads")
        if self.rank_width % self.rank_heads != 0:
            raise ConfigError("rank_width must be divisible by rank_heads")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.mask_strategy not in _STRATEGIES:
            raise ConfigError(
                f"mask_strategy must be one of {_STRATEGIES}, got {self.mask_strategy!r}"
            )
        if not 0.0 < self.missing_ratio < 1.0:
            raise ConfigError(f"missing_ratio must lie in (0, 1), got {self.missing_ratio}")
        if self.T < 2 or self.N < 2:
            raise ConfigError(f"need T >= 2 and N >= 2, got T={self.T}, N={self.N}")
        if self.N > self.max_agents:
            raise ConfigError(
                f"N ({self.N}) exceeds the agent embedding capacity ({self.max_agents})"
            )
        if self.n_scenes < 2:
            raise ConfigError(f"n_scenes must be >= 2, got {self.n_scenes}")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError(f"train_frac must lie in (0, 1), got {self.train_frac}")
        if self.court_width <= 0 or self.court_height <= 0 or self.dt <= 0:
            raise ConfigError("court dimensions and dt must be positive")
        for name in ("lr", "rank_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("batch", "epochs", "rank_batch", "rank_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.observed_prefix and not 1 <= self.observed_prefix < self.T:
            raise ConfigError(f"observed_prefix must lie in [1, T-1], got {self.observed_prefix}")
        if self.gap_len and not 1 <= self.gap_len <= self.T - 2:
            raise ConfigError(f"gap_len must lie in [1, T-2], got {self.gap_len}")
        if self.hidden_agents and not 1 <= self.hidden_agents < self.N:
            raise ConfigError(f"hidden_agents must lie in [1, N-1], got {self.hidden_agents}")

    # -- derived objects -------------------------------------------------

    def schedule(self, s_hat: int | None = None) -> NoiseSchedule:
        return make_schedule(
            self.steps, self.beta_start, self.beta_end, self.zeta,
            self.s_hat if s_hat is None else s_hat,
        )

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            channels=self.channels, blocks=self.blocks, heads=self.heads,
            ffn=self.ffn, step_emb=self.step_emb, agent_emb=self.agent_emb,
            lambda_nll=self.lambda_nll, lr=self.lr, batch=self.batch,
            epochs=self.epochs, max_agents=self.max_agents,
            loss_unobserved_only=self.loss_unobserved_only,
        )

    def rank_config(self) -> RankConfig:
        return RankConfig(
            width=self.rank_width, heads=self.rank_heads, ffn=self.rank_ffn,
            tau=self.tau, lr=self.rank_lr, batch=self.rank_batch,
            epochs=self.rank_epochs, K=self.K,
        )

    def dynamics(self) -> DynamicsParams:
        return DynamicsParams(
            v_max=self.v_max, accel_std=self.accel_std,
            waypoint_frames=self.waypoint_frames,
            possession_frames=self.possession_frames,
            ball_gain=self.ball_gain, ball_noise=self.ball_noise,
        )

    def report_path(self) -> str:
        return self.report or f"{self.out_dir}/report.txt"

    def canonical_text(self) -> str:
        lines = [f"{key} = {getattr(self, attr)}" for key, (attr, _) in sorted(CONFIG_SCHEMA.items())]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _build_schema() -> dict[str, tuple[str, type]]:
    schema = {}
    for f in fields(RunConfig):
        key = "lambda" if f.name == "lambda_nll" else f.name
        schema[key] = (f.name, f.type if isinstance(f.type, type) else type(f.default))
    return schema


CONFIG_SCHEMA = _build_schema()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, typ = CONFIG_SCHEMA[key]
        try:
            if typ is bool:
                parsed = _bool(value)
            elif typ is int:
                parsed = int(value)
            elif typ is float:
                parsed = float(value)
            else:
                parsed = value
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: key {key!r} expects {typ.__name__}, got {value!r}"
            )
        setattr(cfg, attr, parsed)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return parse_config(text, source=str(path))
