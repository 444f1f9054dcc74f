"""Uncertainty-aware diffusion for multi-agent 2D trajectory completion.

The library completes partially observed multi-agent scenes (forecasting,
imputation, fully hidden agents) with a conditional diffusion model that
also predicts per-state variance, propagated in closed form from the
latent noise space to the state space.  A post-processing rank network
assigns each generated mode an error probability correlated with its
scene-level error.
"""

__version__ = "0.1.0"

from .data import AffineMap, Bounds, DatasetSplit, DynamicsParams, Scene, generate_scene, normalize
from .denoiser import (
    Denoiser,
    DenoiserConfig,
    DenoiserOutput,
    loss_nll,
    loss_simple,
    loss_total,
    train_denoiser,
)
from .masking import (
    agent_mask,
    forecast_mask,
    gap_mask,
    make_mask,
    mixed_mask,
    random_state_mask,
)
from .metrics import (
    EvalReport,
    acc_rate,
    evaluate_topk,
    gaussian_nll,
    min_ade_k,
    min_fde_k,
    min_sade_k,
    min_sfde_k,
    sade,
    sfde,
    spearman,
    top_k_select,
)
from .ranknn import RankConfig, RankNN, avg_ucty, build_rank_input, soft_rank, spearman_soft, train_ranknn
from .sampling import LatentState, ModeSet, PosteriorField, generate_modes, sample_mode
from .schedule import NoiseSchedule, ddim_step, ddpm_step, forward_sample, make_schedule, propagate_variance
from .sceneio import read_modeset, read_scene, write_modeset, write_scene
