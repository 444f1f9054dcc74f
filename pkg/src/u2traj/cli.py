"""Command-line entry points.

Commands: gen-data, train, sample, eval, rank-train, rank-eval,
sweep-shat, plot.  All take ``--config`` (flat key=value file); some take
positional input files.  Exit codes: 0 success, 2 configuration or
parameter validation failure, 3 I/O or parse failure, 4 numeric failure.

Every command is idempotent given identical inputs and seed, never
mutates its inputs, and holds a lock file in its output directory while
running.  A run manifest (config hash, seed, format and package versions)
is embedded in every output file header.  ``U2TRAJ_THREADS`` caps the
torch worker-thread count (default 1, the deterministic mode).
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict

import numpy as np
import torch

from . import __version__
from .checkpoint import arrays_to_state, load_checkpoint, save_checkpoint, state_to_arrays
from .config import RunConfig, load_config
from .data import AffineMap, Bounds, Scene, generate_scene, normalize, with_mask
from .denoiser import Denoiser, DenoiserConfig, train_denoiser
from .errors import (
    ConfigError,
    DegenerateCorrelationError,
    DimensionError,
    DomainError,
    NumericError,
    ParameterError,
    ParseError,
    StepRangeError,
)
from .masking import make_mask
from .metrics import (
    EvalReport,
    acc_rate,
    gaussian_nll,
    min_ade_k,
    min_fde_k,
    min_sade_k,
    min_sfde_k,
    sade,
    spearman,
)
from .ranknn import RankConfig, RankNN, avg_ucty, build_rank_input, train_ranknn
from .sampling import (
    ModeSet,
    PosteriorField,
    generate_modes,
    reverse_chain_steps,
    sample_mode,
)
from .sceneio import FORMAT_VERSION, read_modeset, read_scene, write_modeset, write_scene
from .schedule import make_schedule
from .svgplot import scatter_svg, trajectory_svg

# seed-domain tags for counter-based per-item seeds
_GEN, _SAMPLE, _RANKEVAL, _SWEEP = 0, 1, 2, 3

LOCK_NAME = ".u2traj.lock"


def thread_count() -> int:
    raw = os.environ.get("U2TRAJ_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"U2TRAJ_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"U2TRAJ_THREADS must be >= 1, got {n}")
    return n


@contextmanager
def dir_lock(directory: str):
    """Exclusive per-directory lock; a second concurrent run fails fast."""
    os.makedirs(directory or ".", exist_ok=True)
    path = os.path.join(directory or ".", LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {directory!r} is locked ({path} exists)")
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        os.unlink(path)


def _manifest(cfg: RunConfig) -> str:
    return f"cfg:{cfg.digest()};seed:{cfg.seed};fmt:{FORMAT_VERSION};pkg:{__version__}"


def _item_seed(cfg: RunConfig, domain: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=cfg.seed, spawn_key=(domain, index))


def _split_scenes(cfg: RunConfig, which: str) -> list[tuple[str, Scene]]:
    list_path = os.path.join(cfg.data_dir, f"{which}.txt")
    with open(list_path) as fh:
        names = fh.read().split()
    if not names:
        raise ConfigError(f"{list_path} lists no scenes")
    return [(name, read_scene(os.path.join(cfg.data_dir, name))) for name in names]


def _mask_sampler(cfg: RunConfig):
    def sampler(T: int, N: int, rng: np.random.Generator) -> np.ndarray:
        return make_mask(
            cfg.mask_strategy, T, N, rng,
            observed_prefix=cfg.observed_prefix or None,
            gap_len=cfg.gap_len or None,
            hidden_agents=cfg.hidden_agents or None,
            missing_ratio=cfg.missing_ratio,
        )

    return sampler


# ---------------------------------------------------------------------------
# checkpoint helpers

def _schedule_header(cfg: RunConfig) -> dict:
    return {
        "S": cfg.steps, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end,
        "zeta": cfg.zeta, "s_hat": cfg.s_hat,
    }


def _load_denoiser(path: str, s_hat: int | None = None):
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "denoiser":
        raise ConfigError(f"{path} is not a denoiser checkpoint (kind={header.get('kind')!r})")
    model = Denoiser(DenoiserConfig(**header["config"]))
    model.load_state_dict(arrays_to_state(arrays))
    model.eval()
    sp = dict(header["schedule"])
    if s_hat is not None:
        sp["s_hat"] = s_hat
    schedule = make_schedule(sp["S"], sp["beta_start"], sp["beta_end"], sp["zeta"], sp["s_hat"])
    amap = AffineMap(Bounds(**header["normalization"]))
    return model, schedule, amap


def _load_ranknn(path: str) -> RankNN:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "ranknn":
        raise ConfigError(f"{path} is not a rank checkpoint (kind={header.get('kind')!r})")
    model = RankNN(RankConfig(**header["config"]))
    model.load_state_dict(arrays_to_state(arrays))
    model.eval()
    return model


def _to_model_units(scene: Scene, amap: AffineMap) -> Scene:
    return Scene(
        x=amap.to_model(scene.x), mask=scene.mask.copy(), dt=scene.dt,
        bounds=Bounds(-1.0, 1.0, -1.0, 1.0), meta={**scene.meta, "units": "model"},
    )


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg: RunConfig, args) -> int:
    manifest = _manifest(cfg)
    bounds = Bounds(0.0, cfg.court_width, 0.0, cfg.court_height)
    sampler = _mask_sampler(cfg)
    with dir_lock(cfg.data_dir):
        names = []
        for i in range(cfg.n_scenes):
            rng = np.random.default_rng(_item_seed(cfg, _GEN, i))
            scene = generate_scene(cfg.T, cfg.N, cfg.dynamics(), rng, bounds, cfg.dt)
            scene = with_mask(scene, sampler(cfg.T, cfg.N, rng))
            scene.meta["manifest"] = manifest
            name = f"scene_{i:04d}.u2s"
            write_scene(os.path.join(cfg.data_dir, name), scene)
            names.append(name)
        n_train = max(1, min(cfg.n_scenes - 1, int(round(cfg.n_scenes * cfg.train_frac))))
        for which, chunk in (("train", names[:n_train]), ("test", names[n_train:])):
            with open(os.path.join(cfg.data_dir, f"{which}.txt"), "w") as fh:
                fh.write("\n".join(chunk) + "\n")
    print(f"wrote {cfg.n_scenes} scenes to {cfg.data_dir} "
          f"({n_train} train, {cfg.n_scenes - n_train} test)")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    scenes = [sc for _, sc in _split_scenes(cfg, "train")]
    norm_scenes, amap = normalize(scenes)
    with dir_lock(os.path.dirname(os.path.abspath(cfg.checkpoint))):
        result = train_denoiser(
            norm_scenes, _mask_sampler(cfg), cfg.schedule(), cfg.denoiser_config(),
            cfg.seed, log_fn=lambda e, v: print(f"epoch {e} loss {v:.6f}"),
        )
        header = {
            "kind": "denoiser",
            "config": asdict(cfg.denoiser_config()),
            "schedule": _schedule_header(cfg),
            "normalization": asdict(amap.bounds),
            "manifest": _manifest(cfg),
        }
        save_checkpoint(cfg.checkpoint, header, state_to_arrays(result.model))
    print(f"saved checkpoint {cfg.checkpoint} (final loss {result.losses[-1]:.6f})")
    return 0


def cmd_sample(cfg: RunConfig, args) -> int:
    model, schedule, amap = _load_denoiser(cfg.checkpoint, s_hat=cfg.s_hat)
    noise_fn = model.as_noise_fn()
    manifest = _manifest(cfg)
    with dir_lock(cfg.out_dir):
        for i, path in enumerate(args.files):
            scene = read_scene(path)
            x_model = amap.to_model(scene.x)
            x_obs = x_model * scene.mask[..., None]
            modes = generate_modes(
                noise_fn, x_obs, scene.mask, schedule, cfg.K, _item_seed(cfg, _SAMPLE, i)
            )
            court = ModeSet(
                fields=[
                    PosteriorField(amap.to_court(f.mean), amap.var_to_court(f.var))
                    for f in modes.fields
                ]
            )
            stem = os.path.splitext(os.path.basename(path))[0]
            out_path = os.path.join(cfg.out_dir, f"{stem}.u2m")
            write_modeset(
                out_path, court, scene.mask, scene.dt, scene.bounds,
                meta={"units": "court", "scene": os.path.basename(path), "manifest": manifest},
            )
            print(f"wrote {out_path} ({cfg.K} modes)")
    return 0


def _resolve_scene(modeset_path: str, meta: dict, cfg: RunConfig) -> Scene:
    name = meta.get("scene")
    if not name:
        raise ParseError(f"{modeset_path} header lacks a scene= reference")
    for base in (os.path.dirname(modeset_path), cfg.data_dir):
        candidate = os.path.join(base, name)
        if os.path.exists(candidate):
            return read_scene(candidate)
    raise ConfigError(f"scene file {name!r} referenced by {modeset_path} not found")


def cmd_eval(cfg: RunConfig, args) -> int:
    agg = {k: [] for k in ("min_ade", "min_fde", "min_sade", "min_sfde", "acc_rate", "nll")}
    rhos: list[float] = []
    for path in args.files:
        modes, mask, meta = read_modeset(path)
        scene = _resolve_scene(path, meta, cfg)
        gt = scene.x
        msade, best = min_sade_k(modes, gt, mask)
        agg["min_sade"].append(msade)
        agg["min_sfde"].append(min_sfde_k(modes, gt, mask)[0])
        agg["min_ade"].append(min_ade_k(modes, gt, mask))
        agg["min_fde"].append(min_fde_k(modes, gt, mask))
        agg["acc_rate"].append(acc_rate(modes.fields[best], gt, mask))
        agg["nll"].append(gaussian_nll(modes.fields[best], gt, mask))
        if modes.K >= 2:
            sades = [sade(f.mean, gt, mask) for f in modes.fields]
            scores = modes.e if modes.e is not None else [avg_ucty(f) for f in modes.fields]
            try:
                rhos.append(spearman(scores, sades))
            except DegenerateCorrelationError:
                pass
    report = EvalReport(
        min_ade=float(np.mean(agg["min_ade"])),
        min_fde=float(np.mean(agg["min_fde"])),
        min_sade=float(np.mean(agg["min_sade"])),
        min_sfde=float(np.mean(agg["min_sfde"])),
        acc_rate=float(np.mean(agg["acc_rate"])),
        nll=float(np.mean(agg["nll"])),
        per_scene_rho=rhos,
    )
    text = report.to_text(header=f"# u2traj eval manifest={_manifest(cfg)} scenes={len(args.files)}")
    report_path = cfg.report_path()
    with dir_lock(os.path.dirname(os.path.abspath(report_path))):
        with open(report_path, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_rank_train(cfg: RunConfig, args) -> int:
    model, schedule, amap = _load_denoiser(cfg.checkpoint, s_hat=cfg.s_hat)
    scenes = [_to_model_units(sc, amap) for _, sc in _split_scenes(cfg, "train")]
    if cfg.rank_scenes:
        scenes = scenes[: cfg.rank_scenes]
    with dir_lock(os.path.dirname(os.path.abspath(cfg.rank_checkpoint))):
        result = train_ranknn(
            model, scenes, schedule, cfg.rank_config(), cfg.seed,
            log_fn=lambda e, v: print(f"epoch {e} neg-rho {v:.6f}"),
        )
        header = {
            "kind": "ranknn",
            "config": asdict(cfg.rank_config()),
            "manifest": _manifest(cfg),
        }
        save_checkpoint(cfg.rank_checkpoint, header, state_to_arrays(result.model))
    print(f"saved rank checkpoint {cfg.rank_checkpoint} (final loss {result.losses[-1]:.6f})")
    return 0


def cmd_rank_eval(cfg: RunConfig, args) -> int:
    model, schedule, amap = _load_denoiser(cfg.checkpoint, s_hat=cfg.s_hat)
    rank = _load_ranknn(cfg.rank_checkpoint)
    noise_fn = model.as_noise_fn()
    rho_e, rho_au = [], []
    for i, (_, scene) in enumerate(_split_scenes(cfg, "test")):
        sc = _to_model_units(scene, amap)
        modes = generate_modes(
            noise_fn, sc.x_obs(), sc.mask, schedule, cfg.K, _item_seed(cfg, _RANKEVAL, i)
        )
        sades = [sade(f.mean, sc.x, sc.mask) for f in modes.fields]
        with torch.no_grad():
            e = rank(build_rank_input(modes, sc.mask)).double().numpy()
        au = [avg_ucty(f) for f in modes.fields]
        try:
            rho_e.append(spearman(e, sades))
            rho_au.append(spearman(au, sades))
        except DegenerateCorrelationError:
            pass
    lines = [
        f"# u2traj rank-eval manifest={_manifest(cfg)} scenes={len(rho_e)}",
        f"rho_e_mean = {np.mean(rho_e):.6f}",
        f"rho_e_median = {np.median(rho_e):.6f}",
        f"rho_avgucty_mean = {np.mean(rho_au):.6f}",
        f"rho_avgucty_median = {np.median(rho_au):.6f}",
    ]
    text = "\n".join(lines) + "\n"
    report_path = cfg.report_path()
    with dir_lock(os.path.dirname(os.path.abspath(report_path))):
        with open(report_path, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_sweep_shat(cfg: RunConfig, args) -> int:
    model, schedule0, amap = _load_denoiser(cfg.checkpoint)
    noise_fn = model.as_noise_fn()
    scenes = [sc for _, sc in _split_scenes(cfg, "test")]
    # sweep the variance onset over the deterministic-jump source steps
    # (starting below the last one would leave every state at zero variance)
    shats = [src for src, dst in reverse_chain_steps(schedule0) if dst != 0]
    rows = []
    for s_hat in shats:
        schedule = make_schedule(
            schedule0.S, cfg.beta_start, cfg.beta_end, schedule0.zeta, s_hat
        )
        nll_unobs, nll_obs = [], []
        for i, scene in enumerate(scenes):
            sc = _to_model_units(scene, amap)
            field = sample_mode(
                noise_fn, sc.x_obs(), sc.mask, schedule, _item_seed(cfg, _SWEEP, i)
            )
            court = PosteriorField(amap.to_court(field.mean), amap.var_to_court(field.var))
            nll_unobs.append(gaussian_nll(court, scene.x, scene.mask))
            nll_obs.append(gaussian_nll(court, scene.x, 1.0 - scene.mask))
        rows.append((s_hat, float(np.mean(nll_unobs)), float(np.mean(nll_obs))))
    lines = [f"# u2traj sweep-shat manifest={_manifest(cfg)} scenes={len(scenes)}"]
    lines.append("s_hat nll_unobserved nll_observed")
    for s_hat, nu, no in rows:
        lines.append(f"{s_hat} {nu:.6f} {no:.6f}")
    text = "\n".join(lines) + "\n"
    with dir_lock(cfg.out_dir):
        with open(os.path.join(cfg.out_dir, "shat_sweep.txt"), "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_plot(cfg: RunConfig, args) -> int:
    modes, mask, meta = read_modeset(args.modeset)
    scene = _resolve_scene(args.modeset, meta, cfg)
    scene = with_mask(scene, mask)
    sades = [sade(f.mean, scene.x, mask) for f in modes.fields]
    best = int(np.argmin(sades))
    stem = os.path.splitext(os.path.basename(args.modeset))[0]
    with dir_lock(cfg.out_dir):
        outputs = []
        traj = trajectory_svg(
            scene, modes.fields[best],
            title=f"{stem}: best of {modes.K} modes (SADE {sades[best]:.3f})",
        )
        path = os.path.join(cfg.out_dir, f"{stem}_trajectory.svg")
        with open(path, "w") as fh:
            fh.write(traj)
        outputs.append(path)
        if modes.K >= 2:
            au = np.array([avg_ucty(f) for f in modes.fields])
            figures = [("avgucty", {"AvgUcty": (au, np.array(sades))}, "AvgUcty")]
            if modes.e is not None:
                figures.append(("e", {"e": (modes.e, np.array(sades))}, "error probability"))
            for tag, series, label in figures:
                svg = scatter_svg(series, x_label=label, y_label="SADE",
                                  title=f"{stem}: {label} vs SADE")
                path = os.path.join(cfg.out_dir, f"{stem}_{tag}_sade.svg")
                with open(path, "w") as fh:
                    fh.write(svg)
                outputs.append(path)
    for path in outputs:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="u2traj",
        description="uncertainty-aware diffusion for multi-agent trajectory completion",
    )
    parser.add_argument("--version", action="version", version=f"u2traj {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, files=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key=value run configuration file")
        if files:
            p.add_argument("files", nargs="+", help="input files")
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "generate a synthetic scene dataset with masks")
    add("train", cmd_train, "train the denoiser and write a checkpoint")
    add("sample", cmd_sample, "complete scenes: K modes per input scene file", files=True)
    add("eval", cmd_eval, "evaluate mode-set files against their scenes", files=True)
    add("rank-train", cmd_rank_train, "train the mode-ranking network")
    add("rank-eval", cmd_rank_eval, "rank-correlation report on the test split")
    add("sweep-shat", cmd_sweep_shat, "NLL as a function of the variance start step")
    plot = sub.add_parser("plot", help="emit trajectory and scatter SVG figures")
    plot.add_argument("--config", required=True)
    plot.add_argument("--modeset", required=True, help="mode-set file to plot")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        torch.set_num_threads(thread_count())
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except (ConfigError, ParameterError, DimensionError, DomainError, StepRangeError) as exc:
        print(f"u2traj: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, OSError) as exc:
        print(f"u2traj: I/O error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"u2traj: numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
