"""Synthetic multi-agent scenes and the court/model unit conversion.

The generator is a desk-scale stand-in for real tracking data: N-1 "player"
agents follow smooth mean-reverting paths pulled toward periodically
re-drawn waypoints, reflected at the court boundary; the last agent is a
"ball" that chases a randomly switching possessor with overshoot noise, so
scenes carry the ball-possessor structure that makes completion non-trivial.

Model-side code operates in model units ([-1, 1] per axis); the affine map
built by :func:`normalize` is the only place the two unit systems
interconvert.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError

__all__ = [
    "Bounds",
    "DynamicsParams",
    "Scene",
    "AffineMap",
    "DatasetSplit",
    "generate_scene",
    "normalize",
    "split_dataset",
    "with_mask",
]

# basketball-like defaults: court meters, 0.16 s per frame
DEFAULT_BOUNDS = (0.0, 28.65, 0.0, 15.24)
DEFAULT_DT = 0.16


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned court rectangle."""

    x_min: float = DEFAULT_BOUNDS[0]
    x_max: float = DEFAULT_BOUNDS[1]
    y_min: float = DEFAULT_BOUNDS[2]
    y_max: float = DEFAULT_BOUNDS[3]

    def validate(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ParameterError(f"degenerate bounds {self}")

    def lows(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min])

    def highs(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max])

    def union(self, other: "Bounds") -> "Bounds":
        return Bounds(
            min(self.x_min, other.x_min),
            max(self.x_max, other.x_max),
            min(self.y_min, other.y_min),
            max(self.y_max, other.y_max),
        )


@dataclass(frozen=True)
class DynamicsParams:
    """Knobs of the synthetic scene generator (court units, seconds)."""

    v_max: float = 6.0            # per-agent speed cap
    accel_std: float = 2.5        # random acceleration, m/s per sqrt(frame)
    damping: float = 0.88         # velocity retained per frame
    waypoint_pull: float = 1.8    # acceleration toward the waypoint, 1/s^2-ish
    waypoint_frames: int = 18     # mean frames between waypoint re-draws
    ball_gain: float = 0.55       # fraction of ball-possessor offset closed per frame
    ball_noise: float = 0.25      # ball jitter per frame
    attach_radius: float = 1.5    # "attached" distance used in diagnostics
    possession_frames: int = 22   # mean frames between possession switches
    margin: float = 0.5           # waypoint inset from the bounds


@dataclass
class Scene:
    """One multi-agent sequence with its conditioning mask."""

    x: np.ndarray          # (T, N, 2) ground-truth positions
    mask: np.ndarray       # (T, N) in {0, 1}; 1 = observed
    dt: float = DEFAULT_DT
    bounds: Bounds = field(default_factory=Bounds)
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def N(self) -> int:
        return self.x.shape[1]

    def x_obs(self) -> np.ndarray:
        """Observed tensor: positions with unobserved entries zeroed."""
        return self.x * self.mask[..., None]


def generate_scene(
    T: int,
    N: int,
    params: DynamicsParams = DynamicsParams(),
    rng: np.random.Generator | None = None,
    bounds: Bounds = Bounds(),
    dt: float = DEFAULT_DT,
) -> Scene:
    """Simulate one scene: N-1 players plus a possessor-chasing ball."""
    if T < 2 or N < 2:
        raise ParameterError(f"need T >= 2 and N >= 2, got T={T}, N={N}")
    bounds.validate()
    if rng is None:
        rng = np.random.default_rng()

    lo, hi = bounds.lows(), bounds.highs()
    n_players = N - 1
    pos = rng.uniform(lo + params.margin, hi - params.margin, size=(n_players, 2))
    vel = rng.normal(0.0, 1.0, size=(n_players, 2))
    waypoints = rng.uniform(lo + params.margin, hi - params.margin, size=(n_players, 2))
    switch_p = 1.0 / params.waypoint_frames
    possess_p = 1.0 / params.possession_frames

    possessor = int(rng.integers(n_players))
    ball = pos[possessor] + rng.normal(0.0, 0.3, size=2)

    x = np.empty((T, N, 2))
    for t in range(T):
        x[t, :n_players] = pos
        x[t, n_players] = np.clip(ball, lo, hi)

        redraw = rng.random(n_players) < switch_p
        if redraw.any():
            waypoints[redraw] = rng.uniform(
                lo + params.margin, hi - params.margin, size=(int(redraw.sum()), 2)
            )
        accel = params.waypoint_pull * (waypoints - pos) * dt
        accel += rng.normal(0.0, params.accel_std, size=(n_players, 2))
        vel = params.damping * vel + accel * dt * 10.0
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        vel = np.where(speed > params.v_max, vel * params.v_max / speed, vel)
        pos = pos + vel * dt
        # reflect at the boundary, flipping the offending velocity component
        for axis in range(2):
            low, high = lo[axis], hi[axis]
            under = pos[:, axis] < low
            over = pos[:, axis] > high
            pos[under, axis] = 2 * low - pos[under, axis]
            pos[over, axis] = 2 * high - pos[over, axis]
            vel[under | over, axis] *= -1.0
        pos = np.clip(pos, lo, hi)

        if rng.random() < possess_p:
            possessor = int(rng.integers(n_players))
        ball = ball + params.ball_gain * (pos[possessor] - ball)
        ball = ball + rng.normal(0.0, params.ball_noise, size=2)
        ball = np.clip(ball, lo, hi)

    return Scene(x=x, mask=np.ones((T, N)), dt=dt, bounds=bounds, meta={})


@dataclass(frozen=True)
class AffineMap:
    """Per-axis affine map between court units and model units [-1, 1]."""

    bounds: Bounds

    def _center_half(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.bounds.lows(), self.bounds.highs()
        return (lo + hi) / 2.0, (hi - lo) / 2.0

    def to_model(self, x: np.ndarray) -> np.ndarray:
        center, half = self._center_half()
        return (np.asarray(x, dtype=np.float64) - center) / half

    def to_court(self, x: np.ndarray) -> np.ndarray:
        center, half = self._center_half()
        return np.asarray(x, dtype=np.float64) * half + center

    def var_to_court(self, var: np.ndarray) -> np.ndarray:
        _, half = self._center_half()
        return np.asarray(var, dtype=np.float64) * half**2

    def var_to_model(self, var: np.ndarray) -> np.ndarray:
        _, half = self._center_half()
        return np.asarray(var, dtype=np.float64) / half**2


def normalize(scenes: list[Scene]) -> tuple[list[Scene], AffineMap]:
    """Map a scene list to model units with one dataset-wide affine map.

    The map sends the union of the scenes' declared bounds to [-1, 1] per
    axis; corners map to exactly +-1 and the inverse recovers court units.
    """
    if not scenes:
        raise ParameterError("cannot normalize an empty scene list")
    bounds = scenes[0].bounds
    for sc in scenes[1:]:
        bounds = bounds.union(sc.bounds)
    bounds.validate()
    amap = AffineMap(bounds)
    out = []
    for sc in scenes:
        out.append(
            Scene(
                x=amap.to_model(sc.x),
                mask=sc.mask.copy(),
                dt=sc.dt,
                bounds=Bounds(-1.0, 1.0, -1.0, 1.0),
                meta={**sc.meta, "units": "model"},
            )
        )
    return out, amap


@dataclass
class DatasetSplit:
    """Disjoint train/test scene lists plus the shared unit map."""

    train: list[Scene]
    test: list[Scene]
    normalization: AffineMap


def split_dataset(scenes: list[Scene], train_frac: float = 0.8) -> DatasetSplit:
    """Deterministic prefix split in court units, with the dataset-wide map."""
    if not scenes:
        raise ParameterError("cannot split an empty scene list")
    if not 0.0 < train_frac < 1.0:
        raise ParameterError(f"train_frac must lie in (0, 1), got {train_frac}")
    n_train = max(1, min(len(scenes) - 1, int(round(len(scenes) * train_frac))))
    _, amap = normalize(scenes)
    return DatasetSplit(train=scenes[:n_train], test=scenes[n_train:], normalization=amap)


def with_mask(scene: Scene, mask: np.ndarray) -> Scene:
    """Copy of the scene with a new conditioning mask."""
    return replace(scene, mask=np.asarray(mask, dtype=np.float64))
